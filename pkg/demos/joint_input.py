# What the encoder actually reads: one dialogue history plus one service schema.
from splat.heads import enumerate_spans, history_span_count
from splat.schema_input import assemble, build_vocab, dialogue_texts, schema_texts
from splat.synth import gen_synth

schemas, dialogues, _ = gen_synth(seed=0, n_services=2, n_dialogues=4)
vocab = build_vocab(list(schema_texts(schemas)) + list(dialogue_texts(dialogues)))
dlg = dialogues[0]
schema = next(s for s in schemas if s.service_name == dlg.services[0])

for t in dlg.turns:
    print(f"{t.speaker:>6}: {t.text}")
print()

ji = assemble(dlg, schema, vocab)
# upper case = globally attended (shared targets and the description region)
print(" ".join(tok.upper() if g else tok for tok, g in zip(ji.tokens, ji.global_mask)))
print()
print("tokens:", len(ji), " global:", int(ji.global_mask.sum()))
print("[UTT] positions:", ji.utt_positions)
print("intents:", list(zip(ji.intent_names, ji.intent_positions)))
print("slots:", list(zip(ji.slot_names, ji.slot_positions)))
print("categorical value spans:", ji.slot_value_regions)

# every history span up to 30 tokens long is a candidate answer, plus [NONE],
# [DONTCARE] and the enumerated values of categorical slots
cands = enumerate_spans(ji, 30)
h0, h1 = ji.history_region
print(f"history of {h1 - h0} tokens -> {history_span_count(h1 - h0, 30)} history spans; "
      f"{len(cands)} candidates in all")

# the last user turn's gold state
print(dlg.turns[-1 if dlg.turns[-1].speaker == "user" else -2].state)
