# Pre-train on recurring spans, fine-tune on a small synthetic corpus,
# evaluate, then re-score with paraphrased schema descriptions.
# Takes a minute or two on one core.
import logging
from dataclasses import replace

from splat.config import desk_config
from splat.dst_data import Corpus, evaluate, swap_schema_variant, validate
from splat.schema_input import build_vocab, dialogue_texts, schema_texts
from splat.synth import gen_synth, schema_variant
from splat.training import predict_corpus, pretrain_rss, sized_encoder, train

logging.basicConfig(level=logging.WARNING, format="%(message)s")

schemas, dialogues, docs = gen_synth(seed=0, n_services=2, n_dialogues=16)
variant = schema_variant(seed=0, n_services=2, variant=1)
sc = {s.service_name: s for s in schemas}
corpus = Corpus(sc, dialogues, validate(sc, dialogues))
vocab = build_vocab(list(schema_texts(schemas)) + list(schema_texts(variant))
                    + list(dialogue_texts(dialogues)) + docs)
print(f"{len(dialogues)} dialogues, {len(docs)} documents, vocabulary {len(vocab)}")

cfg = desk_config()
enc = cfg.encoder
opt = replace(cfg.optimizer, epochs=6)

pre = pretrain_rss(docs, vocab, enc, cfg.head, replace(cfg.pretrain, steps=60), seed=0)
print(f"span-selection loss {pre.losses[0]:.3f} -> {pre.losses[-1]:.3f}")

res = train(corpus, vocab, enc, cfg.head, opt, seed=0, init=pre.params)
for h in res.history:
    print(f"epoch {h['epoch']:2d}  loss {h['loss']:.3f}  jga {h['train_jga']:.3f}  "
          f"intent {h['train_intent_accuracy']:.3f}")
print(res.report.table())

# same parameters, schema descriptions swapped for paraphrases
swapped = swap_schema_variant(corpus, {s.service_name: s for s in variant})
preds = predict_corpus(res.params, swapped, vocab, sized_encoder(enc, vocab), cfg.head.l_ans)
var = evaluate(preds, swapped)
print(f"original jga {res.report.jga:.3f}  paraphrased jga {var.jga:.3f}  "
      f"drop {res.report.jga - var.jga:+.3f}")
print(schemas[0].intents[0].description, "|", variant[0].intents[0].description)
