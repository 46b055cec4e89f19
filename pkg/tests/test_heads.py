import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splat import heads
from splat import numerics as nx
from splat.attention import EncoderConfig
from splat.heads import (
    CATEGORICAL, HISTORY, SHARED, HeadConfig, UnresolvableGoldError, decode_state, enumerate_spans,
    history_span_count, init_head_params, intent_loss, joint_loss, project_utterances_and_intents,
    region_spans, resolve_slot_targets, slot_loss, slot_query_representations, span_representations,
)
from splat.model import dst_loss, init_params, make_example, predict
from splat.numerics import ParamStore, Tensor
from splat.schema_input import (
    DONTCARE, Dialogue, DialogueState, Intent, ServiceSchema, Slot, Turn, assemble, build_vocab,
    dialogue_texts, schema_texts,
)


def ce(scores, gold):
    """Cross-entropy written out term by term."""
    z = sum(math.exp(s) for s in scores)
    return -(scores[gold] - math.log(z))


def toy():
    schema = ServiceSchema("Travel", [Intent("Search", "find a flight"), Intent("Book", "book a seat")], [
        Slot("to_location", "destination city", False, []),
        Slot("refundable", "refund possible", True, ["yes", "no"]),
    ])
    turns = [
        Turn("user", "i need to fly to long beach , ca", {"Travel": DialogueState("Search", {"to_location": "Long Beach, CA"})}),
        Turn("system", "refundable ?"),
        Turn("user", "yes please", {"Travel": DialogueState("Book", {"to_location": "Long Beach, CA", "refundable": "yes"})}),
    ]
    dlg = Dialogue("toy", ["Travel"], turns)
    vocab = build_vocab(list(schema_texts([schema])) + list(dialogue_texts([dlg])))
    return schema, dlg, vocab


# --- span enumeration -------------------------------------------------------

def test_region_of_four_with_cap_two():
    assert len(region_spans(0, 4, 2)) == 7
    assert history_span_count(4, 2) == 7


def test_region_of_three_uncapped():
    assert history_span_count(3, 30) == 6


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 80), st.integers(1, 40))
def test_span_count_formula(n, l_ans):
    brute = sum(1 for s in range(n) for e in range(s, n) if e - s + 1 <= l_ans)
    assert history_span_count(n, l_ans) == brute == len(region_spans(0, n, l_ans))


def test_candidate_layout():
    schema, dlg, vocab = toy()
    ji = assemble(dlg, schema, vocab)
    c = enumerate_spans(ji, 5)
    assert [s.region_tag for s in c.spans[:2]] == [SHARED, SHARED]
    assert sum(s.region_tag == SHARED for s in c) == 2
    h0, h1 = ji.history_region
    assert c.n_history == history_span_count(h1 - h0, 5)
    for s in c:
        assert s.start <= s.end and s.end - s.start + 1 <= 5
        if s.region_tag == HISTORY:
            assert h0 <= s.start and s.end < h1
    cat = [s for s in c if s.region_tag == CATEGORICAL]
    assert [s.value for s in cat] == ["yes", "no"]
    # The categorical slot only sees shared targets and its own values.
    q = ji.slot_names.index("refundable")
    assert [c[i].region_tag for i in c.slot_candidates[q]] == [SHARED, SHARED, CATEGORICAL, CATEGORICAL]
    q = ji.slot_names.index("to_location")
    assert all(c[i].region_tag != CATEGORICAL for i in c.slot_candidates[q])


# --- intent head ------------------------------------------------------------

def _head_params(d=8, seed=0):
    ps = ParamStore(seed)
    init_head_params(ps, HeadConfig(d_model=d, d_hidden=d))
    return ps


def test_projection_shapes():
    ps = _head_params()
    E = np.random.default_rng(0).standard_normal((10, 8))
    hu, hi = project_utterances_and_intents(E, [1, 4], [6, 7, 8], ps)
    assert hu.shape == (2, 8) and hi.shape == (3, 8)


def test_projection_with_zero_weights_is_layer_norm_of_bias():
    ps = _head_params()
    for k in ("in.W", "out.W"):
        ps[f"utt_head.ffn.{k}"].data[:] = 0.0
    ps["utt_head.ffn.out.b"].data[:] = np.arange(8.0)
    ps["utt_head.ln.gain"].data[:] = 1.0
    E = np.random.default_rng(1).standard_normal((6, 8))
    hu, _ = project_utterances_and_intents(E, [0, 3, 5], [1], ps)
    b = np.arange(8.0)
    expect = (b - b.mean()) / np.sqrt(b.var() + 1e-5)
    for row in hu.data:
        assert np.max(np.abs(row - expect)) < 1e-12


def test_intent_loss_uniform():
    loss = intent_loss(np.zeros((1, 4)), np.zeros((2, 4)), [0])
    assert abs(float(loss.data) - math.log(2)) < 1e-15


def test_intent_loss_confident():
    hi = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert float(intent_loss(100 * hi[[1]], hi, [1]).data) < 1e-10


def test_intent_loss_matches_direct_formula():
    rng = np.random.default_rng(2)
    hu, hi = rng.standard_normal((3, 5)), rng.standard_normal((4, 5))
    gold = [2, 0, 3]
    expect = np.mean([ce([float(hu[i] @ hi[j]) for j in range(4)], gold[i]) for i in range(3)])
    assert abs(float(intent_loss(hu, hi, gold).data) - expect) < 1e-12


def test_intent_loss_missing_gold():
    with pytest.raises(ValueError):
        intent_loss(np.zeros((2, 3)), np.zeros((2, 3)), [0, None])


def test_intent_head_gradient_check():
    ps = _head_params(seed=4)
    E = np.random.default_rng(5).standard_normal((9, 8))
    names = [k for k in ps if k.startswith(("utt_head", "intent_head"))]
    err, _ = nx.grad_check(lambda p: intent_loss(*project_utterances_and_intents(E, [0, 4], [6, 7, 8], p), [1, 2]),
                           ps, names=names, n_coords=150)
    assert err < 1e-4


# --- span pointer -----------------------------------------------------------

def _cands(pairs):
    return heads.CandidateSet([heads.SpanCandidate(s, e, HISTORY) for s, e in pairs], [], len(pairs))


def test_span_representation_matches_explicit_concatenation():
    ps = _head_params(seed=6)
    E = np.random.default_rng(7).standard_normal((6, 8))
    pairs = [(0, 0), (1, 3), (2, 5), (4, 4)]
    out = span_representations(E, _cands(pairs), ps).data

    def layer(x, li):
        h = x @ ps[f"span_head.layer{li}.W"].data + ps[f"span_head.layer{li}.b"].data
        h = 0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h**3)))
        mu, var = h.mean(-1, keepdims=True), h.var(-1, keepdims=True)
        return (h - mu) / np.sqrt(var + 1e-5) * ps[f"span_head.layer{li}.ln.gain"].data + ps[f"span_head.layer{li}.ln.bias"].data

    y = np.stack([np.concatenate([E[s], E[e]]) for s, e in pairs])
    assert np.max(np.abs(out - layer(layer(y, 0), 1))) < 1e-12


def test_span_representation_endpoints_only():
    ps = _head_params(seed=8)
    E = np.random.default_rng(9).standard_normal((7, 8))
    c = _cands([(1, 5), (1, 5), (2, 2)])
    a = span_representations(E, c, ps).data
    assert np.array_equal(a[0], a[1])
    E2 = E.copy()
    E2[[2, 3, 4]] = E2[[4, 2, 3]]
    b = span_representations(E2, c, ps).data
    assert np.max(np.abs(a[0] - b[0])) == 0.0


def test_slot_queries():
    ps = _head_params(seed=10)
    E = np.random.default_rng(11).standard_normal((5, 8))
    E[3] = E[1]
    h = slot_query_representations(E, [1, 2, 3], ps).data
    assert h.shape == (3, 8)
    assert np.array_equal(h[0], h[2])


def test_slot_head_gradient_check():
    ps = _head_params(seed=12)
    E = np.random.default_rng(13).standard_normal((8, 8))
    c = _cands([(0, 0), (1, 1), (2, 4), (3, 7), (5, 6)])
    names = [k for k in ps if k.startswith(("span_head", "slot_head"))]
    f = lambda p: slot_loss(slot_query_representations(E, [5, 6], p), span_representations(E, c, p), [2, 4])
    err, _ = nx.grad_check(f, ps, names=names, n_coords=200)
    assert err < 1e-4


def test_slot_loss_uniform_and_confident():
    assert abs(float(slot_loss(np.zeros((1, 3)), np.zeros((2, 3)), [1]).data) - math.log(2)) < 1e-15
    hs = np.array([[1.0, 0.0]])
    hspan = np.array([[0.0, 0.0], [100.0, 0.0]])
    assert float(slot_loss(hs, hspan, [1]).data) < 1e-10


def test_slot_loss_matches_direct_formula():
    rng = np.random.default_rng(14)
    hs, hspan = rng.standard_normal((3, 4)), rng.standard_normal((10, 4))
    cands = [np.arange(10), np.array([0, 1, 7, 8]), np.array([0, 1, 2, 3, 4])]
    gold = [6, 8, 0]
    expect = np.mean([ce([float(hs[q] @ hspan[j]) for j in cands[q]], list(cands[q]).index(gold[q]))
                      for q in range(3)])
    assert abs(float(slot_loss(hs, hspan, gold, cands).data) - expect) < 1e-12


def test_slot_loss_rejects_unpermitted_gold():
    with pytest.raises(UnresolvableGoldError):
        slot_loss(np.zeros((1, 2)), np.zeros((4, 2)), [3], [np.array([0, 1, 2])])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_losses_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    hs, hspan = rng.standard_normal((2, 4)), rng.standard_normal((7, 4))
    gold = list(rng.integers(0, 7, 2))
    perm = rng.permutation(7)
    inv = np.argsort(perm)
    a = float(slot_loss(hs, hspan, gold).data)
    b = float(slot_loss(hs, hspan[perm], [int(inv[g]) for g in gold]).data)
    assert abs(a - b) < 1e-12
    hu = rng.standard_normal((3, 4))
    ig = list(rng.integers(0, 7, 3))
    a = float(intent_loss(hu, hspan, ig).data)
    b = float(intent_loss(hu, hspan[perm], [int(inv[g]) for g in ig]).data)
    assert abs(a - b) < 1e-12


@pytest.mark.parametrize("a,b,expect", [(1.0, 0.5, 0.75), (0.0, 0.0, 0.0)])
def test_joint_loss(a, b, expect):
    assert float(joint_loss(Tensor(np.array(a)), Tensor(np.array(b))).data) == expect


def test_joint_loss_random_pairs():
    for a, b in np.random.default_rng(15).uniform(0, 10, (20, 2)):
        assert abs(float(joint_loss(Tensor(np.array(a)), Tensor(np.array(b))).data) - (a + b) / 2) < 1e-15


# --- targets and decoding ---------------------------------------------------

def test_resolve_targets():
    schema, dlg, vocab = toy()
    ji = assemble(dlg, schema, vocab)
    c = enumerate_spans(ji, 30)
    gold = resolve_slot_targets(ji, c, dlg.turns[2].state["Travel"])
    span = c[gold[0]]
    assert ji.tokens[span.start : span.end + 1] == ["long", "beach", ",", "ca"]
    assert c[gold[1]].value == "yes"
    assert resolve_slot_targets(ji, c, DialogueState("Search", {})) == [0, 0]
    assert resolve_slot_targets(ji, c, DialogueState("Search", {"refundable": DONTCARE})) == [0, 1]


def test_resolve_targets_unreachable():
    schema, dlg, vocab = toy()
    ji = assemble(dlg, schema, vocab)
    c = enumerate_spans(ji, 30)
    with pytest.raises(UnresolvableGoldError, match="to_location"):
        resolve_slot_targets(ji, c, DialogueState("Search", {"to_location": "paris"}))
    with pytest.raises(UnresolvableGoldError, match="to_location"):
        resolve_slot_targets(ji, c, DialogueState("Search", {"to_location": "long beach , ca"}), l_ans=2)


def _rig(ji, c, slot_choice, intent_choice):
    d = len(c) + len(ji.intent_names)
    h_span = np.eye(d)[: len(c)]
    h_int = np.eye(d)[len(c):]
    h_slot = np.zeros((len(ji.slot_names), d))
    for q, k in enumerate(slot_choice):
        h_slot[q, k] = 1.0
    h_utt = np.zeros((len(ji.utt_positions), d))
    h_utt[-1, len(c) + intent_choice] = 1.0
    return decode_state(h_utt, h_int, h_slot, h_span, ji, c)


def test_decode_all_none():
    schema, dlg, vocab = toy()
    ji = assemble(dlg, schema, vocab)
    c = enumerate_spans(ji, 30)
    st_ = _rig(ji, c, [0, 0], 0)
    assert st_.slot_values == {} and st_.active_intent == "Search"


def test_decode_rigged_history_span_and_none_intent():
    schema, dlg, vocab = toy()
    ji = assemble(dlg, schema, vocab)
    c = enumerate_spans(ji, 30)
    target = next(i for i, s in enumerate(c) if s.region_tag == HISTORY
                  and ji.tokens[s.start : s.end + 1] == ["long", "beach", ",", "ca"])
    q = ji.slot_names.index("refundable")
    st_ = _rig(ji, c, [target, int(c.slot_candidates[q][3])], ji.intent_names.index("NONE"))
    assert st_.slot_values == {"to_location": "long beach , ca", "refundable": "no"}
    assert st_.active_intent == "NONE"


def test_decode_ties_prefer_lowest_index():
    schema, dlg, vocab = toy()
    ji = assemble(dlg, schema, vocab)
    c = enumerate_spans(ji, 30)
    d = 4
    st_ = decode_state(np.zeros((2, d)), np.zeros((3, d)), np.zeros((2, d)), np.zeros((len(c), d)), ji, c)
    assert st_.slot_values == {} and st_.active_intent == ji.intent_names[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_decode_shift_invariance_and_categorical_range(seed, shift):
    schema, dlg, vocab = toy()
    ji = assemble(dlg, schema, vocab)
    c = enumerate_spans(ji, 30)
    rng = np.random.default_rng(seed)
    d = 6
    h_slot, h_span = rng.standard_normal((2, d)), rng.standard_normal((len(c), d))
    h_utt, h_int = rng.standard_normal((2, d)), rng.standard_normal((3, d))
    base = decode_state(h_utt, h_int, h_slot, h_span, ji, c)
    assert base.slot_values.get("refundable", "yes") in ("yes", "no", DONTCARE)
    # A constant added to every score of one slot: append a unit coordinate to
    # the query and a constant column to every candidate.
    hs2 = np.hstack([h_slot, [[1.0], [0.0]]])
    hp2 = np.hstack([h_span, np.full((len(c), 1), shift)])
    moved = decode_state(np.hstack([h_utt, np.zeros((2, 1))]), np.hstack([h_int, np.zeros((3, 1))]),
                         hs2, hp2, ji, c)
    assert moved == base
    s1 = h_slot @ h_span.T
    s2 = hs2 @ hp2.T
    cols = c.slot_candidates[0]
    p1 = np.exp(s1[0, cols] - s1[0, cols].max())
    p2 = np.exp(s2[0, cols] - s2[0, cols].max())
    assert np.max(np.abs(p1 / p1.sum() - p2 / p2.sum())) < 1e-10


# --- end to end -------------------------------------------------------------

def test_end_to_end_gradient_check():
    schema, dlg, vocab = toy()
    enc = EncoderConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16, window_w=4, max_seq_len=64,
                        vocab_size=len(vocab), dropout_rate=0.1)
    head = HeadConfig(l_ans=5, d_model=8, d_hidden=8)
    params = init_params(enc, head, seed=0)
    ex = make_example(assemble(dlg, schema, vocab), dlg, "Travel", 2, 5)
    err, recs = nx.grad_check(lambda p: dst_loss(p, ex, enc)[0], params, n_coords=200)
    assert len(recs) == 200 and err < 1e-4


def test_predict_returns_valid_state():
    schema, dlg, vocab = toy()
    enc = EncoderConfig(n_layers=1, d_model=8, n_heads=2, d_ff=16, window_w=4, max_seq_len=64,
                        vocab_size=len(vocab))
    head = HeadConfig(l_ans=5, d_model=8, d_hidden=8)
    st_ = predict(init_params(enc, head, 1), assemble(dlg, schema, vocab), enc, 5)
    assert st_.active_intent in ("Search", "Book", "NONE")
    assert set(st_.slot_values) <= {"to_location", "refundable"}


def test_initial_scores_are_unit_scale():
    ps = _head_params(d=64, seed=3)
    E = np.random.default_rng(4).standard_normal((40, 64))
    c = _cands(region_spans(0, 40, 5))
    s = slot_query_representations(E, [1, 2, 3], ps).data @ span_representations(E, c, ps).data.T
    assert 0.3 < s.std() < 3.0
