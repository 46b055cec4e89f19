"""Intent matching, the span pointer module, the joint loss and greedy decoding."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import numerics as nx
from .numerics import ParamStore, Tensor
from .schema_input import (
    DONTCARE, JointInput, ServiceSchema, DialogueState, find_value_span,
)

HISTORY, SHARED, CATEGORICAL = "history", "shared_target", "categorical_value"
NONE_CANDIDATE, DONTCARE_CANDIDATE = 0, 1


class UnresolvableGoldError(ValueError):
    """A gold slot value has no matching candidate span."""

    def __init__(self, slots, detail=""):
        self.slots = list(slots)
        super().__init__(f"no gold candidate for slot(s) {', '.join(self.slots)}{detail}")


@dataclass
class HeadConfig:
    l_ans: int = 30
    d_model: int = 64
    d_hidden: int = 64
    n_head_layers: int = 2

    def __post_init__(self):
        if self.l_ans < 1:
            raise ValueError("l_ans must be >= 1")
        if self.n_head_layers < 1:
            raise ValueError("n_head_layers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SpanCandidate:
    start: int
    end: int  # inclusive
    region_tag: str
    value: str | None = None  # canonical string for categorical value spans


class CandidateSet:
    """Ordered candidate spans for one joint input.

    Index 0 is the ``[NONE]`` span and index 1 the ``[DONTCARE]`` span, so
    lowest-index tie breaking prefers leaving a slot unset.
    ``slot_candidates[q]`` lists the candidate indices slot ``q`` may point to.
    """

    def __init__(self, spans, slot_candidates, n_history):
        self.spans = spans
        self.slot_candidates = slot_candidates
        self.n_history = n_history
        self.starts = np.array([s.start for s in spans], dtype=np.intp)
        self.ends = np.array([s.end for s in spans], dtype=np.intp)
        self.history_index = {(s.start, s.end): i for i, s in enumerate(spans)
                              if s.region_tag == HISTORY}

    def __len__(self):
        return len(self.spans)

    def __getitem__(self, i):
        return self.spans[i]

    def __iter__(self):
        return iter(self.spans)


def history_span_count(n: int, l_ans: int) -> int:
    """Number of spans of length 1..l_ans inside a region of ``n`` tokens."""
    return sum(min(l_ans, n - i + 1) for i in range(1, n + 1))


def region_spans(start: int, stop: int, l_ans: int):
    """All inclusive (s, e) spans of length <= l_ans within [start, stop)."""
    return [(s, e) for s in range(start, stop) for e in range(s, min(stop, s + l_ans))]


def enumerate_spans(ji: JointInput, l_ans: int = 30) -> CandidateSet:
    none_pos, dc_pos = ji.shared_target_positions
    spans = [SpanCandidate(none_pos, none_pos, SHARED), SpanCandidate(dc_pos, dc_pos, SHARED)]
    h0, h1 = ji.history_region
    spans.extend(SpanCandidate(s, e, HISTORY) for s, e in region_spans(h0, h1, l_ans))
    n_history = len(spans) - 2
    history_ids = list(range(len(spans)))
    slot_candidates = []
    for name in ji.slot_names:
        if name in ji.slot_value_regions:
            own = [NONE_CANDIDATE, DONTCARE_CANDIDATE]
            for (s, e), value in zip(ji.slot_value_regions[name], ji.categorical_values[name]):
                own.append(len(spans))
                spans.append(SpanCandidate(s, e, CATEGORICAL, value))
            slot_candidates.append(np.array(own, dtype=np.intp))
        else:
            slot_candidates.append(np.array(history_ids, dtype=np.intp))
    return CandidateSet(spans, slot_candidates, n_history)


# ---------------------------------------------------------------------------
# Parameters and encoders
# ---------------------------------------------------------------------------


def _declare_ffn(params, prefix, d_in, d_hidden, d_out):
    params.declare(f"{prefix}.in.W", (d_in, d_hidden))
    params.declare(f"{prefix}.in.b", (d_hidden,), "zeros")
    params.declare(f"{prefix}.out.W", (d_hidden, d_out))
    params.declare(f"{prefix}.out.b", (d_out,), "zeros")


def _declare_ln(params, prefix, d, gain="ones"):
    params.declare(f"{prefix}.gain", (d,), gain)
    params.declare(f"{prefix}.bias", (d,), "zeros")


def _declare_stack(params, prefix, d_in, d_hidden, d_out, n_layers):
    dims = [d_in] + [d_hidden] * (n_layers - 1) + [d_out]
    for li in range(n_layers):
        params.declare(f"{prefix}.layer{li}.W", (dims[li], dims[li + 1]))
        params.declare(f"{prefix}.layer{li}.b", (dims[li + 1],), "zeros")
        last = li == n_layers - 1
        _declare_ln(params, f"{prefix}.layer{li}.ln", dims[li + 1], _score_gain(d_out) if last else "ones")


def _score_gain(d):
    # Both sides of every dot-product score end in a LayerNorm; starting their
    # gains at d**-0.25 gives scores of roughly unit variance at init instead
    # of variance d, which would saturate the softmax from the first step.
    return float(d) ** -0.25


def init_head_params(params: ParamStore, config: HeadConfig, which=("utt", "intent", "span", "slot")):
    d, h = config.d_model, config.d_hidden
    for name in ("utt", "intent"):
        if name in which:
            _declare_ffn(params, f"{name}_head.ffn", d, h, d)
            _declare_ln(params, f"{name}_head.ln", d, _score_gain(d))
    if "span" in which:
        _declare_stack(params, "span_head", 2 * d, h, d, config.n_head_layers)
    if "slot" in which:
        _declare_stack(params, "slot_head", d, h, d, config.n_head_layers)


def _ffn_ln(x, params, prefix):
    h = nx.gelu(nx.affine(x, params[f"{prefix}.ffn.in.W"], params[f"{prefix}.ffn.in.b"]))
    h = nx.affine(h, params[f"{prefix}.ffn.out.W"], params[f"{prefix}.ffn.out.b"])
    return nx.layer_norm(h, params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"])


def _stack_layer(x, params, prefix):
    h = nx.gelu(nx.affine(x, params[f"{prefix}.W"], params[f"{prefix}.b"]))
    return nx.layer_norm(h, params[f"{prefix}.ln.gain"], params[f"{prefix}.ln.bias"])


def _n_layers(params, prefix):
    n = 0
    while f"{prefix}.layer{n}.W" in params:
        n += 1
    return n


def project_utterances_and_intents(E, utt_positions, intent_positions, params: ParamStore):
    """``LN(FFN(x))`` over the [UTT] and [INTENT] hidden states, with separate weights."""
    h_utt = _ffn_ln(nx.take_rows(E, utt_positions), params, "utt_head")
    h_intent = _ffn_ln(nx.take_rows(E, intent_positions), params, "intent_head")
    return h_utt, h_intent


def span_representations(E, candidates, params: ParamStore) -> Tensor:
    """Encode each span from the concatenation of its first and last hidden state.

    The first layer's affine map on ``[x_i ; x_j]`` is evaluated as
    ``x_i @ W_start + x_j @ W_end`` on per-token projections, which is the same
    function without materialising the concatenation for every span.
    """
    E = nx.as_tensor(E)
    d = E.shape[1]
    W = params["span_head.layer0.W"]
    from_start = nx.matmul(E, _row_block(W, 0, d))
    from_end = nx.matmul(E, _row_block(W, d, 2 * d))
    h = nx.add(nx.add(nx.take_rows(from_start, candidates.starts),
                      nx.take_rows(from_end, candidates.ends)),
               params["span_head.layer0.b"])
    h = nx.layer_norm(nx.gelu(h), params["span_head.layer0.ln.gain"], params["span_head.layer0.ln.bias"])
    for li in range(1, _n_layers(params, "span_head")):
        h = _stack_layer(h, params, f"span_head.layer{li}")
    return h


def _row_block(W: Tensor, lo: int, hi: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(W.data)
        full[lo:hi] = g
        return (full,)

    return nx._node(W.data[lo:hi], (W,), backward)


def slot_query_representations(E, slot_positions, params: ParamStore) -> Tensor:
    h = nx.take_rows(E, slot_positions)
    for li in range(_n_layers(params, "slot_head")):
        h = _stack_layer(h, params, f"slot_head.layer{li}")
    return h


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def intent_loss(h_utt, h_intent, gold) -> Tensor:
    """Mean cross-entropy of each utterance's dot-product scores against its gold intent."""
    if any(g is None for g in gold):
        missing = [i for i, g in enumerate(gold) if g is None]
        raise ValueError(f"missing gold intent for utterance pair(s) {missing}")
    scores = nx.dot_scores(h_utt, h_intent)
    k = scores.shape[1]
    return nx.mean_cross_entropy(scores, [np.arange(k)] * len(gold), list(gold))


def slot_loss(h_slot, h_span, gold, slot_candidates=None) -> Tensor:
    """Mean cross-entropy of each slot query over its permitted candidates.

    ``gold[q]`` is a candidate index into ``h_span``; with ``slot_candidates``
    omitted every slot competes over all candidates.
    """
    scores = nx.dot_scores(h_slot, h_span)
    n_cand = scores.shape[1]
    if slot_candidates is None:
        slot_candidates = [np.arange(n_cand)] * len(gold)
    local = []
    for q, (cols, g) in enumerate(zip(slot_candidates, gold)):
        hit = np.flatnonzero(np.asarray(cols) == g)
        if hit.size == 0:
            raise UnresolvableGoldError([str(q)], f": candidate {g} not permitted")
        local.append(int(hit[0]))
    return nx.mean_cross_entropy(scores, slot_candidates, local)


def joint_loss(l_slot, l_intent) -> Tensor:
    return nx.scale(nx.add_scalars(l_slot, l_intent), 0.5)


def resolve_slot_targets(ji: JointInput, candidates: CandidateSet, state: DialogueState,
                         l_ans: int = 30) -> list[int]:
    """Gold candidate index per slot for a turn's gold state."""
    targets, missing = [], []
    for name in ji.slot_names:
        value = state.slot_values.get(name)
        if value is None:
            targets.append(NONE_CANDIDATE)
        elif value == DONTCARE:
            targets.append(DONTCARE_CANDIDATE)
        elif name in ji.categorical_values:
            values = ji.categorical_values[name]
            if value not in values:
                missing.append(name)
                targets.append(None)
                continue
            q = ji.slot_names.index(name)
            targets.append(int(candidates.slot_candidates[q][2 + values.index(value)]))
        else:
            span = find_value_span(ji.tokens, ji.history_region, value, l_ans)
            if span is None:
                missing.append(name)
                targets.append(None)
            else:
                targets.append(candidates.history_index[span])
    if missing:
        raise UnresolvableGoldError(missing, f" in dialogue {ji.dialogue_id}")
    return targets


def gold_intents(ji: JointInput, dialogue, service: str) -> list[int]:
    """Gold intent index for every utterance pair of the joint input."""
    out = []
    for turn_idx in ji.utt_turn_indices:
        if turn_idx is None:
            out.append(None)
            continue
        name = dialogue.turns[turn_idx].state[service].active_intent
        out.append(ji.intent_names.index(name))
    return out


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def decode_state(h_utt, h_intent, h_slot, h_span, ji: JointInput, candidates: CandidateSet) -> DialogueState:
    """Greedy state: the best intent for the last [UTT] and the best candidate per slot."""
    data = lambda t: t.data if isinstance(t, Tensor) else np.asarray(t)
    intent_scores = data(h_utt)[-1] @ data(h_intent).T
    intent = ji.intent_names[int(np.argmax(intent_scores))]
    scores = data(h_slot) @ data(h_span).T
    values = {}
    for q, name in enumerate(ji.slot_names):
        cols = candidates.slot_candidates[q]
        best = candidates[int(cols[int(np.argmax(scores[q, cols]))])]
        if best.region_tag == SHARED:
            if best.start == ji.shared_target_positions[1]:
                values[name] = DONTCARE
        elif best.region_tag == CATEGORICAL:
            values[name] = best.value
        else:
            values[name] = ji.surface(best.start, best.end)
    return DialogueState(intent, values)
