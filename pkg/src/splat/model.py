"""The full model: encoder plus heads over one joint input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import heads
from . import numerics as nx
from .attention import EncoderConfig, encode, init_encoder_params
from .heads import HeadConfig
from .numerics import ParamStore
from .schema_input import Dialogue, JointInput, DialogueState


def init_params(enc: EncoderConfig, head: HeadConfig, seed: int) -> ParamStore:
    params = ParamStore(seed)
    init_encoder_params(params, enc)
    heads.init_head_params(params, head)
    if enc.weight_init == "fan_in":
        for name, t in params.items():
            if name.endswith(".W"):
                # draws were made at std 0.02; rescale to 1/sqrt(fan_in)
                t.data *= 1.0 / (np.sqrt(t.data.shape[0]) * 0.02)
    return params


@dataclass
class Example:
    """A joint input with its resolved supervision."""

    joint_input: JointInput
    candidates: heads.CandidateSet
    intent_gold: list[int]
    slot_gold: list[int]
    state: DialogueState


def make_example(ji: JointInput, dialogue: Dialogue, service: str, turn_idx: int, l_ans: int) -> Example:
    cands = heads.enumerate_spans(ji, l_ans)
    state = dialogue.turns[turn_idx].state[service]
    return Example(ji, cands, heads.gold_intents(ji, dialogue, service),
                   heads.resolve_slot_targets(ji, cands, state, l_ans), state)


def dst_loss(params: ParamStore, ex: Example, enc: EncoderConfig, rng=None):
    """Returns ``(joint, slot, intent)`` losses for one example."""
    ji = ex.joint_input
    E = encode(ji.token_ids, ji.global_mask, enc, params, rng)
    h_utt, h_int = heads.project_utterances_and_intents(E, ji.utt_positions, ji.intent_positions, params)
    l_intent = heads.intent_loss(h_utt, h_int, ex.intent_gold)
    h_span = heads.span_representations(E, ex.candidates, params)
    h_slot = heads.slot_query_representations(E, ji.slot_positions, params)
    l_slot = heads.slot_loss(h_slot, h_span, ex.slot_gold, ex.candidates.slot_candidates)
    return heads.joint_loss(l_slot, l_intent), l_slot, l_intent


def predict(params: ParamStore, ji: JointInput, enc: EncoderConfig, l_ans: int,
            candidates: heads.CandidateSet | None = None) -> DialogueState:
    cands = heads.enumerate_spans(ji, l_ans) if candidates is None else candidates
    view = _frozen(params)
    E = encode(ji.token_ids, ji.global_mask, enc, view)
    h_utt, h_int = heads.project_utterances_and_intents(E, ji.utt_positions, ji.intent_positions, view)
    h_span = heads.span_representations(E, cands, view)
    h_slot = heads.slot_query_representations(E, ji.slot_positions, view)
    return heads.decode_state(h_utt, h_int, h_slot, h_span, ji, cands)


class _FrozenView:
    """Read-only parameter view whose tensors do not record gradients."""

    def __init__(self, params):
        self._params = params
        self._cache = {}

    def __getitem__(self, k):
        if k not in self._cache:
            self._cache[k] = nx.Tensor(self._params[k].data)
        return self._cache[k]

    def __contains__(self, k):
        return k in self._params


def _frozen(params):
    return params if isinstance(params, _FrozenView) else _FrozenView(params)


class Adam:
    """Adam with a linear warmup then linear decay to zero."""

    def __init__(self, params: ParamStore, lr: float, total_steps: int, warmup_fraction: float = 0.1,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.total_steps = max(1, int(total_steps))
        self.warmup_steps = warmup_fraction * self.total_steps
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def lr_at(self, step: int) -> float:
        """Learning rate used for the ``step``-th update (1-based)."""
        return linear_warmup_decay(step, self.total_steps, self.warmup_steps, self.lr)

    def step(self, grad_scale: float = 1.0):
        self.step_count += 1
        lr = self.lr_at(self.step_count)
        b1, b2 = self.b1, self.b2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad * grad_scale
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            t.data -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        self.params.zero_grad()
        return lr


def linear_warmup_decay(step, total_steps, warmup_steps, peak):
    """Peak at ``step == warmup_steps``, linear ramps on either side, zero at ``total_steps``."""
    if warmup_steps > 0 and step <= warmup_steps:
        return peak * step / warmup_steps
    remaining = total_steps - warmup_steps
    if remaining <= 0:
        return peak
    return peak * max(0.0, (total_steps - step) / remaining)
