"""Schemas, dialogues, tokenization and joint input assembly.

The joint input for one service at one user turn is laid out as::

    [CLS] history [SEP] [NONE] [DONTCARE] intent-descriptions slot-descriptions [SEP]

where every intent description ends in an ``[INTENT]`` token, every slot
description ends in a ``[SLOT]`` token, and the history is a run of
``[UTT] system ... user ...`` pairs.  The shared targets and all
descriptions receive global attention.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
UTT, SLOT, INTENT = "[UTT]", "[SLOT]", "[INTENT]"
NONE_TOK, DONTCARE_TOK = "[NONE]", "[DONTCARE]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, UTT, SLOT, INTENT, NONE_TOK, DONTCARE_TOK)
# Always present so that rendering never produces [UNK] for structure.
STRUCTURAL_WORDS = ("user", "system", ":", ",")

NONE_INTENT = "NONE"
NONE_INTENT_DESCRIPTION = "none of the intents are active"
DONTCARE = "dontcare"

_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation.

    >>> tokenize("Long Beach, CA")
    ['long', 'beach', ',', 'ca']
    """
    return _TOKEN_RE.findall(text.lower())


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Tokens with their ``[start, end)`` character offsets in ``text``."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def detokenize(tokens) -> str:
    return " ".join(tokens)


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------


class SchemaError(ValueError):
    """Malformed schema or dialogue content."""


@dataclass
class Intent:
    name: str
    description: str


@dataclass
class Slot:
    name: str
    description: str
    is_categorical: bool = False
    possible_values: list[str] = field(default_factory=list)


@dataclass
class ServiceSchema:
    service_name: str
    intents: list[Intent]
    slots: list[Slot]
    seen: bool = True

    def __post_init__(self):
        for kind, names in (("intent", [i.name for i in self.intents]),
                            ("slot", [s.name for s in self.slots])):
            dup = [n for n, c in Counter(names).items() if c > 1]
            if dup:
                raise SchemaError(f"service {self.service_name!r}: duplicate {kind} names {dup}")
        if any(i.name == NONE_INTENT for i in self.intents):
            raise SchemaError(f"service {self.service_name!r}: intent name {NONE_INTENT!r} is reserved")
        for s in self.slots:
            if s.is_categorical and not s.possible_values:
                raise SchemaError(f"service {self.service_name!r}: categorical slot {s.name!r} has no values")

    @property
    def intent_names(self) -> list[str]:
        """Intent names including the trailing NONE intent."""
        return [i.name for i in self.intents] + [NONE_INTENT]

    def slot(self, name: str) -> Slot:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceSchema":
        return cls(
            service_name=d["service_name"],
            intents=[Intent(i["name"], i.get("description", "")) for i in d["intents"]],
            slots=[Slot(s["name"], s.get("description", ""), bool(s.get("is_categorical", False)),
                        list(s.get("possible_values", []))) for s in d["slots"]],
            seen=bool(d.get("seen", True)),
        )

    def to_dict(self) -> dict:
        return {
            "service_name": self.service_name,
            "seen": self.seen,
            "intents": [{"name": i.name, "description": i.description} for i in self.intents],
            "slots": [{"name": s.name, "description": s.description,
                       "is_categorical": s.is_categorical,
                       "possible_values": list(s.possible_values)} for s in self.slots],
        }


@dataclass
class DialogueState:
    """Active intent plus slot assignments for one service at one turn."""

    active_intent: str = NONE_INTENT
    slot_values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "DialogueState":
        return cls(d.get("active_intent", NONE_INTENT), dict(d.get("slot_values", {})))

    def to_dict(self) -> dict:
        return {"active_intent": self.active_intent, "slot_values": dict(self.slot_values)}


@dataclass
class Turn:
    speaker: str
    text: str
    state: dict[str, DialogueState] | None = None


@dataclass
class Dialogue:
    """A dialogue over one or more services.

    User turns carry a gold state per service; system turns carry none.
    """

    dialogue_id: str
    services: list[str]
    turns: list[Turn]

    def __post_init__(self):
        for t in self.turns:
            if t.speaker not in ("user", "system"):
                raise SchemaError(f"{self.dialogue_id}: unknown speaker {t.speaker!r}")
        for a, b in zip(self.turns, self.turns[1:]):
            if a.speaker == b.speaker:
                raise SchemaError(f"{self.dialogue_id}: speakers do not alternate")
        if not self.user_turn_indices():
            raise SchemaError(f"{self.dialogue_id}: no user turn")

    def user_turn_indices(self) -> list[int]:
        return [i for i, t in enumerate(self.turns) if t.speaker == "user"]

    @classmethod
    def from_dict(cls, d: dict) -> "Dialogue":
        turns = []
        for t in d["turns"]:
            state = t.get("state")
            if state is not None:
                state = {svc: DialogueState.from_dict(s) for svc, s in state.items()}
            turns.append(Turn(t["speaker"], t["text"], state))
        return cls(d["dialogue_id"], list(d["services"]), turns)

    def to_dict(self) -> dict:
        turns = []
        for t in self.turns:
            row = {"speaker": t.speaker, "text": t.text}
            if t.state is not None:
                row["state"] = {svc: s.to_dict() for svc, s in t.state.items()}
            turns.append(row)
        return {"dialogue_id": self.dialogue_id, "services": list(self.services), "turns": turns}


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


class Vocabulary:
    """Word-level token/id bijection with special tokens at the lowest ids."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens in canonical order")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, self.stoi[UNK])

    def ids(self, tokens) -> np.ndarray:
        unk = self.stoi[UNK]
        return np.array([self.stoi.get(t, unk) for t in tokens], dtype=np.intp)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.stoi, fh, indent=0)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as fh:
            stoi = json.load(fh)
        tokens = [None] * len(stoi)
        for t, i in stoi.items():
            if not 0 <= i < len(tokens) or tokens[i] is not None:
                raise ValueError(f"{path}: ids are not a permutation of 0..{len(stoi) - 1}")
            tokens[i] = t
        return cls(tokens)


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from an iterable of text strings.

    Tokens seen fewer than ``min_count`` times are left out (they map to
    ``[UNK]``).  Ordering is by descending frequency, ties alphabetical.
    """
    counts = Counter()
    n_texts = 0
    for text in corpus:
        n_texts += 1
        counts.update(tokenize(text))
    if n_texts == 0 or not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    reserved = set(SPECIAL_TOKENS) | set(STRUCTURAL_WORDS)
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in reserved),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIAL_TOKENS) + list(STRUCTURAL_WORDS) + kept)


def schema_texts(schemas):
    for sc in schemas:
        for i in sc.intents:
            yield i.name
            yield i.description
        for s in sc.slots:
            yield s.name
            yield s.description
            yield from s.possible_values
    yield NONE_INTENT
    yield NONE_INTENT_DESCRIPTION


def dialogue_texts(dialogues):
    for d in dialogues:
        for t in d.turns:
            yield t.text


# ---------------------------------------------------------------------------
# Rendering and assembly
# ---------------------------------------------------------------------------


def render_utterances(turns):
    """Render turns as ``[UTT] system ... user ...`` pairs.

    Returns ``(tokens, utt_offsets, pair_user_turns)``: the flat token list,
    the offset of each ``[UTT]`` marker, and for each pair the index of its
    user turn (None for a trailing system-only pair).
    """
    tokens, offsets, users, _ = _render(turns)
    return tokens, offsets, users


def _render(turns):
    # also returns, per token, (turn index, char start, char end) or None for markers
    tokens, offsets, users, spans = [], [], [], []
    open_pair = False  # a system turn has opened a pair awaiting its user turn
    for idx, turn in enumerate(turns):
        if turn.speaker == "system" or not open_pair:
            offsets.append(len(tokens))
            tokens.append(UTT)
            spans.append(None)
            users.append(None)
        tokens.append(turn.speaker)
        spans.append(None)
        for tok, a, b in tokenize_with_offsets(turn.text):
            tokens.append(tok)
            spans.append((idx, a, b))
        if turn.speaker == "user":
            users[-1] = idx
            open_pair = False
        else:
            open_pair = True
    return tokens, offsets, users, spans


def render_intent_description(name: str, description: str) -> list[str]:
    return tokenize(name) + [":"] + tokenize(description) + [INTENT]


def render_slot_description(slot: Slot):
    """Tokens for one slot, and the (start, end) inclusive offsets of each enumerated value."""
    tokens = tokenize(slot.name) + [":"] + tokenize(slot.description)
    ranges = []
    if slot.is_categorical:
        for k, value in enumerate(slot.possible_values):
            if k:
                tokens.append(",")
            vt = tokenize(value)
            if not vt:
                raise SchemaError(f"slot {slot.name!r}: value {value!r} has no tokens")
            ranges.append((len(tokens), len(tokens) + len(vt) - 1))
            tokens.extend(vt)
    tokens.append(SLOT)
    return tokens, ranges


@dataclass
class JointInput:
    """One assembled encoder input with the positions the heads read from.

    ``history_region`` is half-open; span tuples elsewhere are inclusive.
    """

    dialogue_id: str
    service_name: str
    tokens: list[str]
    token_ids: np.ndarray
    global_mask: np.ndarray
    utt_positions: list[int]
    utt_turn_indices: list[int | None]
    intent_names: list[str]
    intent_positions: list[int]
    slot_names: list[str]
    slot_positions: list[int]
    shared_target_positions: tuple[int, int]
    history_region: tuple[int, int]
    slot_value_regions: dict[str, list[tuple[int, int]]]
    categorical_values: dict[str, list[str]]
    description_regions: dict[str, tuple[int, int]]
    # per history token: (turn index, char start, char end) into ``turn_texts``
    char_spans: list = field(default_factory=list)
    turn_texts: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.tokens)

    def surface(self, start: int, end: int) -> str:
        """Original text behind history tokens ``start..end`` (inclusive).

        Falls back to the space-joined tokens when the span leaves a single
        utterance.
        """
        h0 = self.history_region[0]
        a = self.char_spans[start - h0] if self.char_spans else None
        b = self.char_spans[end - h0] if self.char_spans else None
        if a is None or b is None or a[0] != b[0]:
            return detokenize(self.tokens[start : end + 1])
        return self.turn_texts[a[0]][a[1] : b[2]]


def assemble(dialogue: Dialogue, schema: ServiceSchema, vocab: Vocabulary,
             upto_turn: int | None = None, max_seq_len: int | None = None) -> JointInput:
    """Build the joint input for ``schema`` over the dialogue history.

    ``upto_turn`` (a turn index, inclusive) truncates the history; by default
    everything through the last user turn is used.
    """
    if upto_turn is None:
        upto_turn = dialogue.user_turn_indices()[-1]
    hist, offsets, users, char_spans = _render(dialogue.turns[: upto_turn + 1])

    tokens = [CLS]
    h0 = len(tokens)
    tokens.extend(hist)
    h1 = len(tokens)
    tokens.append(SEP)
    g0 = len(tokens)
    shared = (len(tokens), len(tokens) + 1)
    tokens.extend([NONE_TOK, DONTCARE_TOK])

    regions = {}
    intent_pos = []
    intent_specs = [(i.name, i.description) for i in schema.intents]
    intent_specs.append((NONE_INTENT, NONE_INTENT_DESCRIPTION))
    for name, desc in intent_specs:
        start = len(tokens)
        tokens.extend(render_intent_description(name, desc))
        intent_pos.append(len(tokens) - 1)
        regions[f"intent:{name}"] = (start, len(tokens))
    slot_pos, value_regions = [], {}
    for s in schema.slots:
        start = len(tokens)
        st, ranges = render_slot_description(s)
        tokens.extend(st)
        slot_pos.append(len(tokens) - 1)
        regions[f"slot:{s.name}"] = (start, len(tokens))
        if s.is_categorical:
            value_regions[s.name] = [(start + a, start + b) for a, b in ranges]
    g1 = len(tokens)
    tokens.append(SEP)

    if max_seq_len is not None and len(tokens) > max_seq_len:
        raise ValueError(f"dialogue {dialogue.dialogue_id!r} (service {schema.service_name!r}) "
                         f"renders to {len(tokens)} tokens, over max_seq_len={max_seq_len}")
    mask = np.zeros(len(tokens), dtype=bool)
    mask[g0:g1] = True
    return JointInput(
        dialogue_id=dialogue.dialogue_id,
        service_name=schema.service_name,
        tokens=tokens,
        token_ids=vocab.ids(tokens),
        global_mask=mask,
        utt_positions=[h0 + o for o in offsets],
        utt_turn_indices=users,
        intent_names=[n for n, _ in intent_specs],
        intent_positions=intent_pos,
        slot_names=[s.name for s in schema.slots],
        slot_positions=slot_pos,
        shared_target_positions=shared,
        history_region=(h0, h1),
        slot_value_regions=value_regions,
        categorical_values={s.name: list(s.possible_values) for s in schema.slots if s.is_categorical},
        description_regions=regions,
        char_spans=char_spans,
        turn_texts=[t.text for t in dialogue.turns[: upto_turn + 1]],
    )


def find_value_span(tokens, region, value: str, max_len: int | None = None):
    """Earliest inclusive (start, end) inside ``region`` whose tokens equal ``value``'s."""
    vt = tokenize(value)
    if not vt or (max_len is not None and len(vt) > max_len):
        return None
    lo, hi = region
    n = len(vt)
    for s in range(lo, hi - n + 1):
        if tokens[s : s + n] == vt:
            return (s, s + n - 1)
    return None
