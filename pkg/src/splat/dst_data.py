"""Corpus loading, gold reachability, metrics and schema-variant swapping."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field, replace
from pathlib import Path

from .schema_input import (
    DONTCARE, NONE_INTENT, Dialogue, DialogueState, SchemaError, ServiceSchema,
    find_value_span, render_utterances,
)

__all__ = [
    "CorpusError", "Corpus", "Frame", "EvalReport", "DialogueState",
    "load_corpus", "load_schemas", "load_dialogues", "validate", "frames",
    "normalize", "edit_distance", "fuzzy_match", "values_match",
    "intent_accuracy", "jga", "evaluate", "swap_schema_variant",
    "read_predictions", "write_predictions",
]


class CorpusError(ValueError):
    """A schema or dialogue file failed to parse or validate.

    ``location`` is a file path optionally followed by ``:line:col`` or a
    JSON path such as ``[3].turns[1].state``.
    """

    def __init__(self, message, location=""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "location": self.location, "message": str(self)}


@dataclass
class Corpus:
    schemas: dict[str, ServiceSchema]
    dialogues: list[Dialogue]
    # (dialogue_id, turn_index, service, slot, value) for gold values absent from the history
    unreachable: list[tuple] = field(default_factory=list)


def _read_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from None


def load_schemas(path) -> dict[str, ServiceSchema]:
    raw = _read_json(path)
    if isinstance(raw, dict):
        raw = [raw]
    out = {}
    for i, obj in enumerate(raw):
        try:
            sc = ServiceSchema.from_dict(obj)
        except (KeyError, TypeError, SchemaError) as exc:
            raise CorpusError(f"bad service schema ({exc})", f"{path}[{i}]") from None
        if sc.service_name in out:
            raise CorpusError(f"duplicate service {sc.service_name!r}", f"{path}[{i}]")
        out[sc.service_name] = sc
    return out


def load_dialogues(path) -> list[Dialogue]:
    raw = _read_json(path)
    out = []
    for i, obj in enumerate(raw):
        try:
            out.append(Dialogue.from_dict(obj))
        except (KeyError, TypeError, SchemaError) as exc:
            raise CorpusError(f"bad dialogue ({exc})", f"{path}[{i}]") from None
    return out


def validate(schemas, dialogues, l_ans: int = 30, source: str = "") -> list[tuple]:
    """Check every gold state against its schema; return unreachable extractive values.

    Unknown services, intents or slots and categorical values outside the
    enumerated set raise :class:`CorpusError`.  Extractive values that do
    not occur in the rendered history up to their turn are returned, not
    raised, so callers can count them.
    """
    unreachable = []
    for di, d in enumerate(dialogues):
        for svc in d.services:
            if svc not in schemas:
                raise CorpusError(f"unknown service {svc!r}", f"{source}[{di}].services")
        for ti in d.user_turn_indices():
            turn = d.turns[ti]
            where = f"{source}[{di}].turns[{ti}].state"
            if turn.state is None or set(turn.state) != set(d.services):
                raise CorpusError("user turn must carry a state for every dialogue service", where)
            hist = None
            for svc, st in turn.state.items():
                sc = schemas[svc]
                if st.active_intent not in sc.intent_names:
                    raise CorpusError(f"unknown intent {st.active_intent!r} for {svc}", where)
                for slot_name, value in st.slot_values.items():
                    try:
                        slot = sc.slot(slot_name)
                    except KeyError:
                        raise CorpusError(f"unknown slot {slot_name!r} for {svc}",
                                          f"{where}.{svc}.slot_values") from None
                    if value == DONTCARE:
                        continue
                    if slot.is_categorical:
                        if value not in slot.possible_values:
                            raise CorpusError(f"value {value!r} not among possible values of {slot_name!r}",
                                              f"{where}.{svc}.slot_values.{slot_name}")
                        continue
                    if hist is None:
                        hist, _, _ = render_utterances(d.turns[: ti + 1])
                    if find_value_span(hist, (0, len(hist)), value, l_ans) is None:
                        unreachable.append((d.dialogue_id, ti, svc, slot_name, value))
    return unreachable


def load_corpus(schema_path, dialogues_path, l_ans: int = 30) -> Corpus:
    schemas = load_schemas(schema_path)
    dialogues = load_dialogues(dialogues_path)
    unreachable = validate(schemas, dialogues, l_ans, str(dialogues_path))
    return Corpus(schemas, dialogues, unreachable)


@dataclass(frozen=True)
class Frame:
    """One evaluation unit: a service at a user turn of a dialogue."""

    dialogue_id: str
    turn_index: int
    service: str


def frames(corpus: Corpus):
    """Yield ``(frame, dialogue, gold_state)`` in file order."""
    for d in corpus.dialogues:
        for ti in d.user_turn_indices():
            for svc in d.services:
                yield Frame(d.dialogue_id, ti, svc), d, d.turns[ti].state[svc]


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

_PUNCT = str.maketrans("", "", string.punctuation)
_WS = re.compile(r"\s+")


def normalize(s: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    return _WS.sub(" ", s.lower().translate(_PUNCT)).strip()


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def fuzzy_match(a: str, b: str) -> float:
    """``1 - edit_distance / max_length`` on normalized strings; 1.0 for two empties."""
    na, nb = normalize(a), normalize(b)
    longest = max(len(na), len(nb))
    if longest == 0:
        return 1.0
    return 1.0 - edit_distance(na, nb) / longest


def values_match(pred: str, gold: str, categorical: bool, mode: str = "fuzzy",
                 threshold: float = 0.9) -> bool:
    if mode not in ("fuzzy", "exact"):
        raise ValueError(f"unknown matching mode {mode!r}")
    if mode == "exact" or categorical:
        return normalize(pred) == normalize(gold)
    return fuzzy_match(pred, gold) >= threshold


def _intent_of(x):
    return x.active_intent if isinstance(x, DialogueState) else x


def intent_accuracy(preds, golds) -> float:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold turns")
    if not golds:
        return 0.0
    hits = sum(_intent_of(p) == _intent_of(g) for p, g in zip(preds, golds))
    return hits / len(golds)


def _turn_correct(pred, gold, categorical, mode, threshold) -> bool:
    if set(pred.slot_values) != set(gold.slot_values):
        return False
    return all(values_match(pred.slot_values[k], v, k in categorical, mode, threshold)
               for k, v in gold.slot_values.items())


def jga(preds, golds, categorical=None, mode: str = "fuzzy", threshold: float = 0.9) -> float:
    """Fraction of turns whose whole slot map is right.

    ``categorical`` is an optional per-turn collection of categorical slot
    names; those values are always compared exactly.
    """
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold turns")
    if not golds:
        return 0.0
    if categorical is None:
        categorical = [()] * len(golds)
    ok = sum(_turn_correct(p, g, set(c), mode, threshold) for p, g, c in zip(preds, golds, categorical))
    return ok / len(golds)


@dataclass
class EvalReport:
    intent_accuracy: float
    jga: float
    n_turns: int
    matching_mode: str
    threshold: float
    seen: dict
    unseen: dict
    n_unreachable: int = 0
    per_turn: list = field(default_factory=list)

    def to_dict(self, with_turns: bool = True) -> dict:
        d = {
            "intent_accuracy": self.intent_accuracy,
            "jga": self.jga,
            "n_turns": self.n_turns,
            "matching_mode": self.matching_mode,
            "threshold": self.threshold,
            "seen": self.seen,
            "unseen": self.unseen,
            "n_unreachable": self.n_unreachable,
        }
        if with_turns:
            d["per_turn"] = self.per_turn
        return d

    def table(self) -> str:
        rows = [("split", "turns", "intent_acc", "jga")]
        rows.append(("all", str(self.n_turns), f"{self.intent_accuracy:.4f}", f"{self.jga:.4f}"))
        for name, t in (("seen", self.seen), ("unseen", self.unseen)):
            if t["n_turns"]:
                rows.append((name, str(t["n_turns"]), f"{t['intent_accuracy']:.4f}", f"{t['jga']:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


def _tally(records) -> dict:
    n = len(records)
    return {
        "n_turns": n,
        "intent_accuracy": sum(r["intent_correct"] for r in records) / n if n else 0.0,
        "jga": sum(r["jga_correct"] for r in records) / n if n else 0.0,
    }


def evaluate(predictions: dict, corpus: Corpus, mode: str = "fuzzy", threshold: float = 0.9) -> EvalReport:
    """Score ``predictions`` (a map from :class:`Frame` to state) against the corpus gold."""
    records = []
    for fr, _, gold in frames(corpus):
        if fr not in predictions:
            raise KeyError(f"no prediction for {fr}")
        pred = predictions[fr]
        sc = corpus.schemas[fr.service]
        cat = {s.name for s in sc.slots if s.is_categorical}
        records.append({
            "dialogue_id": fr.dialogue_id,
            "turn_index": fr.turn_index,
            "service": fr.service,
            "seen": sc.seen,
            "intent_correct": pred.active_intent == gold.active_intent,
            "jga_correct": _turn_correct(pred, gold, cat, mode, threshold),
        })
    overall = _tally(records)
    return EvalReport(
        intent_accuracy=overall["intent_accuracy"],
        jga=overall["jga"],
        n_turns=overall["n_turns"],
        matching_mode=mode,
        threshold=threshold,
        seen=_tally([r for r in records if r["seen"]]),
        unseen=_tally([r for r in records if not r["seen"]]),
        n_unreachable=len(corpus.unreachable),
        per_turn=records,
    )


def write_predictions(path, predictions: dict):
    """JSON lines, one record per frame, in insertion order."""
    with open(path, "w") as fh:
        for fr, st in predictions.items():
            rec = {"dialogue_id": fr.dialogue_id, "turn_index": fr.turn_index, "service": fr.service,
                   "active_intent": st.active_intent,
                   "slot_values": dict(sorted(st.slot_values.items()))}
            fh.write(json.dumps(rec) + "\n")


def read_predictions(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out[Frame(r["dialogue_id"], r["turn_index"], r["service"])] = DialogueState(
                    r.get("active_intent", NONE_INTENT), r.get("slot_values", {}))
    return out


def swap_schema_variant(corpus: Corpus, variant_schemas: dict[str, ServiceSchema]) -> Corpus:
    """Replace names' descriptions with a variant's, keeping gold labels unchanged.

    Every service, intent and slot of the original must appear in the
    variant under the same name, with the same categorical values.
    """
    problems = []
    out = {}
    for name, sc in corpus.schemas.items():
        var = variant_schemas.get(name)
        if var is None:
            problems.append(f"service {name}")
            continue
        vi = {i.name for i in var.intents}
        problems += [f"{name}.intent {i.name}" for i in sc.intents if i.name not in vi]
        vs = {s.name: s for s in var.slots}
        for s in sc.slots:
            v = vs.get(s.name)
            if v is None:
                problems.append(f"{name}.slot {s.name}")
            elif v.is_categorical != s.is_categorical or list(v.possible_values) != list(s.possible_values):
                problems.append(f"{name}.slot {s.name} (values differ)")
        if len(vi) != len(sc.intents) or len(vs) != len(sc.slots):
            extra = (vi - {i.name for i in sc.intents}) | (set(vs) - {s.name for s in sc.slots})
            problems += [f"{name}: unexpected {x}" for x in sorted(extra)]
        # Keep the original ordering so only description text changes.
        out[name] = ServiceSchema(
            service_name=name,
            intents=[replace(i, description=next(x.description for x in var.intents if x.name == i.name))
                     for i in sc.intents if i.name in vi],
            slots=[replace(s, description=vs[s.name].description) for s in sc.slots if s.name in vs],
            seen=sc.seen,
        )
    if problems:
        raise CorpusError("schema variant is not name-aligned; missing or mismatched: " + "; ".join(problems))
    return Corpus(out, corpus.dialogues, corpus.unreachable)
