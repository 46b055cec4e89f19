"""Recurring span selection: self-supervised span pointing on raw text.

Spans that recur verbatim in a document are grouped into clusters.  A random
subset of clusters (at most 30 occurrences in total) is picked; in each one a
single occurrence survives and every other occurrence collapses to one
``[SLOT]`` token.  The span pointer module is then trained to point every
``[SLOT]`` query at its surviving occurrence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import heads
from . import numerics as nx
from .attention import EncoderConfig, encode
from .heads import SpanCandidate, CandidateSet, HISTORY
from .schema_input import CLS, SEP, SLOT, Vocabulary, tokenize

MAX_OCCURRENCES = 30


def _load_stopwords():
    text = resources.files("splat").joinpath("data/stopwords.txt").read_text()
    return frozenset(w.strip() for w in text.split() if w.strip())


STOPWORDS = _load_stopwords()


@dataclass
class SpanCluster:
    surface: tuple[str, ...]
    occurrences: list[tuple[int, int]]  # inclusive (start, end)


@dataclass
class RssInstance:
    """A masked token sequence with its queries.

    ``queries`` holds ``(query_pos, gold_start, gold_end, cluster_idx)`` in
    masked-sequence coordinates; ``clusters`` are the selected clusters in
    original coordinates and ``survivors[j]`` is the surviving occurrence
    index of cluster ``j``.
    """

    tokens: list[str]
    queries: list[tuple[int, int, int, int]] = field(default_factory=list)
    clusters: list[SpanCluster] = field(default_factory=list)
    survivors: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"tokens": self.tokens,
                           "queries": [{"pos": p, "start": s, "end": e, "cluster": c}
                                       for p, s, e, c in self.queries]})


def _is_trivial(surface) -> bool:
    return len(surface) == 1 and (surface[0] in STOPWORDS or not surface[0].isalnum())


def find_recurring_spans(tokens, min_len: int = 1, max_len: int = 10) -> list[SpanCluster]:
    """Clusters of identical n-grams occurring at least twice.

    Longer n-grams are considered first.  A surface qualifies only if all of
    its occurrences are pairwise disjoint and none of them touches an
    occurrence already claimed by an accepted (longer or earlier) cluster;
    this suppresses sub-spans of longer clusters and keeps the clusters
    mutually disjoint, so masking one never disturbs another.  Single-token
    stopword and punctuation clusters are dropped.
    """
    tokens = list(tokens)
    n = len(tokens)
    claimed = np.zeros(n, dtype=bool)
    clusters = []
    for length in range(min(max_len, n), min_len - 1, -1):
        groups: dict[tuple, list[int]] = {}
        for s in range(n - length + 1):
            groups.setdefault(tuple(tokens[s : s + length]), []).append(s)
        for surface, starts in sorted(groups.items(), key=lambda kv: kv[1][0]):
            if len(starts) < 2 or _is_trivial(surface):
                continue
            if any(b - a < length for a, b in zip(starts, starts[1:])):
                continue
            if any(claimed[s : s + length].any() for s in starts):
                continue
            for s in starts:
                claimed[s : s + length] = True
            clusters.append(SpanCluster(surface, [(s, s + length - 1) for s in starts]))
    clusters.sort(key=lambda c: c.occurrences[0][0])
    return clusters


def select_and_mask(tokens, clusters, rng: np.random.Generator, l_ans: int = 30,
                    budget: int = MAX_OCCURRENCES) -> RssInstance:
    """Pick clusters within the occurrence budget and mask all but one occurrence of each.

    Clusters are visited in random order and admitted while the running
    occurrence total stays within ``budget``; clusters whose surface is
    longer than ``l_ans`` are never admitted.
    """
    tokens = list(tokens)
    order = rng.permutation(len(clusters)) if clusters else []
    chosen, survivors, total = [], [], 0
    for ci in order:
        c = clusters[int(ci)]
        if len(c.surface) > l_ans or total + len(c.occurrences) > budget:
            continue
        total += len(c.occurrences)
        chosen.append(c)
        survivors.append(int(rng.integers(len(c.occurrences))))

    # Walk the original tokens, emitting masks and remembering where each survivor lands.
    action = {}
    for j, (c, keep) in enumerate(zip(chosen, survivors)):
        for k, (s, e) in enumerate(c.occurrences):
            action[s] = (j, k == keep, e)
    out, query_pos, gold = [], [], {}
    i = 0
    while i < len(tokens):
        if i in action:
            j, keep, e = action[i]
            if keep:
                gold[j] = (len(out), len(out) + e - i)
                out.extend(tokens[i : e + 1])
            else:
                query_pos.append((len(out), j))
                out.append(SLOT)
            i = e + 1
        else:
            out.append(tokens[i])
            i += 1
    queries = [(p, gold[j][0], gold[j][1], j) for p, j in query_pos]
    return RssInstance(out, queries, chosen, survivors)


def make_instance(text: str, rng: np.random.Generator, l_ans: int = 30,
                  min_len: int = 1, max_len: int = 10, max_tokens: int | None = None) -> RssInstance:
    tokens = tokenize(text)
    if max_tokens is not None:
        tokens = tokens[:max_tokens]
    return select_and_mask(tokens, find_recurring_spans(tokens, min_len, max_len), rng, l_ans)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@dataclass
class RssInput:
    """Encoder-ready form of an instance: ``[CLS] masked-tokens [SEP]``."""

    token_ids: np.ndarray
    global_mask: np.ndarray
    candidates: CandidateSet
    query_positions: list[int]
    query_gold: list[int]
    query_cluster: list[int]


def prepare_instance(inst: RssInstance, vocab: Vocabulary, l_ans: int = 30) -> RssInput:
    """Shift the instance behind ``[CLS]`` and enumerate every span of the text.

    Query tokens are made global, mirroring how ``[SLOT]`` tokens sit in the
    globally attended description region of a dialogue input.
    """
    if not inst.queries:
        raise ValueError("instance has no queries")
    tokens = [CLS] + inst.tokens + [SEP]
    n = len(inst.tokens)
    spans = [SpanCandidate(s, e, HISTORY) for s, e in heads.region_spans(1, n + 1, l_ans)]
    cands = CandidateSet(spans, [np.arange(len(spans))] * len(inst.queries), len(spans))
    mask = np.zeros(len(tokens), dtype=bool)
    mask[[p + 1 for p, *_ in inst.queries]] = True
    return RssInput(
        token_ids=vocab.ids(tokens),
        global_mask=mask,
        candidates=cands,
        query_positions=[p + 1 for p, *_ in inst.queries],
        query_gold=[cands.history_index[(s + 1, e + 1)] for _, s, e, _ in inst.queries],
        query_cluster=[c for *_, c in inst.queries],
    )


def cluster_loss_sum(h_query, h_span, gold, cluster_of) -> nx.Tensor:
    """Sum over clusters of the mean query cross-entropy within each cluster."""
    scores = nx.dot_scores(h_query, h_span)
    n_cand = scores.shape[1]
    terms = []
    for c in sorted(set(cluster_of)):
        rows = [i for i, cc in enumerate(cluster_of) if cc == c]
        sub = nx.take_rows(scores, rows)
        terms.append(nx.mean_cross_entropy(sub, [np.arange(n_cand)] * len(rows), [gold[i] for i in rows]))
    return nx.add_scalars(*terms)


def rss_loss(E, rin: RssInput, params) -> nx.Tensor:
    h_span = heads.span_representations(E, rin.candidates, params)
    h_query = heads.slot_query_representations(E, rin.query_positions, params)
    return cluster_loss_sum(h_query, h_span, rin.query_gold, rin.query_cluster)


def rss_forward(params, rin: RssInput, enc: EncoderConfig, rng=None) -> nx.Tensor:
    E = encode(rin.token_ids, rin.global_mask, enc, params, rng)
    return rss_loss(E, rin, params)
