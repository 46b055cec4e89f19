"""Windowed attention with selective global tokens, and the encoder built on it.

The kernel enumerates the permitted (query, key) pairs explicitly and only
ever evaluates scores for those pairs.  Token ``i`` may attend to ``j`` when
``|i - j| <= window_w`` or either of the two is global.  Pairs are kept
sorted by query so per-row softmax and weighted sums are segment
reductions, and a second ordering by key serves the value/key gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import numerics as nx
from .numerics import ParamStore, Tensor, ShapeError


@dataclass
class EncoderConfig:
    """Encoder hyperparameters.

    ``window_w`` is a half-window: token ``i`` sees ``i - w .. i + w``.  A
    total window of 512 (the usual Longformer setting) corresponds to
    ``window_w = 256``.

    ``weight_init`` picks the std of every weight matrix (encoder and heads):
    "normal" is the fixed 0.02 of large pre-trained encoders, "fan_in" is
    ``1/sqrt(fan_in)``, which trains far faster at small widths.
    """

    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    window_w: int = 16
    max_seq_len: int = 512
    vocab_size: int = 1000
    dropout_rate: float = 0.1
    weight_init: str = "normal"

    def __post_init__(self):
        if self.weight_init not in ("normal", "fan_in"):
            raise ValueError(f"unknown weight_init {self.weight_init!r} (expected 'normal' or 'fan_in')")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.window_w < 1:
            raise ValueError("window_w must be >= 1")
        if self.max_seq_len < self.window_w:
            raise ValueError("max_seq_len must be >= window_w")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Pair enumeration
# ---------------------------------------------------------------------------


def _as_mask(n: int, global_mask) -> np.ndarray:
    if global_mask is None:
        return np.zeros(n, dtype=bool)
    mask = np.asarray(global_mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"global mask has length {mask.size}, sequence has {n} tokens")
    return mask


def allowed_pairs(n: int, window_w: int, global_mask=None):
    """Permitted (query, key) index pairs, sorted by query then key."""
    mask = _as_mask(n, global_mask)
    return _allowed_pairs(n, int(window_w), mask.tobytes())


@lru_cache(maxsize=256)
def _allowed_pairs(n, window_w, mask_bytes):
    mask = np.frombuffer(mask_bytes, dtype=bool)
    rows, cols = [], []
    glob = np.flatnonzero(mask)
    everything = np.arange(n)
    for i in range(n):
        if mask[i]:
            keys = everything
        else:
            lo, hi = max(0, i - window_w), min(n, i + window_w + 1)
            band = np.arange(lo, hi)
            extra = glob[(glob < lo) | (glob >= hi)]
            keys = np.union1d(band, extra) if extra.size else band
        rows.append(np.full(keys.size, i, dtype=np.intp))
        cols.append(keys.astype(np.intp))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    row_starts = np.searchsorted(rows, np.arange(n))
    by_col = np.argsort(cols, kind="stable")
    col_starts = np.searchsorted(cols[by_col], np.arange(n))
    for a in (rows, cols, row_starts, by_col, col_starts):
        a.setflags(write=False)
    return rows, cols, row_starts, by_col, col_starts


def attention_score_count(n: int, window_w: int, n_global: int, global_mask=None) -> int:
    """Number of query-key scores the kernel evaluates.

    Without an explicit mask the ``n_global`` global tokens are taken to be
    the last ``n_global`` positions.
    """
    if global_mask is None:
        if not 0 <= n_global <= n:
            raise ValueError(f"n_global={n_global} outside [0, {n}]")
        global_mask = np.zeros(n, dtype=bool)
        if n_global:
            global_mask[n - n_global:] = True
    rows, *_ = allowed_pairs(n, window_w, global_mask)
    return int(rows.size)


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    """[N, H * dh] -> contiguous [H, N, dh]."""
    n, d = x.shape
    if d % n_heads:
        raise ShapeError(f"width {d} not divisible by {n_heads} heads")
    return np.ascontiguousarray(x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2))


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def _pair_matmul(vals, indptr, cols, n, dense, transpose=False):
    """``M @ dense`` for the CSR matrix with pair values ``vals`` (or ``M.T @ dense``)."""
    m = sp.csr_matrix((vals, cols, indptr), shape=(n, n))
    return (m.T @ dense) if transpose else (m @ dense)


def windowed_global_attention(q, k, v, global_mask, window_w: int, n_heads: int = 1,
                              return_weights: bool = False):
    """Scaled dot-product attention restricted to the window/global pattern.

    ``q``, ``k``, ``v`` are [N, d] with heads laid out contiguously along the
    last axis.  Returns the [N, d] output, and with ``return_weights`` also a
    dense [H, N, N] copy of the attention weights (zeros where not allowed).
    """
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    n = q.shape[0]
    if k.shape[0] != n or v.shape[0] != n:
        raise ShapeError(f"q/k/v lengths differ: {q.shape}, {k.shape}, {v.shape}")
    rows, cols, row_starts, _, _ = allowed_pairs(n, window_w, global_mask)
    indptr = np.append(row_starts, rows.size)

    Q = _split_heads(q.data, n_heads)
    K = _split_heads(k.data, n_heads)
    V = _split_heads(v.data, n_heads)
    inv = 1.0 / np.sqrt(Q.shape[-1])

    # [H, P] layouts keep the per-row segment reductions on a contiguous axis.
    s = np.einsum("hpd,hpd->hp", Q[:, rows], K[:, cols]) * inv
    m = np.maximum.reduceat(s, row_starts, axis=1)
    e = np.exp(s - m[:, rows])
    z = np.add.reduceat(e, row_starts, axis=1)
    w = e / z[:, rows]
    out = np.stack([_pair_matmul(w[h], indptr, cols, n, V[h]) for h in range(n_heads)])

    def backward(g):
        G = _split_heads(g, n_heads)
        dw = np.einsum("hpd,hpd->hp", G[:, rows], V[:, cols])
        ds = w * (dw - np.add.reduceat(w * dw, row_starts, axis=1)[:, rows]) * inv
        dq = np.stack([_pair_matmul(ds[h], indptr, cols, n, K[h]) for h in range(n_heads)])
        dk = np.stack([_pair_matmul(ds[h], indptr, cols, n, Q[h], True) for h in range(n_heads)])
        dv = np.stack([_pair_matmul(w[h], indptr, cols, n, G[h], True) for h in range(n_heads)])
        return _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)

    result = nx._node(_merge_heads(out), (q, k, v), backward)
    if not return_weights:
        return result
    dense = np.zeros((n_heads, n, n))
    dense[:, rows, cols] = w
    return result, dense


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------


def init_encoder_params(params: ParamStore, config: EncoderConfig, prefix: str = "encoder"):
    d, f = config.d_model, config.d_ff
    params.declare(f"{prefix}.tok_emb", (config.vocab_size, d))
    params.declare(f"{prefix}.pos_emb", (config.max_seq_len, d))
    params.declare(f"{prefix}.emb_ln.gain", (d,), "ones")
    params.declare(f"{prefix}.emb_ln.bias", (d,), "zeros")
    for li in range(config.n_layers):
        p = f"{prefix}.layer{li}"
        for name in ("q", "k", "v", "o"):
            params.declare(f"{p}.attn.{name}.W", (d, d))
            params.declare(f"{p}.attn.{name}.b", (d,), "zeros")
        params.declare(f"{p}.attn_ln.gain", (d,), "ones")
        params.declare(f"{p}.attn_ln.bias", (d,), "zeros")
        params.declare(f"{p}.ffn.in.W", (d, f))
        params.declare(f"{p}.ffn.in.b", (f,), "zeros")
        params.declare(f"{p}.ffn.out.W", (f, d))
        params.declare(f"{p}.ffn.out.b", (d,), "zeros")
        params.declare(f"{p}.ffn_ln.gain", (d,), "ones")
        params.declare(f"{p}.ffn_ln.bias", (d,), "zeros")


def _lin(params, x, name):
    return nx.affine(x, params[f"{name}.W"], params[f"{name}.b"])


def _ln(params, x, name):
    return nx.layer_norm(x, params[f"{name}.gain"], params[f"{name}.bias"])


def encode(input_ids, global_mask, config: EncoderConfig, params: ParamStore,
           rng: np.random.Generator | None = None, prefix: str = "encoder") -> Tensor:
    """Run the encoder; returns hidden states of shape [N, d_model].

    Dropout is applied only when an ``rng`` is supplied.
    """
    ids = np.asarray(input_ids, dtype=np.intp)
    n = ids.size
    if n > config.max_seq_len:
        raise ValueError(f"sequence of {n} tokens exceeds max_seq_len={config.max_seq_len}")
    if n and (ids.min() < 0 or ids.max() >= config.vocab_size):
        bad = ids[(ids < 0) | (ids >= config.vocab_size)][0]
        raise IndexError(f"token id {bad} outside vocabulary of size {config.vocab_size}")
    mask = _as_mask(n, global_mask)
    rate = config.dropout_rate

    x = nx.add(nx.take_rows(params[f"{prefix}.tok_emb"], ids),
               nx.take_rows(params[f"{prefix}.pos_emb"], np.arange(n)))
    x = nx.dropout(_ln(params, x, f"{prefix}.emb_ln"), rate, rng)
    for li in range(config.n_layers):
        p = f"{prefix}.layer{li}"
        q = _lin(params, x, f"{p}.attn.q")
        k = _lin(params, x, f"{p}.attn.k")
        v = _lin(params, x, f"{p}.attn.v")
        a = windowed_global_attention(q, k, v, mask, config.window_w, config.n_heads)
        a = nx.dropout(_lin(params, a, f"{p}.attn.o"), rate, rng)
        x = _ln(params, nx.add(x, a), f"{p}.attn_ln")
        h = nx.gelu(_lin(params, x, f"{p}.ffn.in"))
        h = nx.dropout(_lin(params, h, f"{p}.ffn.out"), rate, rng)
        x = _ln(params, nx.add(x, h), f"{p}.ffn_ln")
    return x
