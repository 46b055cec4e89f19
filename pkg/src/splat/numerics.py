"""Dense tensors with reverse-mode differentiation.

Only the handful of primitives the encoder and heads need are provided.
Every op builds a graph node only when one of its inputs requires a
gradient, so inference runs on plain numpy arrays with no bookkeeping.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

PARAMS_MAGIC = b"SPLATPS1"


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


class NonFiniteError(FloatingPointError):
    """Raised when a value that must be finite is NaN or infinite."""


class Tensor:
    """An n-d float array, optionally carrying a gradient slot.

    Tensors produced by ops are treated as immutable; only leaf parameters
    are updated in place by an optimizer.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if not (isinstance(data, np.ndarray) and data.dtype.kind == "f"):
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor, accumulating into leaf ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    parent._accum(pg)
                elif id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may broadcast over leading axes of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def add_scalars(*terms) -> Tensor:
    """Sum of 0-d tensors."""
    terms = [as_tensor(t) for t in terms]
    out = np.asarray(sum(float(t.data) for t in terms))
    return _node(out, terms, lambda g: tuple(g for _ in terms))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), backward)


def affine(x, W, b) -> Tensor:
    """``x @ W + b`` for ``x`` of shape [n, d_in]."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: x has shape {x.shape} but W has shape {W.shape}")
    if b.shape != (W.shape[1],):
        raise ShapeError(f"affine: bias has shape {b.shape}, expected ({W.shape[1]},) for W {W.shape}")
    out = x.data @ W.data + b.data

    def backward(g):
        return g @ W.data.T, x.data.T @ g, g.sum(axis=0)

    return _node(out, (x, W, b), backward)


def dot_scores(a, b) -> Tensor:
    """Pairwise dot products ``a @ b.T`` for row-vector sets."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"dot_scores: rows of {a.shape} and {b.shape} differ in width")
    out = a.data @ b.data.T

    def backward(g):
        return g @ b.data, g.T @ a.data

    return _node(out, (a, b), backward)


def take_rows(x, idx) -> Tensor:
    """Gather rows ``x[idx]``; gradients scatter-add back."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _node(out, (x,), backward)


def concat(parts, axis=-1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, parts, backward)


def gelu(x) -> Tensor:
    """GeLU, tanh approximation."""
    x = as_tensor(x)
    c = math.sqrt(2.0 / math.pi)
    x2 = x.data * x.data
    t = np.tanh(c * x.data * (1.0 + 0.044715 * x2))
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = c * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _node(out, (x,), backward)


def dropout(x, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. A no-op when ``rate == 0`` or ``rng`` is None."""
    x = as_tensor(x)
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm: last dimension is empty")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gain, bias), backward)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what}: input contains NaN or Inf")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    _check_finite(x.data, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _node(p, (x,), backward)


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    return z - np.log(np.exp(z).sum())


def cross_entropy_from_scores(scores, gt_index: int) -> Tensor:
    """``-log softmax(scores)[gt_index]`` for a 1-d score vector."""
    scores = as_tensor(scores)
    k = scores.shape[0]
    if not 0 <= gt_index < k:
        raise IndexError(f"gold index {gt_index} outside [0, {k})")
    _check_finite(scores.data, "cross_entropy_from_scores")
    logp = log_softmax_np(scores.data)
    p = np.exp(logp)

    def backward(g):
        grad = p.copy()
        grad[gt_index] -= 1.0
        return (grad * g,)

    return _node(np.asarray(-logp[gt_index]), (scores,), backward)


def mean_cross_entropy(scores, candidates, gold) -> Tensor:
    """Mean over rows of cross-entropy restricted to per-row candidate subsets.

    ``scores`` is [R, C]; ``candidates[r]`` lists the columns competing in row
    ``r`` and ``gold[r]`` indexes into that list.  Columns outside a row's
    subset take no part in its normalizer.
    """
    scores = as_tensor(scores)
    _check_finite(scores.data, "mean_cross_entropy")
    n = len(candidates)
    if n == 0:
        raise ShapeError("mean_cross_entropy over zero rows")
    total = 0.0
    pieces = []
    for r, (cols, gt) in enumerate(zip(candidates, gold)):
        cols = np.asarray(cols, dtype=np.intp)
        if not 0 <= gt < len(cols):
            raise IndexError(f"row {r}: gold index {gt} outside [0, {len(cols)})")
        logp = log_softmax_np(scores.data[r, cols])
        total -= logp[gt]
        pieces.append((r, cols, gt, np.exp(logp)))

    def backward(g):
        grad = np.zeros_like(scores.data)
        for r, cols, gt, p in pieces:
            d = p.copy()
            d[gt] -= 1.0
            grad[r, cols] += d
        return (grad * (g / n),)

    return _node(np.asarray(total / n), (scores,), backward)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def truncated_normal(rng: np.random.Generator, shape, std=0.02, bound=2.0) -> np.ndarray:
    """Normal draws resampled until they fall within ``bound`` standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


class ParamStore:
    """Named trainable tensors, created deterministically from a seed.

    Parameters are initialised in the order they are declared, each from its
    own child generator keyed by path, so adding a parameter never perturbs
    the values of the others.
    """

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._params: dict[str, Tensor] = {}

    def _rng_for(self, path: str) -> np.random.Generator:
        key = [self.rng_seed] + list(path.encode())
        return np.random.default_rng(key)

    def declare(self, path: str, shape, init="normal") -> Tensor:
        """``init`` is "normal", "zeros", "ones" or a number to fill with."""
        if path in self._params:
            raise KeyError(f"parameter {path!r} declared twice")
        shape = tuple(int(s) for s in shape)
        if init == "normal":
            data = truncated_normal(self._rng_for(path), shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif init == "ones":
            data = np.ones(shape)
        elif isinstance(init, (int, float)) and not isinstance(init, bool):
            data = np.full(shape, float(init))
        else:
            raise ValueError(f"unknown initializer {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def copy(self) -> "ParamStore":
        out = ParamStore(self.rng_seed)
        for k, t in self._params.items():
            out._params[k] = Tensor(t.data.copy(), requires_grad=True)
        return out

    def load_from(self, other: "ParamStore", strict: bool = False) -> list[str]:
        """Copy values for every shared path of matching shape; returns copied paths."""
        copied = []
        for k, t in self._params.items():
            if k in other and other[k].shape == t.shape:
                t.data = other[k].data.copy()
                copied.append(k)
            elif strict:
                raise KeyError(f"parameter {k!r} missing or mis-shaped in source store")
        return copied

    def save(self, path):
        """Binary layout: magic, u32 header length, JSON header, little-endian float64 payload."""
        header = {
            "rng_seed": self.rng_seed,
            "params": [[k, list(t.shape)] for k, t in self._params.items()],
        }
        hbytes = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(PARAMS_MAGIC)
            fh.write(struct.pack("<I", len(hbytes)))
            fh.write(hbytes)
            for t in self._params.values():
                fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        raw = Path(path).read_bytes()
        if raw[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
            raise ValueError(f"{path}: not a parameter file (bad magic)")
        off = len(PARAMS_MAGIC)
        (hlen,) = struct.unpack("<I", raw[off : off + 4])
        off += 4
        header = json.loads(raw[off : off + hlen])
        off += hlen
        store = cls(header["rng_seed"])
        for name, shape in header["params"]:
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
            store._params[name] = Tensor(data, requires_grad=True)
        if off != len(raw):
            raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
        return store


def grad_check(f, params: ParamStore, eps: float = 1e-5, n_coords: int = 200,
               rng: np.random.Generator | None = None, names=None, floor: float = 1e-6):
    """Compare analytic gradients of a scalar ``f(params)`` with central differences.

    Samples ``n_coords`` coordinates uniformly over all values of the chosen
    parameters.  Relative error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.

    Returns ``(max_rel_err, records)`` where records hold
    ``(name, flat_index, analytic, numeric)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    names = list(params) if names is None else list(names)
    params.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check: loss is not finite")
    loss.backward()
    analytic = {k: (params[k].grad if params[k].grad is not None else np.zeros(params[k].shape))
                for k in names}

    sizes = np.array([params[k].data.size for k in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    records = []
    for flat in np.sort(picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        idx = int(flat - offsets[which])
        arr = params[name].data.reshape(-1)
        orig = arr[idx]
        arr[idx] = orig + eps
        fp = float(np.sum(f(params).data))
        arr[idx] = orig - eps
        fm = float(np.sum(f(params).data))
        arr[idx] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteError(f"grad_check: non-finite loss perturbing {name}[{idx}]")
        num = (fp - fm) / (2 * eps)
        ana = float(analytic[name].reshape(-1)[idx])
        rel = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, rel)
        records.append((name, idx, ana, num))
    params.zero_grad()
    return worst, records
