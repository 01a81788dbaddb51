"""A small dense-tensor engine with tape-based reverse-mode differentiation.

Operations record onto the active :class:`Tape` (entered with ``with``)
whenever one of their inputs requires a gradient; outside a tape every op
is a plain numpy evaluation. Everything is float64.
"""
from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from . import _kernels
from ._serial import decode_array, encode_array

LN2 = math.log(2.0)


class NonFiniteError(FloatingPointError):
    """An op produced NaN or infinity."""


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


_ACTIVE: contextvars.ContextVar = contextvars.ContextVar("archgen_tape", default=None)


class Tape:
    """Ordered record of primitive applications; replayed backwards once."""

    def __init__(self):
        self.nodes = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)
        self._token = None
        return False

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.nodes.append((out, inputs, vjp))

    def clear(self):
        self.nodes = []

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` keyed by leaf tensor name; clears the tape."""
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if not loss.requires_grad:
            raise TapeError("loss is detached from the tape (no input requires grad)")
        if not any(out is loss for out, _, _ in reversed(self.nodes)):
            raise TapeError("loss was not recorded on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for out, inputs, vjp in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    leaves[key] = inp
        result = {}
        for key, g in grads.items():
            t = leaves.get(key)
            if t is not None and t.name is not None:
                result[t.name] = g
        self.clear()
        return result


def backward(loss: Tensor, tape: Optional[Tape] = None) -> Dict[str, np.ndarray]:
    tape = tape if tape is not None else _ACTIVE.get()
    if tape is None:
        raise TapeError("no active tape")
    return tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record_op(out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap a forward result as a Tensor and record it on the active tape.

    ``vjp(g)`` must return one gradient (or None) per input.
    """
    if not np.isfinite(out).all():
        raise NonFiniteError("non-finite value produced by a tensor op")
    tape = _ACTIVE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        t = Tensor(out, True)
        tape.record(t, inputs, vjp)
        return t
    return Tensor(out)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return record_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return record_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return record_op(ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    return record_op(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    return record_op(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record_op(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    y = np.tanh(a.data)
    return record_op(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Tensor:
    mask = a.data > 0
    return record_op(a.data * mask, (a,), lambda g: (g * mask,))


def log_sigmoid(a) -> Tensor:
    x = a.data
    y = -np.logaddexp(0.0, -x)
    return record_op(y, (a,), lambda g: (g * 0.5 * (1.0 - np.tanh(0.5 * x)),))


def exp(a) -> Tensor:
    y = np.exp(a.data)
    return record_op(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    x = a.data
    return record_op(np.log(x), (a,), lambda g: (g / x,))


def _log1mexp(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(x > -LN2, np.log(-np.expm1(np.minimum(x, 0.0))),
                        np.log1p(-np.exp(np.minimum(x, -LN2))))


def log1mexp_t(a) -> Tensor:
    """Elementwise ``log(1 - exp(a))`` for ``a < 0``."""
    x = a.data
    if (x > 0).any():
        raise ValueError("log1mexp needs log-probabilities <= 0")
    if (x == 0).any():
        raise ValueError("probability mass 1: log(1 - P) is -inf")
    return record_op(_log1mexp(x), (a,), lambda g: (g * np.exp(x) / np.expm1(x),))


def log1mexp(logp: float) -> float:
    """Stable ``log(1 - exp(logp))``, branching at ``-ln 2``."""
    if logp > 0:
        raise ValueError(f"log1mexp needs logp <= 0, got {logp}")
    if logp == 0:
        raise ValueError("probability mass 1: log(1 - P) is -inf")
    if logp > -LN2:
        return math.log(-math.expm1(logp))
    return math.log1p(-math.exp(logp))


# --- reductions and softmax family ------------------------------------------

def sum_(a, axis=None) -> Tensor:
    shape = a.shape
    if axis is None:
        return record_op(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    ax = axis % a.data.ndim
    return record_op(a.data.sum(axis=ax), (a,),
                     lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),))


def mean(a, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def logsumexp(a) -> Tensor:
    """Log-sum-exp over the last axis."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    y = (m + np.log(s))[..., 0]
    p = e / s
    return record_op(y, (a,), lambda g: (g[..., None] * p,))


def log_softmax(a) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(y)
    return record_op(y, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def softmax(a) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    p = np.exp(z - np.log(np.exp(z).sum(axis=-1, keepdims=True)))
    return record_op(p, (a,), lambda g: (p * (g - (g * p).sum(axis=-1, keepdims=True)),))


# --- linear algebra and indexing --------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return record_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ax = axis % tensors[0].data.ndim
    sizes = [t.shape[ax] for t in tensors]
    edges = np.cumsum(sizes)[:-1]
    return record_op(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors),
                     lambda g: tuple(np.split(g, edges, axis=ax)))


def gather(a, idx) -> Tensor:
    """Rows of ``a`` selected by integer index (repeats allowed)."""
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    if a.data.ndim == 1:
        return record_op(a.data[idx], (a,), lambda g: (np.bincount(idx, weights=g, minlength=n),))
    return record_op(a.data[idx], (a,), lambda g: (_kernels.segment_sum(np.ascontiguousarray(g), idx, n),))


def segment_sum(a, seg, n_segments: int) -> Tensor:
    """Scatter-add rows of ``a`` into ``n_segments`` buckets in ascending row order."""
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != a.shape[0]:
        raise ValueError(f"segment ids length {seg.shape[0]} != rows {a.shape[0]}")
    out = _kernels.segment_sum(np.ascontiguousarray(a.data), seg, n_segments)
    return record_op(out, (a,), lambda g: (g[seg],))


def take(a, key) -> Tensor:
    """Basic (non-repeating) slicing, e.g. ``take(x, (slice(None), slice(0, 4)))``."""
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[key] = g
        return (out,)

    return record_op(a.data[key], (a,), vjp)


def reshape(a, shape) -> Tensor:
    old = a.shape
    return record_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


PRIMITIVES = (
    "matmul", "add", "sub", "mul", "neg", "scale", "sigmoid", "tanh", "relu", "log_sigmoid",
    "exp", "log", "log1mexp_t", "sum_", "mean", "logsumexp", "log_softmax", "softmax",
    "concat", "gather", "segment_sum", "take", "reshape",
)


def gather_add(parts: Sequence[tuple], bias: Optional[Tensor] = None) -> Tensor:
    """``sum_k table_k[idx_k] (+ bias)`` in one op; ``parts`` holds ``(table, idx)`` pairs."""
    tables = [t for t, _ in parts]
    idxs = [np.asarray(i, dtype=np.int64) for _, i in parts]
    out = tables[0].data[idxs[0]]
    for t, i in zip(tables[1:], idxs[1:]):
        out = out + t.data[i]
    inputs = tuple(tables)
    if bias is not None:
        out = out + bias.data
        inputs = inputs + (bias,)

    def vjp(g):
        g = np.ascontiguousarray(g)
        grads = [_kernels.segment_sum(g, i, t.shape[0]) for t, i in zip(tables, idxs)]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return record_op(out, inputs, vjp)


def gru(x: Tensor, h: Tensor, w_i: Tensor, w_h: Tensor, b_i: Tensor, b_h: Tensor) -> Tensor:
    """Fused gated recurrent update; weights pack [reset | update | candidate] columns."""
    hid = h.shape[-1]
    xd, hd, wi, wh = x.data, h.data, w_i.data, w_h.data
    gi = xd @ wi + b_i.data
    gh = hd @ wh + b_h.data
    r = 0.5 * (1.0 + np.tanh(0.5 * (gi[:, :hid] + gh[:, :hid])))
    z = 0.5 * (1.0 + np.tanh(0.5 * (gi[:, hid:2 * hid] + gh[:, hid:2 * hid])))
    ghn = gh[:, 2 * hid:]
    n = np.tanh(gi[:, 2 * hid:] + r * ghn)
    out = n + z * (hd - n)

    def vjp(g):
        dn = g * (1.0 - z) * (1.0 - n * n)
        dz = g * (hd - n) * z * (1.0 - z)
        dr = dn * ghn * r * (1.0 - r)
        dgi = np.concatenate([dr, dz, dn], axis=1)
        dgh = np.concatenate([dr, dz, dn * r], axis=1)
        return (dgi @ wi.T, g * z + dgh @ wh.T, xd.T @ dgi, hd.T @ dgh, dgi.sum(axis=0), dgh.sum(axis=0))

    return record_op(out, (x, h, w_i, w_h, b_i, b_h), vjp)


PRIMITIVES = PRIMITIVES + ("gather_add", "gru")


# --- layers --------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def gru_cell(x: Tensor, h: Tensor, w_i: Tensor, w_h: Tensor, b_i: Tensor, b_h: Tensor) -> Tensor:
    return gru(x, h, w_i, w_h, b_i, b_h)


def gru_cell_composed(x: Tensor, h: Tensor, w_i: Tensor, w_h: Tensor, b_i: Tensor, b_h: Tensor) -> Tensor:
    """Same update as :func:`gru` built from elementary ops (reference path)."""
    hid = h.shape[-1]
    gi = linear(x, w_i, b_i)
    gh = linear(h, w_h, b_h)
    r = sigmoid(add(take(gi, (slice(None), slice(0, hid))), take(gh, (slice(None), slice(0, hid)))))
    z = sigmoid(add(take(gi, (slice(None), slice(hid, 2 * hid))),
                    take(gh, (slice(None), slice(hid, 2 * hid)))))
    n = tanh(add(take(gi, (slice(None), slice(2 * hid, None))),
                 mul(r, take(gh, (slice(None), slice(2 * hid, None))))))
    return add(n, mul(z, sub(h, n)))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


# --- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps_hat": self.eps_hat,
            "step": self.step,
            "m": {k: encode_array(v) for k, v in self.m.items()},
            "v": {k: encode_array(v) for k, v in self.v.items()},
        }

    @classmethod
    def from_dict(cls, d: dict, params: Dict[str, Tensor]) -> "AdamState":
        st = cls(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps_hat=d["eps_hat"], step=d["step"])
        st.m = {k: decode_array(v).reshape(params[k].shape) for k, v in d["m"].items()}
        st.v = {k: decode_array(v).reshape(params[k].shape) for k, v in d["v"].items()}
        return st


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.dot(g.reshape(-1), g.reshape(-1))) for g in grads.values()))


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState,
              clip_norm: float = math.inf) -> float:
    """One Adam update in place, after joint global-norm clipping.

    Parameters without a gradient entry are treated as having zero gradient.
    Returns the pre-clip global gradient norm.
    """
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {k}")
    norm = global_norm(grads)
    factor = clip_norm / norm if norm > clip_norm else 1.0
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else g * factor
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)
    return norm


# --- finite-difference checking ----------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    failures: list
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.failures


def rel_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(fn: Callable[[Dict[str, Tensor]], Tensor], inputs: Dict[str, np.ndarray],
               step: float = 1e-5, tolerance: float = 1e-4, max_coords: Optional[int] = None,
               seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of scalar ``fn`` against central differences.

    With ``max_coords`` set, at most that many coordinates per input are
    probed (chosen by ``seed``).
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    def evaluate(arrs) -> float:
        return float(fn({k: Tensor(a) for k, a in arrs.items()}).data)

    with Tape() as tape:
        leaves = {k: Tensor(a.copy(), requires_grad=True, name=k) for k, a in arrays.items()}
        loss = fn(leaves)
    analytic = tape.backward(loss)

    rng = np.random.default_rng(seed)
    worst, checked, failures = 0.0, 0, []
    for k, a in arrays.items():
        flat = a.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        ga = analytic.get(k, np.zeros_like(a)).reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            hi = evaluate(arrays)
            flat[c] = orig - step
            lo = evaluate(arrays)
            flat[c] = orig
            num = (hi - lo) / (2 * step)
            err = rel_error(float(ga[c]), num)
            worst = max(worst, err)
            checked += 1
            if err > tolerance:
                failures.append((k, int(c), float(ga[c]), num))
    return GradCheckReport(worst, checked, failures, tolerance)
