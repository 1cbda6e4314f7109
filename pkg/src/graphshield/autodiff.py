"""Reverse-mode automatic differentiation over dense float64 arrays.

Deliberately small: only the primitives the message-passing policy and its
training loss need, each with an exact gradient, plus Adam, global gradient
clipping, parameter containers and checkpoint io. Every op output is
screened for NaN/Inf so a bad batch fails at the op that produced it rather
than three modules later.

Segmented ops (segment_sum, row_max_pool) expect their segment ids sorted
non-decreasing; batched graphs are laid out that way on purpose so the
reductions run as contiguous reduceat calls.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonFinite, ShapeMismatch

Array = np.ndarray


def _check_finite(data: Array, where: str) -> None:
    # A full isfinite scan per op is wasteful; the sum of a float64 array is
    # finite iff every element is, short of magnitudes ~1e300 that nothing
    # here produces legitimately.
    s = float(np.sum(data))
    if not math.isfinite(s):
        if not np.all(np.isfinite(data)):
            raise NonFinite(f"non-finite values out of {where}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the functions below do the work.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.size != 1:
            raise ValueError("backward() starts from a scalar")
        nodes: dict[int, Tensor] = {}
        children_left: dict[int, int] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in nodes:
                continue
            nodes[id(t)] = t
            for p in t._parents:
                children_left[id(p)] = children_left.get(id(p), 0) + 1
                stack.append(p)
        self.grad = np.ones_like(self.data)
        ready = [self]
        while ready:
            t = ready.pop()
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)
            for p in t._parents:
                children_left[id(p)] -= 1
                if children_left[id(p)] == 0:
                    ready.append(p)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that skips recording the backward graph."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def _result(data: Array, parents: tuple, backward_fn, where: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    _check_finite(data, where)
    out.grad = None
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: Array, owned: bool = False) -> None:
    # owned=True promises g is a fresh array the caller will not reuse, so
    # the first accumulation can adopt it instead of copying; without it g
    # may be (a view of) the child's gradient buffer.
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned else np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _accum_fit(t: Tensor, g: Array, negate: bool = False) -> None:
    """Accumulate a possibly-broadcast gradient onto an add/sub operand."""
    if not t.requires_grad:
        return
    r = _unbroadcast(-g if negate else g, t.shape)
    _accum(t, r, owned=negate or r is not g)


# -- arithmetic ----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g: Array) -> None:
        _accum_fit(a, g)
        _accum_fit(b, g)

    return _result(data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g: Array) -> None:
        _accum_fit(a, g)
        _accum_fit(b, g, negate=True)

    return _result(data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape), owned=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape), owned=True)

    return _result(data, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape), owned=True)
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape), owned=True)

    return _result(data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accum(a, -g, owned=True)

    return _result(-a.data, (a,), backward, "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            _accum(a, g @ b.data.T, owned=True)
        if b.requires_grad:
            _accum(b, a.data.T @ g, owned=True)

    return _result(data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose expects 2-d, got {a.shape}")

    def backward(g: Array) -> None:
        _accum(a, g.T)

    return _result(a.data.T.copy(), (a,), backward, "transpose")


# -- elementwise nonlinearities ------------------------------------------


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g: Array) -> None:
        _accum(a, g * (1.0 - data * data), owned=True)

    return _result(data, (a,), backward, "tanh")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g: Array) -> None:
        _accum(a, g * data, owned=True)

    return _result(data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g: Array) -> None:
        _accum(a, g / a.data, owned=True)

    return _result(data, (a,), backward, "log")


def square(a: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accum(a, g * 2.0 * a.data, owned=True)

    return _result(a.data * a.data, (a,), backward, "square")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, lo, hi)
    passthrough = (a.data >= lo) & (a.data <= hi)

    def backward(g: Array) -> None:
        _accum(a, g * passthrough, owned=True)

    return _result(data, (a,), backward, "clip")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to the first operand."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"minimum {a.shape} vs {b.shape}")
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g: Array) -> None:
        _accum(a, g * take_a, owned=True)
        _accum(b, g * ~take_a, owned=True)

    return _result(data, (a, b), backward, "minimum")


# -- reductions and reshaping --------------------------------------------


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy(), owned=True)
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.shape).copy(), owned=True)

    return _result(np.asarray(data), (a,), backward, "sum")


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.shape).copy(), owned=True)
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge / count, a.shape).copy(), owned=True)

    return _result(np.asarray(data), (a,), backward, "mean")


def concat(parts: list, axis: int) -> Tensor:
    tensors = [_wrap(p) for p in parts]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: Array) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _result(data, tuple(tensors), backward, "concat")


def softmax(a: Tensor) -> Tensor:
    """Row softmax over the last axis of a 2-d tensor."""
    if a.ndim != 2:
        raise ShapeMismatch(f"softmax expects 2-d, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def backward(g: Array) -> None:
        inner = (g * data).sum(axis=1, keepdims=True)
        _accum(a, data * (g - inner), owned=True)

    return _result(data, (a,), backward, "softmax")


# -- gather/scatter and segmented reductions -----------------------------


def gather_rows(a: Tensor, index) -> Tensor:
    """Pick rows of a 2-d tensor; duplicate rows sum their gradients."""
    if a.ndim != 2:
        raise ShapeMismatch(f"gather_rows expects 2-d, got {a.shape}")
    idx = np.asarray(index, dtype=np.intp)
    data = a.data[idx]

    def backward(g: Array) -> None:
        if not a.requires_grad:
            return
        acc = np.zeros_like(a.data)
        if idx.size:
            if np.all(np.diff(idx) >= 0):
                # Sorted indices: segment-reduce instead of scatter-add.
                uniq, first = np.unique(idx, return_index=True)
                reps = idx.size // uniq.size
                if uniq.size * reps == idx.size and np.array_equal(
                    idx, np.repeat(uniq, reps)
                ):
                    acc[uniq] = g.reshape(uniq.size, reps, -1).sum(axis=1)
                else:
                    acc[uniq] = np.add.reduceat(g, first, axis=0)
            else:
                np.add.at(acc, idx, g)
        _accum(a, acc, owned=True)

    return _result(data, (a,), backward, "gather_rows")


def _segment_layout(seg_ids: Array, num_segments: int):
    if seg_ids.size and np.any(np.diff(seg_ids) < 0):
        raise ValueError("segment ids must be sorted non-decreasing")
    if seg_ids.size and (seg_ids[0] < 0 or seg_ids[-1] >= num_segments):
        raise ValueError("segment id out of range")
    counts = np.bincount(seg_ids, minlength=num_segments)
    starts = np.zeros(num_segments, dtype=np.intp)
    if num_segments > 1:
        starts[1:] = np.cumsum(counts[:-1])
    return counts, starts


def _uniform_length(counts: Array) -> int | None:
    """Common segment length when all segments are equally long, else None.

    Equal-length segments let the reductions run as a reshape plus an axis
    reduce, which is much faster than reduceat; batches of copies of one
    graph hit this path on every node-level op.
    """
    if counts.size == 0:
        return None
    lo = int(counts.min())
    return lo if lo > 0 and lo == int(counts.max()) else None


def segment_max_values(data, seg_ids, num_segments: int, fill: float = 0.0) -> Array:
    """Per-segment max over rows of a plain array (no gradient tracking).

    Segment ids must be sorted non-decreasing; empty segments get ``fill``.
    """
    arr = np.asarray(data, dtype=np.float64)
    ids = np.asarray(seg_ids, dtype=np.intp)
    counts, starts = _segment_layout(ids, num_segments)
    length = _uniform_length(counts)
    if length is not None and arr.shape[0]:
        return arr.reshape((num_segments, length) + arr.shape[1:]).max(axis=1)
    out = np.full((num_segments,) + arr.shape[1:], fill, dtype=np.float64)
    nonempty = counts > 0
    if arr.shape[0] and nonempty.any():
        out[nonempty] = np.maximum.reduceat(arr, starts[nonempty], axis=0)
    return out


def segment_sum(a: Tensor, seg_ids, num_segments: int) -> Tensor:
    """Sum rows by segment id; empty segments produce zero rows."""
    if a.ndim != 2:
        raise ShapeMismatch(f"segment_sum expects 2-d, got {a.shape}")
    ids = np.asarray(seg_ids, dtype=np.intp)
    counts, starts = _segment_layout(ids, num_segments)
    length = _uniform_length(counts)
    if length is not None and a.shape[0]:
        data = a.data.reshape(num_segments, length, a.shape[1]).sum(axis=1)
    else:
        data = np.zeros((num_segments, a.shape[1]), dtype=np.float64)
        nonempty = counts > 0
        if a.shape[0]:
            data[nonempty] = np.add.reduceat(a.data, starts[nonempty], axis=0)

    def backward(g: Array) -> None:
        if length is not None:
            _accum(a, np.repeat(g, length, axis=0), owned=True)
        else:
            _accum(a, g[ids], owned=True)

    return _result(data, (a,), backward, "segment_sum")


def _periodic_pattern(counts: Array, period: int | None, rows: int):
    # Segment sizes repeating every `period` segments let the ragged max run
    # as a handful of strided axis reductions instead of one reduceat. Only
    # the size pattern must repeat, not the row contents.
    if not period or period <= 0 or counts.size % period:
        return None
    copies = counts.size // period
    if copies < 2 or rows % copies:
        return None
    pattern = counts.reshape(copies, period)
    if not (pattern == pattern[0]).all():
        return None
    ends = np.cumsum(pattern[0])
    if ends[-1] * copies != rows:
        return None
    return copies, ends - pattern[0], ends


def row_max_pool(
    a: Tensor, seg_ids, num_segments: int, period: int | None = None
) -> Tensor:
    """Elementwise max of rows by segment id.

    Empty segments produce zero rows (the neutral element for an empty
    neighborhood). The gradient routes to the first row attaining the max
    in each segment and column. `period` is an optional layout hint: the
    caller promises nothing by passing it, it only invites a check for a
    repeating segment-size pattern.
    """
    if a.ndim != 2:
        raise ShapeMismatch(f"row_max_pool expects 2-d, got {a.shape}")
    ids = np.asarray(seg_ids, dtype=np.intp)
    counts, starts = _segment_layout(ids, num_segments)
    cols = a.shape[1]
    length = _uniform_length(counts)
    periodic = None
    if length is None and a.shape[0]:
        periodic = _periodic_pattern(counts, period, a.shape[0])
    nonempty = counts > 0
    if length is not None and a.shape[0]:
        data = a.data.reshape(num_segments, length, cols).max(axis=1)
    elif periodic is not None:
        copies, seg_lo, seg_hi = periodic
        a3 = a.data.reshape(copies, -1, cols)
        data3 = np.zeros((copies, period, cols), dtype=np.float64)
        for i in range(period):
            if seg_lo[i] < seg_hi[i]:
                data3[:, i] = a3[:, seg_lo[i] : seg_hi[i]].max(axis=1)
        data = data3.reshape(num_segments, cols)
    else:
        data = np.zeros((num_segments, cols), dtype=np.float64)
        if a.shape[0] and nonempty.any():
            data[nonempty] = np.maximum.reduceat(a.data, starts[nonempty], axis=0)

    def backward(g: Array) -> None:
        if not a.requires_grad:
            return
        acc = np.zeros_like(a.data)
        if a.shape[0] and nonempty.any():
            # Gradient goes to the first row attaining the per-segment max,
            # per column; each column picks one row per segment and segments
            # cover disjoint row ranges, so the (row, column) targets are
            # unique and plain assignment replaces scatter-add.
            if length is not None:
                arg = a.data.reshape(num_segments, length, cols).argmax(axis=1)
                argrows = arg + starts[:, None]
                grad_rows = g
            elif periodic is not None:
                copies, seg_lo, seg_hi = periodic
                a3 = a.data.reshape(copies, -1, cols)
                acc3 = acc.reshape(copies, -1, cols)
                g3 = g.reshape(copies, period, cols)
                copy_idx = np.arange(copies, dtype=np.intp)[:, None]
                col_idx = np.arange(cols, dtype=np.intp)[None, :]
                for i in range(period):
                    if seg_lo[i] < seg_hi[i]:
                        arg = a3[:, seg_lo[i] : seg_hi[i]].argmax(axis=1)
                        acc3[copy_idx, seg_lo[i] + arg, col_idx] = g3[:, i]
                _accum(a, acc, owned=True)
                return
            else:
                hit = a.data == data[ids]
                row_ids = np.arange(a.shape[0], dtype=np.intp)[:, None]
                candidates = np.where(hit, row_ids, a.shape[0])
                argrows = np.minimum.reduceat(candidates, starts[nonempty], axis=0)
                grad_rows = g[nonempty]
            col_idx = np.tile(np.arange(cols, dtype=np.intp), argrows.shape[0])
            acc[argrows.ravel(), col_idx] = grad_rows.ravel()
        _accum(a, acc, owned=True)

    return _result(data, (a,), backward, "row_max_pool")


# -- parameters ----------------------------------------------------------


@dataclass
class LinearParams:
    """One dense layer y = x @ W.T + b."""

    W: Tensor  # (fan_out, fan_in)
    b: Tensor  # (1, fan_out)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> LinearParams:
    bound = math.sqrt(1.0 / fan_in)
    W = Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)), requires_grad=True)
    b = Tensor(np.zeros((1, fan_out)), requires_grad=True)
    return LinearParams(W=W, b=b)


def linear(x: Tensor, lp: LinearParams) -> Tensor:
    return add(matmul(x, transpose(lp.W)), lp.b)


class ParamSet:
    """Named linear layers making up one model."""

    def __init__(self, entries: dict | None = None):
        self.entries: dict[str, LinearParams] = dict(entries or {})

    def __getitem__(self, name: str) -> LinearParams:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self) -> list:
        return list(self.entries)

    def tensors(self):
        for name, lp in self.entries.items():
            yield f"{name}.W", lp.W
            yield f"{name}.b", lp.b

    def zero_grad(self) -> None:
        for _, t in self.tensors():
            t.zero_grad()

    def collect_grads(self) -> dict:
        return {name: t.grad for name, t in self.tensors() if t.grad is not None}

    def n_parameters(self) -> int:
        return sum(t.size for _, t in self.tensors())


# -- optimization --------------------------------------------------------


class AdamState:
    def __init__(self) -> None:
        self.step = 0
        self.m: dict[str, Array] = {}
        self.v: dict[str, Array] = {}


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale the whole gradient dict so its global L2 norm is <= max_norm.

    Returns the pre-clip norm.
    """
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_step(
    params: ParamSet,
    grads: dict,
    state: AdamState,
    lr: float = 3e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update with bias correction; parameters without a gradient
    are left untouched. Raises NonFinite if any parameter goes bad."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, tensor in params.tensors():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if not np.all(np.isfinite(tensor.data)):
            raise NonFinite(f"parameter {name} went non-finite during Adam")


# -- verification --------------------------------------------------------


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Worst relative error of f's gradient at x versus central differences.

    f maps a Tensor to a scalar Tensor and must be deterministic. The error
    denominator is max(|analytic|, 1e-8) per element.
    """
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    worst = 0.0
    it = np.nditer(x.data, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        keep = x.data[idx]
        x.data[idx] = keep + h
        hi = float(f(x).data)
        x.data[idx] = keep - h
        lo = float(f(x).data)
        x.data[idx] = keep
        numeric = (hi - lo) / (2.0 * h)
        a = float(analytic[idx])
        err = abs(a - numeric) / max(abs(a), 1e-8)
        worst = max(worst, err)
        it.iternext()
    return worst


# -- checkpoints ---------------------------------------------------------

CHECKPOINT_FORMAT = "graphshield-params-v1"


def _encode_array(arr: Array) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode(
        "ascii"
    )


def _decode_array(blob: str, shape) -> Array:
    flat = np.frombuffer(base64.b64decode(blob), dtype="<f8")
    return flat.reshape(tuple(shape)).copy()


def save_checkpoint(path, params: ParamSet, config: dict) -> None:
    """Write parameters and their model config as one JSON document.

    Arrays go through base64 little-endian float64, so a round trip is
    bit-exact on any platform.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": config,
        "params": {
            name: {
                "W_shape": list(lp.W.shape),
                "W": _encode_array(lp.W.data),
                "b_shape": list(lp.b.shape),
                "b": _encode_array(lp.b.data),
            }
            for name, lp in params.entries.items()
        },
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a recognized checkpoint: {path}")
    entries = {}
    for name, rec in doc["params"].items():
        entries[name] = LinearParams(
            W=Tensor(_decode_array(rec["W"], rec["W_shape"]), requires_grad=True),
            b=Tensor(_decode_array(rec["b"], rec["b_shape"]), requires_grad=True),
        )
    return ParamSet(entries), doc["config"]
