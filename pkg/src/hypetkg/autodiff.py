"""Dense reverse-mode automatic differentiation on top of numpy.

Every value is a float64 array.  Elementwise binary ops require equal shapes,
or one operand that is a scalar (0-d or size 1); anything else must go through
an explicit :func:`broadcast_to` / :meth:`Tensor.reshape`.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "linear",
    "concat",
    "stack",
    "broadcast_to",
    "exp",
    "log",
    "cos",
    "sin",
    "tanh",
    "sigmoid",
    "relu",
    "logsigmoid",
    "softmax",
    "blend",
    "where",
    "mean_over",
    "layer_norm",
    "dropout",
    "cosine",
    "gather",
    "segment_sum",
    "segment_mean",
    "segment_softmax",
    "complex_rotate",
    "no_grad_value",
    "no_grad",
]


class ShapeError(ValueError):
    pass


def _is_scalar_shape(shape: tuple[int, ...]) -> bool:
    return len(shape) == 0 or int(np.prod(shape)) == 1


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


class Tensor:
    """A node in the computation graph.

    ``grad`` is only populated for tensors with ``requires_grad`` after
    :meth:`backward` has run on some descendant.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
        name: str | None = None,
    ):
        if type(data) is np.ndarray and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # -- reverse pass -------------------------------------------------------
    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``grad``."""
        if grad is None:
            if self.size != 1:
                raise ValueError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): np.array(grad, copy=True)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            if isinstance(node, Parameter):
                node._accumulate(g)
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = np.array(pg, dtype=np.float64, copy=True)

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return mul(_sum(self, axis, keepdims), 1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _transpose(self, axes or None)

    @property
    def T(self) -> "Tensor":
        return _transpose(self, None)


class Parameter(Tensor):
    """A named, trainable leaf."""

    __slots__ = ("trainable",)

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=trainable, name=name)
        self.trainable = trainable


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def no_grad_value(x: Tensor) -> Tensor:
    """Detached copy: same values, no graph."""
    return Tensor(x.data)


_GRAD_ENABLED = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if not _GRAD_ENABLED or not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or _is_scalar_shape(a.shape) or _is_scalar_shape(b.shape):
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


# -- elementwise binary -----------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _node(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        )

    return _node(out, (a, b), backward)


def blend(gate, x, y) -> Tensor:
    """``gate * x + (1 - gate) * y`` for a scalar gate."""
    gate, x, y = as_tensor(gate), as_tensor(x), as_tensor(y)
    if not _is_scalar_shape(gate.shape):
        raise ShapeError(f"blend: gate must be scalar, got {gate.shape}")
    if x.shape != y.shape:
        raise ShapeError(f"blend: shapes {x.shape} and {y.shape} differ")
    return add(mul(gate, x), mul(sub(1.0, gate), y))


def where(mask, x, y) -> Tensor:
    """Pick rows/elements of ``x`` where ``mask`` is True, else of ``y``.

    ``mask`` is a constant bool array broadcastable to the common shape.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"where: shapes {x.shape} and {y.shape} differ")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(m, x.data, y.data)

    def backward(g):
        return ((x, np.where(m, g, 0.0)), (y, np.where(m, 0.0, g)))

    return _node(out, (x, y), backward)


# -- linear algebra ---------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product; batched operands must share leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError(f"matmul: scalar operand {a.shape} @ {b.shape}")
    if a.ndim > 2 or b.ndim > 2:
        if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    elif a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.ndim == 1 and b.ndim == 1:
            return ((a, g * b.data), (b, g * a.data))
        if a.ndim == 1:
            return ((a, b.data @ g), (b, np.outer(a.data, g)))
        if b.ndim == 1:
            return ((a, np.outer(g, b.data)), (b, a.data.T @ g))
        return (
            (a, np.matmul(g, np.swapaxes(b.data, -1, -2))),
            (b, np.matmul(np.swapaxes(a.data, -1, -2), g)),
        )

    return _node(out, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T (+ bias)`` with ``x`` of shape (..., in) and ``weight`` (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not fit weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        flat_g = g.reshape(-1, g.shape[-1])
        flat_x = x.data.reshape(-1, x.shape[-1])
        res = [(x, g @ weight.data), (weight, flat_g.T @ flat_x)]
        if bias is not None:
            res.append((bias, flat_g.sum(axis=0)))
        return res

    return _node(out, parents, backward)


# -- shape manipulation -----------------------------------------------------
def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input")
    ax = axis % tensors[0].ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1 :] != ref[:ax] + ref[ax + 1 :]:
            raise ShapeError(f"concat: shapes {ref} and {t.shape} are incompatible on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        res = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            res.append((t, g[tuple(sl)]))
        return res

    return _node(out, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"stack: shapes {shape} and {t.shape} differ")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return [(t, parts[i]) for i, t in enumerate(tensors)]

    return _node(out, tensors, backward)


def broadcast_to(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    out = np.broadcast_to(x.data, shape).copy()
    lead = len(shape) - x.ndim

    def backward(g):
        red = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and red.shape[i] != 1)
        if axes:
            red = red.sum(axis=axes, keepdims=True)
        return ((x, red.reshape(x.shape)),)

    return _node(out, (x,), backward)


def _reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return ((x, g.reshape(x.shape)),)

    return _node(out, (x,), backward)


def _transpose(x: Tensor, axes) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return ((x, np.transpose(g, inv)),)

    return _node(out, (x,), backward)


def _getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return ((x, full),)

    return _node(np.array(out, copy=True), (x,), backward)


def _sum(x: Tensor, axis, keepdims: bool) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((x, np.broadcast_to(g, x.shape)),)

    return _node(np.asarray(out), (x,), backward)


# -- elementwise unary ------------------------------------------------------
def _unary(x, fn, dfn) -> Tensor:
    x = as_tensor(x)
    out = fn(x.data)

    def backward(g):
        return ((x, g * dfn(x.data, out)),)

    return _node(out, (x,), backward)


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda v, o: o)


def log(x) -> Tensor:
    return _unary(x, np.log, lambda v, o: 1.0 / v)


def cos(x) -> Tensor:
    return _unary(x, np.cos, lambda v, o: -np.sin(v))


def sin(x) -> Tensor:
    return _unary(x, np.sin, lambda v, o: np.cos(v))


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda v, o: 1.0 - o * o)


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x) -> Tensor:
    return _unary(x, _sigmoid_np, lambda v, o: o * (1.0 - o))


def relu(x) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0.0), lambda v, o: (v > 0).astype(np.float64))


def logsigmoid(x) -> Tensor:
    """log(sigmoid(x)) without overflow: ``-logaddexp(0, -x)``."""
    return _unary(x, lambda v: -np.logaddexp(0.0, -v), lambda v, o: _sigmoid_np(-v))


# -- reductions / normalisation ---------------------------------------------
def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``.  ``mask`` (bool, True = keep) zeroes excluded entries."""
    x = as_tensor(x)
    v = x.data
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((x, out * (g - dot)),)

    return _node(out, (x,), backward)


def mean_over(tensors: Sequence[Tensor]) -> Tensor:
    """Mean of a non-empty list of same-shape tensors."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("mean_over: empty list")
    return mul(stack(tensors, axis=0).sum(axis=0), 1.0 / len(tensors))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis, then scale by ``gain`` and shift by ``bias`` (both (d,))."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    mu = x.data.sum(axis=-1, keepdims=True) / d
    xc = x.data - mu
    var = (xc * xc).sum(axis=-1, keepdims=True) / d
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return ((x, dx), (gain, dgain), (bias, dbias))

    return _node(out, (x, gain, bias), backward)


def dropout(x, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    x = as_tensor(x)
    if rng is None or rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError(f"dropout rate must be < 1, got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(x, Tensor(keep))


def cosine(a, b, eps: float = 1e-12) -> Tensor:
    """Cosine similarity along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine: shapes {a.shape} and {b.shape} differ")
    num = mul(a, b).sum(axis=-1)
    na = exp(mul(log(add(mul(a, a).sum(axis=-1), eps)), 0.5))
    nb = exp(mul(log(add(mul(b, b).sum(axis=-1), eps)), 0.5))
    return div(num, mul(na, nb))


# -- indexing / segments ----------------------------------------------------
def gather(x, ids) -> Tensor:
    """Rows ``x[ids]``; repeated ids accumulate gradient."""
    x = as_tensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[0]):
        raise IndexError(f"gather: ids out of range for {x.shape[0]} rows")
    out = x.data[ids]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, ids, g)
        return ((x, full),)

    return _node(out, (x,), backward)


def segment_sum(x, segments, n_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``n_segments`` buckets given per-row segment ids."""
    x = as_tensor(x)
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (x.shape[0],):
        raise ShapeError(f"segment_sum: {segments.shape} segment ids for {x.shape[0]} rows")
    out = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(out, segments, x.data)

    def backward(g):
        return ((x, g[segments]),)

    return _node(out, (x,), backward)


def segment_mean(x, segments, n_segments: int) -> Tensor:
    """Per-segment mean; empty segments yield zeros."""
    segments = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(segments, minlength=n_segments).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    x = as_tensor(x)
    inv = inv.reshape((n_segments,) + (1,) * (x.ndim - 1))
    summed = segment_sum(x, segments, n_segments)
    return mul(summed, Tensor(np.broadcast_to(inv, summed.shape).copy()))


def segment_softmax(x, segments, n_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id, independently per column."""
    x = as_tensor(x)
    segments = np.asarray(segments, dtype=np.int64)
    peak = np.full((n_segments,) + x.shape[1:], -np.inf)
    np.maximum.at(peak, segments, x.data)
    shifted = sub(x, Tensor(peak[segments]))
    e = exp(shifted)
    denom = segment_sum(e, segments, n_segments)
    return div(e, gather(denom, segments))


# -- complex rotation -------------------------------------------------------
def complex_rotate(e, r, unit_phase: bool = True) -> Tensor:
    """Rotate ``e`` (first half real, second half imaginary) by phases built from ``r``.

    The raw phase for pair ``j`` is ``cos(r[j]) + i*sin(r[d/2 + j])``.  That number
    only has modulus 1 when both angles agree, so by default it is divided by its
    modulus, which keeps the map a pure rotation.  ``unit_phase=False`` applies the
    raw phase as is.  Leading axes are batched.
    """
    e, r = as_tensor(e), as_tensor(r)
    if e.shape != r.shape:
        raise ShapeError(f"complex_rotate: shapes {e.shape} and {r.shape} differ")
    d = e.shape[-1]
    if d % 2:
        raise ShapeError(f"complex_rotate: dimension {d} is odd")
    h = d // 2
    re_e, im_e = e[..., :h], e[..., h:]
    re_r, im_r = cos(r[..., :h]), sin(r[..., h:])
    if unit_phase:
        modulus = _modulus(re_r, im_r)
        re_r, im_r = div(re_r, modulus), div(im_r, modulus)
    re = sub(mul(re_e, re_r), mul(im_e, im_r))
    im = add(mul(re_e, im_r), mul(im_e, re_r))
    return concat([re, im], axis=-1)


def _modulus(re: Tensor, im: Tensor, floor: float = 1e-12) -> Tensor:
    sq = re.data * re.data + im.data * im.data
    out = np.sqrt(np.maximum(sq, floor * floor))

    def backward(g):
        live = sq > floor * floor
        scale = np.where(live, g / out, 0.0)
        return ((re, scale * re.data), (im, scale * im.data))

    return _node(out, (re, im), backward)


def parameters_grad_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return total**0.5
