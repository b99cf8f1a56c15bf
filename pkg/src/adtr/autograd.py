"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap numpy arrays in a fixed precision (float32 by default,
float64 for gradient-check builds). Every operation that participates in
differentiation records its inputs and an adjoint closure on the output
tensor; ``backward`` linearizes the recorded graph into a ``Tape`` and
replays it in reverse, accumulating gradients into ``Tensor.grad``.

Conventions kept small on purpose:
  * no broadcasting except bias-add (1-D over the last axis) and
    scalar scale / scalar add,
  * matmul accepts 2-D operands or stacked 3-D operands with an equal
    leading extent,
  * reductions return a 0-d tensor for full reductions,
  * storage is row-major; a C x H x W map stores element (c, h, w) at
    flat index (c * H + h) * W + w.

Tensors and tapes are independent values. Distinct computations may run
concurrently, but a single tape must not be driven from two contexts at
once; nothing in this module holds global state.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from adtr.errors import DomainError, ShapeError

DEFAULT_DTYPE = np.float32

_Accumulate = Callable[["Tensor", np.ndarray], None]


class Tensor:
    """A dense real-valued array, optionally tracked for differentiation.

    ``grad`` is populated (same shape as ``data``) only after a backward
    pass reaches this tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd", "_spent")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray, _Accumulate], None] | None = None
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=DEFAULT_DTYPE) -> Tensor:
    """Create a leaf tensor in the given precision."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def constant(data, dtype=DEFAULT_DTYPE) -> Tensor:
    """Create an untracked tensor (no gradient ever flows into it)."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bwd) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._spent = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    else:
        out.requires_grad = False
        out._parents = ()
        out._bwd = None
    return out


def _check_same_dtype(*tensors: Tensor) -> None:
    first = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != first:
            raise ShapeError(f"mixed precisions {first} and {t.data.dtype} in one operation")


class Tape:
    """Topologically ordered record of the operations reaching a root.

    Reverse replay visits every recorded operation exactly once; the
    order is the reverse of a deterministic depth-first linearization of
    the graph, so replaying the same computation twice is bit-identical.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))

    def replay_backward(self) -> None:
        """Seed d(root)/d(root) = 1 and push adjoints to every leaf."""
        root = self.root
        grads: dict[int, np.ndarray] = {id(root): np.ones((), dtype=root.data.dtype)}

        def accumulate(t: Tensor, g: np.ndarray) -> None:
            if not t.requires_grad:
                return
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None:
                continue
            if g.shape != node.data.shape:
                g = np.broadcast_to(g, node.data.shape).astype(node.data.dtype, copy=False)
            node.grad = g if node.grad is None else node.grad + g
            if node._bwd is not None:
                node._bwd(g, accumulate)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every tensor reachable from a scalar loss.

    A second backward through the same result is rejected; rebuild the
    computation (a fresh forward) to differentiate again.
    """
    if loss.data.ndim != 0:
        raise ShapeError(f"backward requires a scalar, got shape {loss.data.shape}")
    if loss._spent:
        raise DomainError("backward already ran for this result; rebuild the computation first")
    Tape(loss).replay_backward()
    loss._spent = True


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or stacked 3-D operands."""
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul inner extents differ: {ad.shape} x {bd.shape}")
    elif ad.ndim == 3 and bd.ndim == 3:
        if ad.shape[0] != bd.shape[0] or ad.shape[2] != bd.shape[1]:
            raise ShapeError(f"stacked matmul extents differ: {ad.shape} x {bd.shape}")
    else:
        raise ShapeError(f"matmul supports 2-D or stacked 3-D operands, got {ad.shape} x {bd.shape}")

    def bwd(g, acc):
        if ad.ndim == 2:
            acc(a, g @ bd.T)
            acc(b, ad.T @ g)
        else:
            acc(a, g @ bd.transpose(0, 2, 1))
            acc(b, ad.transpose(0, 2, 1) @ g)

    return _make(ad @ bd, (a, b), bwd)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default reverses them (plain 2-D transpose)."""
    perm = tuple(axes) if axes is not None else tuple(range(a.data.ndim))[::-1]
    inv = tuple(np.argsort(perm))

    def bwd(g, acc):
        acc(a, g.transpose(inv))

    return _make(a.data.transpose(perm), (a,), bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.data.shape
    shape = tuple(shape)

    def bwd(g, acc):
        acc(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bwd)


def linear(a: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis, applied independently per token."""
    _check_same_dtype(a, weight, bias)
    ad, wd, bd = a.data, weight.data, bias.data
    if wd.ndim != 2 or bd.ndim != 1 or wd.shape[1] != bd.shape[0]:
        raise ShapeError(f"linear weight/bias mismatch: {wd.shape} vs {bd.shape}")
    if ad.shape[-1] != wd.shape[0]:
        raise ShapeError(f"linear input extent {ad.shape} does not match weight {wd.shape}")
    flat = ad.reshape(-1, wd.shape[0])
    out = (flat @ wd + bd).reshape(ad.shape[:-1] + (wd.shape[1],))

    def bwd(g, acc):
        gf = g.reshape(-1, wd.shape[1])
        acc(a, (gf @ wd.T).reshape(ad.shape))
        acc(weight, flat.T @ gf)
        acc(bias, gf.sum(axis=0))

    return _make(out, (a, weight, bias), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    out = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=-1, keepdims=True)

    def bwd(g, acc):
        inner = (g * out).sum(axis=-1, keepdims=True)
        gi = g - inner
        gi *= out
        acc(a, gi)

    return _make(out, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then scale and shift."""
    _check_same_dtype(a, gain, bias)
    c = a.data.shape[-1]
    if gain.data.shape != (c,) or bias.data.shape != (c,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({c},)")
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    inv_std = 1.0 / np.sqrt(centered.var(axis=-1, keepdims=True) + np.asarray(eps, dtype=a.data.dtype))
    xhat = centered * inv_std
    out = gain.data * xhat + bias.data

    def bwd(g, acc):
        lead = tuple(range(g.ndim - 1))
        acc(gain, (g * xhat).sum(axis=lead))
        acc(bias, g.sum(axis=lead))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        acc(a, (dxhat - m1 - xhat * m2) * inv_std)

    return _make(out, (a, gain, bias), bwd)


# ---------------------------------------------------------------------------
# elementwise suite


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    _check_same_dtype(a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op} requires equal shapes, got {a.data.shape} and {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias over the last axis of ``a``."""
    _check_same_dtype(a, b)
    is_bias = b.data.ndim == 1 and a.data.ndim > 1 and a.data.shape[-1] == b.data.shape[0]
    if not is_bias and a.data.shape != b.data.shape:
        raise ShapeError(f"add requires equal shapes or a last-axis bias, got {a.data.shape} and {b.data.shape}")

    def bwd(g, acc):
        acc(a, g)
        acc(b, g.sum(axis=tuple(range(g.ndim - 1))) if is_bias else g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def bwd(g, acc):
        acc(a, g)
        acc(b, -g)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bwd(g, acc):
        acc(a, g * bd)
        acc(b, g * ad)

    return _make(ad * bd, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def bwd(g, acc):
        acc(a, g * c)

    return _make(a.data * c, (a,), bwd)


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)

    def bwd(g, acc):
        acc(a, g)

    return _make(a.data + c, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g, acc):
        acc(a, g * mask)

    return _make(np.maximum(a.data, a.data.dtype.type(0)), (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bwd(g, acc):
        acc(a, g * out)

    return _make(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    if not np.all(a.data > 0):
        raise DomainError("log requires strictly positive inputs")
    ad = a.data

    def bwd(g, acc):
        acc(a, g / ad)

    return _make(np.log(ad), (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    """Square root; the adjoint at exactly 0 is defined as 0 to stay finite."""
    if not np.all(a.data >= 0):
        raise DomainError("sqrt requires nonnegative inputs")
    out = np.sqrt(a.data)

    def bwd(g, acc):
        safe = np.where(out > 0, out, out.dtype.type(1))
        acc(a, np.where(out > 0, g * 0.5 / safe, out.dtype.type(0)))

    return _make(out, (a,), bwd)


def square(a: Tensor) -> Tensor:
    ad = a.data

    def bwd(g, acc):
        acc(a, g * 2 * ad)

    return _make(ad * ad, (a,), bwd)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def bwd(g, acc):
        acc(a, g * sign)

    return _make(np.abs(a.data), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bwd(g, acc):
        acc(a, np.full(a.data.shape, g / n, dtype=a.data.dtype))

    return _make(a.data.mean(), (a,), bwd)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]

    def bwd(g, acc):
        acc(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _make(a.data.mean(axis=axis), (a,), bwd)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]

    def bwd(g, acc):
        acc(a, np.repeat(np.expand_dims(g, axis), n, axis=axis))

    return _make(a.data.sum(axis=axis), (a,), bwd)


def l2_norm_axis(a: Tensor, axis: int) -> Tensor:
    """Euclidean norm over one axis; the adjoint at a zero vector is 0."""
    out = np.sqrt(np.square(a.data).sum(axis=axis))

    def bwd(g, acc):
        norm = np.expand_dims(out, axis)
        safe = np.where(norm > 0, norm, norm.dtype.type(1))
        acc(a, np.expand_dims(g, axis) * np.where(norm > 0, a.data / safe, norm.dtype.type(0)))

    return _make(out, (a,), bwd)


def concat_axis(tensors: Iterable[Tensor], axis: int) -> Tensor:
    parts = tuple(tensors)
    if not parts:
        raise ShapeError("concat_axis requires at least one tensor")
    _check_same_dtype(*parts)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, acc):
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            acc(p, g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bwd)


def topk_mean(a: Tensor, k: int) -> Tensor:
    """Mean of the k largest entries of a 1-D tensor; ties break to the lowest index."""
    if a.data.ndim != 1:
        raise ShapeError(f"topk_mean requires a 1-D tensor, got shape {a.data.shape}")
    n = a.data.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"topk_mean k={k} out of range [1, {n}]")
    selected = np.argsort(-a.data, kind="stable")[:k]

    def bwd(g, acc):
        gi = np.zeros(n, dtype=a.data.dtype)
        gi[selected] = g / np.asarray(k, dtype=a.data.dtype)
        acc(a, gi)

    return _make(a.data[selected].mean(), (a,), bwd)
