"""Small reverse-mode automatic differentiation over numpy arrays.

Operations on :class:`Tensor` values are recorded on the innermost active
:class:`GradientTape`.  Outside of a tape they evaluate eagerly with no
bookkeeping, which is the fast path used for certification and attacks.

Subgradient conventions: ``max``/``min`` reductions route the gradient to the
first extremal index; the min-max activation treats ties as "already sorted".
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_TAPES: list["GradientTape"] = []


class Tensor:
    __slots__ = ("data", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None):
        return tmax(self, axis=axis)

    def min(self, axis=None):
        return tmin(self, axis=axis)


class GradientTape:
    """Records operations executed while the tape is active.

    >>> w = Tensor(2.0); x = Tensor(3.0)
    >>> with GradientTape() as tape:
    ...     y = w * x
    >>> float(tape.gradient(y, [w])[0])
    3.0
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple, Callable]] = []
        self._recorded: set[int] = set()

    def __enter__(self) -> "GradientTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def _record(self, out: Tensor, parents: tuple, backward: Callable) -> None:
        self._nodes.append((out, parents, backward))
        self._recorded.add(id(out))

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._recorded

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        grads = self._backprop(target)
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]

    def _backprop(self, target: Tensor) -> dict[int, np.ndarray]:
        if id(target) not in self._recorded:
            raise ValueError("target was not produced by an operation recorded on this tape")
        if target.data.size != 1:
            raise ValueError(f"target must be a scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for out, parents, backward in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None or not isinstance(parent, Tensor):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return grads


def backward(tape: GradientTape, scalar: Tensor, sources: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """Gradient map ``{source: d scalar / d source}`` for every requested source."""
    sources = list(sources)
    return dict(zip(sources, tape.gradient(scalar, sources)))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: tuple, backward: Callable) -> Tensor:
    out = Tensor(data)
    if _TAPES:
        _TAPES[-1]._record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``mask`` else ``b``; the mask is a constant."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    return _make(
        np.where(mask, a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape),
        ),
    )


# ---------------------------------------------------------------- linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        if a.ndim > 1:
            gb = np.swapaxes(a.data, -1, -2) @ g
        else:
            gb = np.multiply.outer(a.data, g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), back)


def take_along_axis(a, indices: np.ndarray, axis: int) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        idx = list(np.indices(indices.shape, sparse=True))
        idx[axis % a.ndim] = indices
        np.add.at(full, tuple(idx), g)
        return (full,)

    return _make(np.take_along_axis(a.data, indices, axis), (a,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return _make(
        np.stack([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


# ---------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def _arg_reduce(a: Tensor, axis, pick) -> Tensor:
    data = a.data
    if axis is None:
        flat = pick(data.reshape(-1))
        out = data.reshape(-1)[flat]

        def back(g):
            full = np.zeros(data.size)
            full[flat] = g
            return (full.reshape(data.shape),)

        return _make(out, (a,), back)

    idx = np.expand_dims(pick(data, axis=axis), axis)
    out = np.take_along_axis(data, idx, axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis)
        return (full,)

    return _make(out, (a,), back)


def tmax(a, axis=None) -> Tensor:
    return _arg_reduce(as_tensor(a), axis, np.argmax)


def tmin(a, axis=None) -> Tensor:
    return _arg_reduce(as_tensor(a), axis, np.argmin)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    return where(a.data >= b.data, a, b)


def logsumexp(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - shift)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + shift).squeeze(axis)
    soft = e / s
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,))


# ---------------------------------------------------------------- network primitives


def minmax(a) -> Tensor:
    """Sort consecutive disjoint pairs of the last axis ascending.

    A trailing unpaired element passes through unchanged.
    """
    a = as_tensor(a)
    data = a.data
    n = data.shape[-1]
    perm = np.broadcast_to(np.arange(n), data.shape).copy()
    m = n - n % 2
    swap = data[..., 0:m:2] > data[..., 1:m:2]
    even = perm[..., 0:m:2].copy()
    perm[..., 0:m:2] = np.where(swap, perm[..., 1:m:2], even)
    perm[..., 1:m:2] = np.where(swap, even, perm[..., 1:m:2])
    out = np.take_along_axis(data, perm, -1)

    def back(g):
        full = np.zeros_like(data)
        np.put_along_axis(full, perm, g, -1)
        return (full,)

    return _make(out, (a,), back)


def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Output size and (before, after) zero padding for "same" convolution."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _conv_geometry(in_hw, kernel_shape, stride, padding):
    kh, kw = kernel_shape[2:]
    (H, W) = in_hw
    if padding == "same":
        Ho, pt, pb = same_padding(H, kh, stride)
        Wo, pl, pr = same_padding(W, kw, stride)
    elif padding == "valid":
        if H < kh or W < kw:
            raise ValueError(f"kernel {kh}x{kw} larger than input {H}x{W}")
        Ho, Wo = (H - kh) // stride + 1, (W - kw) // stride + 1
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    return Ho, Wo, (pt, pb, pl, pr)


def conv2d_numpy(x: np.ndarray, kernel: np.ndarray, stride: int = 1, padding: str = "same") -> np.ndarray:
    """Direct-loop convolution. ``x``: (B, H, W, Cin); ``kernel``: (Cout, Cin, kh, kw)."""
    B, H, W, _ = x.shape
    kh, kw = kernel.shape[2:]
    Ho, Wo, (pt, pb, pl, pr) = _conv_geometry((H, W), kernel.shape, stride, padding)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    out = np.zeros((B, Ho, Wo, kernel.shape[0]))
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, di : di + stride * (Ho - 1) + 1 : stride, dj : dj + stride * (Wo - 1) + 1 : stride, :]
            out += patch @ kernel[:, :, di, dj].T
    return out


def conv2d_transpose_numpy(
    g: np.ndarray, kernel: np.ndarray, in_hw: tuple[int, int], stride: int = 1, padding: str = "same"
) -> np.ndarray:
    """Adjoint of :func:`conv2d_numpy` with respect to its input."""
    H, W = in_hw
    kh, kw = kernel.shape[2:]
    Ho, Wo, (pt, pb, pl, pr) = _conv_geometry((H, W), kernel.shape, stride, padding)
    gxp = np.zeros((g.shape[0], H + pt + pb, W + pl + pr, kernel.shape[1]))
    for di in range(kh):
        for dj in range(kw):
            gxp[:, di : di + stride * (Ho - 1) + 1 : stride, dj : dj + stride * (Wo - 1) + 1 : stride, :] += (
                g @ kernel[:, :, di, dj]
            )
    return gxp[:, pt : pt + H, pl : pl + W, :]


def conv2d(x, kernel, stride: int = 1, padding: str = "same") -> Tensor:
    x, kernel = as_tensor(x), as_tensor(kernel)
    out = conv2d_numpy(x.data, kernel.data, stride, padding)
    H, W = x.shape[1:3]

    def back(g):
        gx = conv2d_transpose_numpy(g, kernel.data, (H, W), stride, padding)
        kh, kw = kernel.shape[2:]
        Ho, Wo, (pt, pb, pl, pr) = _conv_geometry((H, W), kernel.shape, stride, padding)
        xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        gk = np.zeros_like(kernel.data)
        for di in range(kh):
            for dj in range(kw):
                patch = xp[:, di : di + stride * (Ho - 1) + 1 : stride, dj : dj + stride * (Wo - 1) + 1 : stride, :]
                gk[:, :, di, dj] = np.einsum("bhwo,bhwi->oi", g, patch)
        return gx, gk

    return _make(out, (x, kernel), back)


def space_to_depth_numpy(x: np.ndarray, factor: int) -> np.ndarray:
    B, H, W, C = x.shape
    if H % factor or W % factor:
        raise ValueError(f"downsample factor {factor} does not divide {H}x{W}")
    y = x.reshape(B, H // factor, factor, W // factor, factor, C)
    return y.transpose(0, 1, 3, 2, 4, 5).reshape(B, H // factor, W // factor, C * factor * factor)


def depth_to_space_numpy(y: np.ndarray, factor: int) -> np.ndarray:
    B, h, w, c = y.shape
    C = c // (factor * factor)
    x = y.reshape(B, h, w, factor, factor, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(B, h * factor, w * factor, C)


def space_to_depth(x, factor: int) -> Tensor:
    x = as_tensor(x)
    return _make(
        space_to_depth_numpy(x.data, factor),
        (x,),
        lambda g: (depth_to_space_numpy(g, factor),),
    )
