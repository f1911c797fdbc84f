"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Images are stored channel-last: the last three axes of an image tensor are
``(H, W, C)`` and any leading axes are batch axes. All spatial operators use
periodic (circular) boundaries.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPES = {"float64": np.float64, "float32": np.float32}
_default_dtype = np.float64

# kernels with more taps than this per axis go through the FFT path
FFT_THRESHOLD = 9


def set_default_dtype(name: str) -> None:
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unsupported precision {name!r}; expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def get_default_dtype() -> type:
    return _default_dtype


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the dtype used for newly created tensors."""
    previous = _default_dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        globals()["_default_dtype"] = previous


class Tensor:
    """A dense array plus the bookkeeping needed to backpropagate through it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else _default_dtype
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _operand(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a = _operand(a, b if isinstance(b, Tensor) else None)
    b = _operand(b, a)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------- reductions / shape


def tsum(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def tmean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward, "mean")


def inner(a, b) -> Tensor:
    """Sum of the elementwise product, ``<a, b>``."""
    return tsum(mul(a, b))


def mse(a, b) -> Tensor:
    """Mean squared error ``(1/n) * sum((a - b)**2)`` over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    value = np.asarray(np.dot(diff.ravel(), diff.ravel()) / n, dtype=diff.dtype)

    def backward(g):
        ga = (2.0 * g / n) * diff
        return ga, -ga

    return _make(value, (a, b), backward, "mse")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def index_select(x, index) -> Tensor:
    """Basic/advanced indexing with a scatter-add backward."""
    x = as_tensor(x)

    def backward(g):
        out = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _make(np.array(x.data[index]), (x,), backward, "index")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def detach(x) -> Tensor:
    """Same values, cut from the graph: nothing upstream receives gradient."""
    x = as_tensor(x)
    out = Tensor(x.data, dtype=x.dtype)
    out.op = "detach"
    return out


# ---------------------------------------------------------------- spatial ops


def _check_image(x: Tensor, name: str = "x") -> None:
    if x.ndim < 3:
        raise ValueError(f"{name} must have trailing (H, W, C) axes, got shape {x.shape}")


def _tap_offsets(kshape: tuple[int, int]) -> list[tuple[int, int, int, int]]:
    ch, cw = kshape[0] // 2, kshape[1] // 2
    return [(a, b, a - ch, b - cw) for a in range(kshape[0]) for b in range(kshape[1])]


def _embed_kernel(k: np.ndarray, H: int, W: int) -> np.ndarray:
    """Place a centred kernel on an H x W periodic grid with its centre at (0, 0)."""
    out = np.zeros((H, W), dtype=k.dtype)
    for a, b, da, db in _tap_offsets(k.shape):
        out[da % H, db % W] += k[a, b]
    return out


def _conv_direct(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for a, b, da, db in _tap_offsets(k.shape):
        w = k[a, b]
        if w != 0:
            out += w * np.roll(x, (da, db), axis=(-3, -2))
    return out


def _conv_fft(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    H, W = x.shape[-3], x.shape[-2]
    kf = np.fft.rfft2(_embed_kernel(k, H, W))
    xf = np.fft.rfft2(x, axes=(-3, -2))
    return np.fft.irfft2(xf * kf[:, :, None], s=(H, W), axes=(-3, -2)).astype(x.dtype)


def _periodic_conv(x: np.ndarray, k: np.ndarray, method: str) -> np.ndarray:
    if method == "auto":
        method = "fft" if max(k.shape) > FFT_THRESHOLD else "direct"
    if method == "direct":
        return _conv_direct(x, k)
    if method == "fft":
        return _conv_fft(x, k)
    raise ValueError(f"unknown convolution method {method!r}")


def _kernel_grad(g: np.ndarray, x: np.ndarray, kshape: tuple[int, int]) -> np.ndarray:
    # d out(i) / d k[a, b] = x(i - d_ab); correlate g with x, then read off the taps
    H, W = x.shape[-3], x.shape[-2]
    gf = np.fft.rfft2(g, axes=(-3, -2))
    xf = np.fft.rfft2(x, axes=(-3, -2))
    lead = tuple(range(g.ndim - 3)) + (g.ndim - 1,)
    cross = (gf * np.conj(xf)).sum(axis=lead)
    corr = np.fft.irfft2(cross, s=(H, W))
    out = np.empty(kshape, dtype=x.dtype)
    for a, b, da, db in _tap_offsets(kshape):
        out[a, b] = corr[da % H, db % W]
    return out


def conv2d_periodic(x, k, method: str = "auto") -> Tensor:
    """Circular convolution of every channel of ``x`` with the centred 2-D kernel ``k``.

    ``out(i, j) = sum_{a, b} k[a, b] * x(i - a + ca, j - b + cb)`` with indices taken
    modulo the image extents and ``(ca, cb)`` the kernel centre.
    """
    x, k = as_tensor(x), as_tensor(k, dtype=None)
    _check_image(x)
    if k.ndim != 2:
        raise ValueError(f"kernel must be 2-D, got shape {k.shape}")
    kh, kw = k.shape
    H, W = x.shape[-3], x.shape[-2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {k.shape}")
    if kh > H or kw > W:
        raise ValueError(f"kernel {k.shape} larger than image {(H, W)}")
    kd = k.data.astype(x.dtype, copy=False)
    flipped = kd[::-1, ::-1]

    def backward(g):
        gx = _periodic_conv(g, flipped, method) if x.requires_grad else None
        gk = _kernel_grad(g, x.data, k.shape).astype(k.dtype) if k.requires_grad else None
        return gx, gk

    return _make(_periodic_conv(x.data, kd, method), (x, k), backward, "conv2d_periodic")


def subsample(x, r: int, phase: tuple[int, int] = (0, 0)) -> Tensor:
    """Keep samples at ``phase + r * (i, j)``."""
    x = as_tensor(x)
    _check_image(x)
    r = int(r)
    if r < 1:
        raise ValueError("subsampling factor must be >= 1")
    H, W = x.shape[-3], x.shape[-2]
    if H % r or W % r:
        raise ValueError(f"image extents {(H, W)} not divisible by r={r}")
    p0, p1 = phase
    if not (0 <= p0 < r and 0 <= p1 < r):
        raise ValueError(f"phase {phase} outside [0, {r})")
    if r == 1:
        return x
    sl = (Ellipsis, slice(p0, None, r), slice(p1, None, r), slice(None))

    def backward(g):
        out = np.zeros(x.shape, dtype=g.dtype)
        out[sl] = g
        return (out,)

    return _make(x.data[sl].copy(), (x,), backward, "subsample")


def upsample_zero(y, r: int, phase: tuple[int, int] = (0, 0)) -> Tensor:
    """Zero-insertion upsampling, the adjoint of :func:`subsample`."""
    y = as_tensor(y)
    _check_image(y)
    r = int(r)
    if r == 1:
        return y
    p0, p1 = phase
    sl = (Ellipsis, slice(p0, None, r), slice(p1, None, r), slice(None))
    shape = y.shape[:-3] + (y.shape[-3] * r, y.shape[-2] * r, y.shape[-1])
    out = np.zeros(shape, dtype=y.dtype)
    out[sl] = y.data
    return _make(out, (y,), lambda g: (g[sl].copy(),), "upsample_zero")


def roll(x, shift: tuple[int, int]) -> Tensor:
    """Cyclic shift over the spatial axes: ``out(i, j) = x(i - dr, j - dc)``."""
    x = as_tensor(x)
    _check_image(x)
    dr, dc = int(shift[0]), int(shift[1])
    return _make(
        np.roll(x.data, (dr, dc), axis=(-3, -2)),
        (x,),
        lambda g: (np.roll(g, (-dr, -dc), axis=(-3, -2)),),
        "roll",
    )


def _apply_separable(x: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    # out[..., i, j, c] = sum_{h, w} rows[..., i, h] x[..., h, w, c] cols[..., j, w]
    t = np.einsum("...ih,...hwc->...iwc", rows, x)
    return np.einsum("...jw,...iwc->...ijc", cols, t)


def separable_linear(x, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply fixed matrices along the row and column axes (``rows @ x @ cols.T`` per channel).

    ``rows`` has shape ``(..., h_out, H)`` and ``cols`` ``(..., w_out, W)``; leading axes
    broadcast against the batch axes of ``x``.
    """
    x = as_tensor(x)
    _check_image(x)
    rows = np.asarray(rows, dtype=x.dtype)
    cols = np.asarray(cols, dtype=x.dtype)
    if rows.shape[-1] != x.shape[-3] or cols.shape[-1] != x.shape[-2]:
        raise ValueError(f"resampling matrices {rows.shape}, {cols.shape} do not fit image {x.shape}")
    rows_t = np.swapaxes(rows, -1, -2)
    cols_t = np.swapaxes(cols, -1, -2)

    def backward(g):
        return (_unbroadcast(_apply_separable(g, rows_t, cols_t), x.shape),)

    return _make(_apply_separable(x.data, rows, cols), (x,), backward, "separable_linear")


def _wrap_pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    pad = [(0, 0)] * (x.ndim - 3) + [(p, p), (p, p), (0, 0)]
    return np.pad(x, pad, mode="wrap")


def _corr_layer(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # accumulate one small matmul per kernel tap; cheaper than a full im2col copy
    k, _, cin, cout = w.shape
    H, W = x.shape[-3], x.shape[-2]
    xp = _wrap_pad(x, k // 2)
    out = np.zeros(x.shape[:-1] + (cout,), dtype=np.result_type(x, w))
    for a in range(k):
        for b in range(k):
            out += xp[..., a : a + H, b : b + W, :] @ w[a, b]
    return out, xp


def conv_layer(x, w, b=None) -> Tensor:
    """Multi-channel periodic cross-correlation, the network's convolution layer.

    ``x`` is ``(..., H, W, Cin)``, ``w`` is ``(k, k, Cin, Cout)`` with ``k`` odd and ``b``
    is ``(Cout,)``.
    """
    x, w = as_tensor(x), as_tensor(w)
    _check_image(x)
    k, k2, cin, cout = w.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"layer kernel must be square with odd extent, got {w.shape[:2]}")
    if x.shape[-1] != cin:
        raise ValueError(f"layer expects {cin} input channels, got {x.shape[-1]}")
    H, W = x.shape[-3], x.shape[-2]
    out, xp = _corr_layer(x.data, w.data)
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    if b is not None:
        out = out + parents[2].data
    # adjoint of periodic correlation: correlate with the flipped, channel-transposed kernel
    w_adj = np.ascontiguousarray(w.data[::-1, ::-1].transpose(0, 1, 3, 2))

    def backward(g):
        gx = _corr_layer(g, w_adj)[0] if x.requires_grad else None
        gw = None
        if w.requires_grad:
            g2 = g.reshape(-1, cout)
            gw = np.empty(w.shape, dtype=g.dtype)
            for a in range(k):
                for c in range(k):
                    gw[a, c] = xp[..., a : a + H, c : c + W, :].reshape(-1, cin).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, cout).sum(axis=0)

    return _make(out, parents, backward, "conv_layer")


def pixel_shuffle(x, r: int) -> Tensor:
    """Depth-to-space: ``(..., H, W, C*r*r) -> (..., r*H, r*W, C)``."""
    x = as_tensor(x)
    r = int(r)
    if r == 1:
        return x
    *lead, H, W, Crr = x.shape
    if Crr % (r * r):
        raise ValueError(f"channel count {Crr} not divisible by r^2={r * r}")
    C = Crr // (r * r)
    nl = len(lead)
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
    inv = tuple(np.argsort(perm))

    def forward(a):
        a = a.reshape(*lead, H, W, r, r, C).transpose(perm)
        return a.reshape(*lead, H * r, W * r, C)

    def backward(g):
        g = g.reshape(*lead, H, r, W, r, C).transpose(inv)
        return (g.reshape(x.shape),)

    return _make(np.ascontiguousarray(forward(x.data)), (x,), backward, "pixel_shuffle")


# ---------------------------------------------------------------- backward


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, accumulate: bool = False) -> dict[int, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Returns a map from ``id(leaf)`` to the gradient for every leaf with
    ``requires_grad``; each such leaf also gets its ``.grad`` set (summed into an
    existing ``.grad`` when ``accumulate`` is true).
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    leaves: dict[int, np.ndarray] = {}
    if not loss.requires_grad:
        return leaves
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                leaves[id(node)] = g
                if accumulate and node.grad is not None:
                    node.grad = node.grad + g
                else:
                    node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return leaves


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` with respect to ``wrt`` (zeros for unreachable leaves)."""
    got = backward(loss)
    return [got.get(id(t), np.zeros(t.shape, dtype=t.dtype)) for t in wrt]


def finite_diff_check(
    fn: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-6,
    eps_floor: float = 1e-8,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between the autodiff gradient and central differences.

    The error per coordinate is ``|analytic - numeric| / (|analytic| + eps_floor)``.
    ``coords`` restricts the check to a subset of flat indices.
    """
    base = np.array(as_tensor(x).data, copy=True)
    leaf = Tensor(base, requires_grad=True)
    analytic = grad(fn(leaf), [leaf])[0].ravel()
    flat = base.ravel()
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        up = fn(Tensor(base)).item()
        flat[i] = orig - eps
        down = fn(Tensor(base)).item()
        flat[i] = orig
        numeric = (up - down) / (2 * eps)
        err = abs(analytic[i] - numeric) / (abs(analytic[i]) + eps_floor)
        worst = max(worst, err)
    return worst
