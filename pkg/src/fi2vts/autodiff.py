"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent. ``backward``
replays that tape in reverse topological order.

The engine is deliberately small: it covers exactly the layers the forecasting
network needs (affine maps, attention, same-padded 2D convolution, gathers for
Top-M selection) and keeps everything in 64-bit floats so that central
differences agree with analytic gradients to ~1e-8.
"""

from __future__ import annotations

import contextlib
import weakref
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

DTYPE = np.float64

_grad_enabled = True


@dataclass
class AllocStats:
    """Byte counters fed by the Tensor constructor while tracking is active."""

    live: int = 0
    peak: int = 0
    total: int = 0
    count: int = 0

    def _add(self, nbytes: int) -> None:
        self.live += nbytes
        self.total += nbytes
        self.count += 1
        if self.live > self.peak:
            self.peak = self.live

    def _release(self, nbytes: int) -> None:
        self.live -= nbytes


_tracker: AllocStats | None = None


@contextlib.contextmanager
def track_allocations():
    """Count bytes held by tensors created inside the block.

    ``peak`` is the high-water mark of live tensor payloads; tensors created
    before entering the block are not counted.
    """
    global _tracker
    prev = _tracker
    stats = AllocStats()
    _tracker = stats
    try:
        yield stats
    finally:
        _tracker = prev


@contextlib.contextmanager
def no_grad():
    """Build tensors without recording the tape."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator used for every random draw in the package.

    PCG64 behind a SeedSequence: the stream depends only on ``seed`` and is
    stable across platforms and numpy releases (numpy's stream-compatibility
    policy for ``Generator``).
    """
    if seed < 0 or seed >= 2**64:
        raise ConfigError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: BackwardFn | None = None):
        arr = np.array(data, dtype=DTYPE, copy=None)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name
        if _tracker is not None:
            nbytes = arr.nbytes
            _tracker._add(nbytes)
            weakref.finalize(self, _tracker._release, nbytes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def _result(data: np.ndarray, parents: Iterable[Tensor], fn: BackwardFn) -> Tensor:
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=fn)
    return Tensor(data)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, opname: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, (a, b),
                   lambda g: (unbroadcast(g / bd, ad.shape),
                              unbroadcast(-g * out / bd, bd.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def back(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du),)

    return _result(out, (a,), back)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _result(x * x, (a,), lambda g: (2.0 * g * x,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _result(np.abs(x), (a,), lambda g: (g * np.sign(x),))


# ------------------------------------------------------------------ reductions

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(out)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = a.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    return scale(tensor_sum(a, axes, keepdims), 1.0 / n)


# ------------------------------------------------------------------- structure

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    src = a.shape
    return _result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, axes)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    ndim = ts[0].ndim
    ax = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim or any(t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result(np.concatenate([t.data for t in ts], axis=ax), ts, back)


def getitem(a, index) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    a = as_tensor(a)
    out = a.data[index]
    shape = a.shape

    idx = index if isinstance(index, tuple) else (index,)
    basic = all(i is None or i is Ellipsis or isinstance(i, (int, np.integer, slice)) for i in idx)

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:  # a view never repeats an element
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, dtype=DTYPE), (a,), back)


def take(a, indices, axis: int = -1) -> Tensor:
    """Gather ``a`` along one axis with an integer index array of any shape."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim
    shape = a.shape
    out = np.take(a.data, idx, axis=ax)

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        # move the gathered axis block to the front so add.at can scatter on it
        lead = tuple(range(ax, ax + idx.ndim))
        g_moved = np.moveaxis(g, lead, tuple(range(idx.ndim)))
        f_moved = np.moveaxis(full, ax, 0)
        np.add.at(f_moved, idx, g_moved)
        return (full,)

    return _result(out, (a,), back)


def take_along_axis(a, indices, axis: int = -1, unique: bool = False) -> Tensor:
    """Gather along ``axis``; ``unique=True`` promises no repeated index per row."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % a.ndim
    shape = a.shape
    if idx.ndim != a.ndim:
        raise ShapeError(f"take_along_axis: index ndim {idx.ndim} != tensor ndim {a.ndim}")
    out = np.take_along_axis(a.data, idx, axis=ax)

    def back(g):
        if unique:
            full = np.zeros(shape, dtype=DTYPE)
            np.put_along_axis(full, idx, g, axis=ax)
            return (full,)
        moved_shape = np.moveaxis(np.empty(shape, dtype=np.bool_), ax, -1).shape
        n = moved_shape[-1]
        rows = int(np.prod(moved_shape[:-1]))
        gi = np.moveaxis(idx, ax, -1).reshape(rows, -1)
        gg = np.moveaxis(g, ax, -1).reshape(rows, -1)
        full = np.zeros((rows, n), dtype=DTYPE)
        np.add.at(full, (np.arange(rows)[:, None], gi), gg)
        return (np.moveaxis(full.reshape(moved_shape), -1, ax),)

    return _result(out, (a,), back)


def pad(a, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    a = as_tensor(a)
    widths = [tuple(w) for w in widths]
    if len(widths) != a.ndim:
        raise ShapeError(f"pad: {len(widths)} pad pairs for shape {a.shape}")
    slices = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _result(_zero_pad(a.data, widths), (a,), lambda g: (g[slices],))


def frames(a, size: int, hop: int) -> Tensor:
    """Overlapping windows of the last axis: ``[..., L]`` to ``[..., F, size]``."""
    a = as_tensor(a)
    length = a.shape[-1]
    if length < size:
        raise ShapeError(f"frames: length {length} shorter than window {size}")
    n_frames = (length - size) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(a.data, size, axis=-1)[..., ::hop, :]
    out = np.ascontiguousarray(view[..., :n_frames, :])
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        if n_frames <= size:
            for f in range(n_frames):
                full[..., f * hop:f * hop + size] += g[..., f, :]
        else:
            span = hop * (n_frames - 1) + 1
            for n in range(size):
                full[..., n:n + span:hop] += g[..., :, n]
        return (full,)

    return _result(out, (a,), back)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, n]`` with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} "
                         "do not broadcast") from None
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        # shared weight matrix: fold every leading axis into one GEMM
        k, n = bd.shape
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(ad.shape[:-1] + (n,))

        def back2(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _result(out, (a, b), back2)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _result(ad @ bd, (a, b), back)


def affine(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``.

    With a 2-d ``w`` and 1-d ``b`` this is one node: the bias is added in
    place to the fresh GEMM output instead of allocating a second array.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is None:
        return matmul(x, w)
    b = as_tensor(b)
    if w.ndim != 2 or b.shape != (w.shape[1],) or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        return add(matmul(x, w), b)
    k, n = w.shape
    xd, wd = x.data, w.data
    x2 = xd.reshape(-1, k)
    out = x2 @ wd
    out += b.data
    out = out.reshape(xd.shape[:-1] + (n,))

    def back(g):
        g2 = g.reshape(-1, n)
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _result(out, (x, w, b), back)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)[0]
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return _result(y, (a,), back)


def _zero_pad(a: np.ndarray, widths) -> np.ndarray:
    out = np.zeros(tuple(n + lo + hi for n, (lo, hi) in zip(a.shape, widths)), dtype=DTYPE)
    out[tuple(slice(lo, lo + n) for n, (lo, _) in zip(a.shape, widths))] = a
    return out


def _im2col(xd: np.ndarray, ry: int, rx: int) -> np.ndarray:
    """``[B, C, H, W]`` to same-padded patches ``[B, H*W, C*(2ry+1)*(2rx+1)]``."""
    b, c, h, w = xd.shape
    # pad channel-last so the patch copy below reads contiguous channel runs
    xp = _zero_pad(xd.transpose(0, 2, 3, 1), ((0, 0), (ry, ry), (rx, rx), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (2 * ry + 1, 2 * rx + 1), axis=(1, 2))
    return win.reshape(b, h * w, -1)


def conv2d(x, kernel) -> Tensor:
    """Same-padded 2D cross-correlation.

    ``x`` is ``[..., C_in, H, W]`` and ``kernel`` ``[C_out, C_in, kh, kw]`` with
    odd ``kh``, ``kw``. Kernel taps that can only ever land on zero padding
    (offsets beyond ``H - 1`` or ``W - 1``) are skipped; their gradient is zero.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-d, got {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    if x.ndim < 3 or x.shape[-3] != c_in:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel {kernel.shape}")
    H, W = x.shape[-2:]
    ry, rx = min(kh // 2, H - 1), min(kw // 2, W - 1)
    cy, cx = kh // 2, kw // 2
    crop = (slice(None), slice(None), slice(cy - ry, cy + ry + 1), slice(cx - rx, cx + rx + 1))
    kcrop = kernel.data[crop]
    lead = x.shape[:-3]
    xd = x.data.reshape((-1, c_in, H, W))
    nb = xd.shape[0]
    cols = _im2col(xd, ry, rx)
    kmat = kcrop.reshape(c_out, -1)
    out = (cols.reshape(nb * H * W, -1) @ kmat.T).reshape(nb, H, W, c_out)
    out = out.transpose(0, 3, 1, 2).reshape(lead + (c_out, H, W))

    def back(g):
        gk = gx = None
        gd = g.reshape(nb, c_out, H, W)
        if kernel.requires_grad:
            g2 = gd.transpose(0, 2, 3, 1).reshape(nb * H * W, c_out)
            gk = np.zeros(kernel.shape, dtype=DTYPE)
            gk[crop] = (g2.T @ cols.reshape(nb * H * W, -1)).reshape(kcrop.shape)
        if x.requires_grad:
            # input gradient = correlation of g with the flipped, channel-swapped kernel
            kflip = kcrop[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c_in, -1)
            gcols = _im2col(gd, ry, rx)
            gx = (gcols.reshape(nb * H * W, -1) @ kflip.T).reshape(nb, H, W, c_in)
            gx = gx.transpose(0, 3, 1, 2).reshape(x.shape)
        return gx, gk

    return _result(out, (x, kernel), back)


# -------------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate gradients live only for the duration of the call, so calling
    twice adds the leaf gradients twice.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_checked: int
    worst: tuple[str, tuple[int, ...]] | None = None
    errors: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def gradient_check(f: Callable[[], Tensor], params: dict[str, Tensor] | Sequence[Tensor],
                   h: float = 1e-5, tol: float = 1e-4, n_samples: int | None = 20,
                   seed: int = 0, abs_floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients with central differences.

    ``f`` rebuilds the scalar graph from the current parameter values. When
    ``n_samples`` is set, that many coordinates are drawn uniformly over all
    parameters (without replacement); otherwise every coordinate is checked.
    The relative error of one coordinate is
    ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, abs_floor * max(1, |f|))``; the floor
    keeps round-off in ``f`` from dominating coordinates whose true gradient
    is zero.
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    loss = f()
    backward(loss)
    floor = abs_floor * max(1.0, abs(loss.item()))
    names = list(params)
    sizes = [params[n].size for n in names]
    total = int(sum(sizes))
    if n_samples is None or n_samples >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(make_rng(seed).choice(total, size=n_samples, replace=False))
    offsets = np.cumsum([0] + sizes)
    report = GradCheckReport(0.0, tol, 0)
    for fi in flat:
        pi = int(np.searchsorted(offsets, fi, side="right") - 1)
        name = names[pi]
        p = params[name]
        local = int(fi - offsets[pi])
        idx = np.unravel_index(local, p.shape)
        analytic = 0.0 if p.grad is None else float(p.grad[idx])
        orig = p.data[idx]
        p.data[idx] = orig + h
        with no_grad():
            up = f().item()
        p.data[idx] = orig - h
        with no_grad():
            down = f().item()
        p.data[idx] = orig
        numeric = (up - down) / (2 * h)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        report.errors.append(err)
        report.n_checked += 1
        if err >= report.max_rel_error:
            report.max_rel_error = err
            report.worst = (name, tuple(int(i) for i in idx))
    for p in params.values():
        p.zero_grad()
    return report
