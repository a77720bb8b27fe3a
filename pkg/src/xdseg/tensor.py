"""Dense NCHW tensors with tape-based reverse-mode differentiation.

Only the operations the segmenter and discriminator need are provided.
Recording happens only while a :class:`Tape` is active::

    tape = Tape()
    with tape:
        loss = xdseg.tensor.sum(x * x)
    tape.backward(loss)

Outside a tape every op runs as plain numpy with no bookkeeping, which is
what inference uses.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray

_DEBUG = os.environ.get("XDSEG_DEBUG", "") not in ("", "0")


def set_debug(enabled: bool) -> None:
    """Toggle finiteness checks on every op output (and div-by-zero checks)."""
    global _DEBUG
    _DEBUG = bool(enabled)


def debug_enabled() -> bool:
    return _DEBUG


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: Array = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[Array], Sequence[Optional[Array]]]


@dataclass(eq=False)
class Tape:
    """Ordered record of differentiable ops executed while the tape is active."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        node = Node(op, inputs, output, backward)
        output.requires_grad = True
        output._node = node
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        """Fill ``.grad`` of every tensor on the tape with d(loss)/d(tensor).

        Policy is reset-then-fill: existing gradients are discarded, so calling
        twice gives the same result rather than doubling.
        """
        if loss.data.shape != ():
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._node is None or loss._node not in self._index():
            raise ValueError("loss was not produced on this tape")
        tensors: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad:
                    t.grad = None
                    tensors[id(t)] = t
            node.output.grad = None
        grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        stop = self._index()[loss._node]
        for node in reversed(self.nodes[: stop + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            node.output.grad = g
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        # leaves (parameters, inputs) hold whatever accumulated; unreached ones get zeros
        for key, t in tensors.items():
            if t._node is None:
                t.grad = grads.get(key, np.zeros_like(t.data))

    def release(self) -> None:
        """Drop recorded nodes and unlink outputs from them.

        Outputs point at their node and nodes point back at outputs; without
        this, activations linger until the cyclic collector happens to run.
        """
        for node in self.nodes:
            node.output._node = None
        self.nodes.clear()

    def _index(self) -> dict[Node, int]:
        return {n: i for i, n in enumerate(self.nodes)}


_ACTIVE: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def backward(loss: Tensor) -> None:
    tape = active_tape()
    if tape is None:
        raise ValueError("no active tape; call tape.backward(loss) explicitly")
    tape.backward(loss)


def _check(op: str, arr: Array) -> None:
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op}: non-finite values in output")


def _emit(op: str, inputs: tuple[Tensor, ...], out: Array, backward) -> Tensor:
    _check(op, out)
    result = Tensor(out)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, inputs, result, backward)
    return result


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------- creation


def randn(shape: Sequence[int], seed: int, dtype=np.float32, scale: float = 1.0) -> Tensor:
    """Standard normal draws from PCG64 seeded with ``seed`` (numpy ziggurat transform)."""
    rng = np.random.Generator(np.random.PCG64(np.uint64(seed)))
    return Tensor((rng.standard_normal(tuple(shape)) * scale).astype(dtype))


def zeros(shape: Sequence[int] | int, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape: Sequence[int] | int, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


# ------------------------------------------------------------- elementwise


def _broadcast_view(a: Array, b: Array) -> tuple[Array, tuple[int, ...]]:
    """Reshape ``b`` for the supported broadcast forms against ``a``.

    Returns the reshaped view and the axes of ``a`` that ``b`` was broadcast over.
    """
    if b.shape == a.shape:
        return b, ()
    if b.size == 1 and b.ndim <= 1:
        return b.reshape(()), tuple(range(a.ndim))
    if a.ndim >= 2 and b.shape == (a.shape[1],):
        view = b.reshape((1, -1) + (1,) * (a.ndim - 2))
        return view, (0,) + tuple(range(2, a.ndim))
    if a.ndim >= 2 and b.shape == a.shape[:2]:
        view = b.reshape(b.shape + (1,) * (a.ndim - 2))
        return view, tuple(range(2, a.ndim))
    raise ShapeError(f"cannot broadcast {b.shape} against {a.shape}")


def _reduce_to(g: Array, axes: tuple[int, ...], shape: tuple[int, ...]) -> Array:
    if not axes:
        return g
    return g.sum(axis=axes).reshape(shape)


def _binary(op: str, a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    bv, axes = _broadcast_view(a.data, b.data)
    x, y = a.data, bv
    need_a, need_b = a.requires_grad, b.requires_grad

    def rb(g):
        return _reduce_to(g, axes, b.shape) if need_b else None

    if op == "add":
        out = x + y

        def bw(g):
            return g, rb(g)
    elif op == "sub":
        out = x - y

        def bw(g):
            return g, rb(-g) if need_b else None
    elif op == "mul":
        out = x * y

        def bw(g):
            return (g * y if need_a else None), (rb(g * x) if need_b else None)
    elif op == "div":
        if _DEBUG and np.any(y == 0):
            raise ZeroDivisionError("div: exact zero in divisor")
        out = x / y

        def bw(g):
            return (g / y if need_a else None), (rb(-g * x / (y * y)) if need_b else None)
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return _emit(op, (a, b), out.astype(a.dtype, copy=False), bw)


def elementwise(a, b, op: str) -> Tensor:
    """Pointwise add/sub/mul/div. ``b`` may match ``a`` or be a scalar, a (C,)
    per-channel vector, or a (B, C) per-sample-channel array."""
    return _binary(op, a, b)


def add(a, b) -> Tensor:
    return _binary("add", a, b)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b)


def div(a, b) -> Tensor:
    return _binary("div", a, b)


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with the argument clamped below at ``floor``."""
    clamped = np.maximum(a.data, floor)
    out = np.log(clamped)

    def bw(g):
        return (np.where(a.data > floor, g / clamped, 0.0).astype(a.dtype),)

    return _emit("log", (a,), out, bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def prelu(a: Tensor, slope: Tensor) -> Tensor:
    """max(x, 0) + slope_c * min(x, 0) with one slope per channel (axis 1)."""
    x = a.data
    if slope.shape != (x.shape[1],):
        raise ShapeError(f"prelu slope shape {slope.shape} does not match {x.shape[1]} channels")
    s = slope.data.reshape((1, -1) + (1,) * (x.ndim - 2))
    posf = (x > 0).astype(x.dtype)
    factor = s + (1 - s) * posf  # 1 where x > 0, slope elsewhere
    out = x * factor
    neg = np.minimum(x, 0)
    sub = "".join(chr(ord("a") + i) for i in range(x.ndim))

    def bw(g):
        gs = np.einsum(f"{sub},{sub}->b", g, neg).astype(slope.dtype) if slope.requires_grad else None
        return g * factor, gs

    return _emit("prelu", (a, slope), out, bw)


# --------------------------------------------------------------- reductions


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(ax % ndim for ax in axis))
    if len(set(axes)) != len(axes) or any(not -ndim <= ax < ndim for ax in axis):
        raise ShapeError(f"invalid axes {axis} for ndim {ndim}")
    return axes


def _expand(g: Array, axes: tuple[int, ...], shape: tuple[int, ...]) -> Array:
    keep = list(shape)
    for ax in axes:
        keep[ax] = 1
    return np.broadcast_to(g.reshape(keep), shape)


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    axes = _norm_axes(axis, a.data.ndim)
    out = np.asarray(a.data.sum(axis=axes))
    return _emit("sum", (a,), out, lambda g: (np.array(_expand(g, axes, a.shape)),))


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axes(axis, a.data.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = np.asarray(a.data.mean(axis=axes))
    return _emit("mean", (a,), out, lambda g: (np.array(_expand(g, axes, a.shape)) / n,))


def reduce_stats(a: Tensor, axes) -> tuple[Tensor, Tensor]:
    """Mean and population variance (divide by N) over ``axes``; reduced axes are dropped."""
    axes = _norm_axes(axes, a.data.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if n == 0 or a.size == 0:
        raise ShapeError("reduce_stats over zero elements")
    x = a.data
    mu = x.mean(axis=axes, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=axes, keepdims=True)
    keep_shape = mu.shape
    mean_t = _emit("mean", (a,), np.squeeze(mu, axis=axes),
                   lambda g: (np.broadcast_to(g.reshape(keep_shape), x.shape) / n,))
    var_t = _emit("var", (a,), np.squeeze(var, axis=axes),
                  lambda g: (g.reshape(keep_shape) * centered * (2.0 / n),))
    return mean_t, var_t


def normalize(a: Tensor, axes, eps: float,
              stats: tuple[Array, Array] | None = None) -> tuple[Tensor, Array, Array]:
    """(x - mean) / sqrt(var + eps) over ``axes`` as a single fused op.

    With ``stats=(mean, var)`` (shaped as reduced over ``axes``) those fixed
    statistics are used and carry no gradient. Returns the output plus the
    mean/var actually used, reduced shape.
    """
    axes = _norm_axes(axes, a.data.ndim)
    x = a.data
    n = int(np.prod([x.shape[ax] for ax in axes]))
    if n == 0:
        raise ShapeError("normalize over zero elements")
    if stats is None:
        mu = x.mean(axis=axes, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv

        def bw(g):
            gm = g.mean(axis=axes, keepdims=True)
            gxm = (g * xhat).mean(axis=axes, keepdims=True)
            return (inv * (g - gm - xhat * gxm),)
    else:
        keep = [1] * x.ndim
        for ax in range(x.ndim):
            if ax not in axes:
                keep[ax] = x.shape[ax]
        mu = np.asarray(stats[0], dtype=x.dtype).reshape(keep)
        var = np.asarray(stats[1], dtype=x.dtype).reshape(keep)
        inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
        xhat = (x - mu) * inv

        def bw(g):
            return (g * inv,)

    out = _emit("normalize", (a,), xhat.astype(x.dtype, copy=False), bw)
    return out, np.squeeze(mu, axis=axes), np.squeeze(var, axis=axes)


# ------------------------------------------------------------------ spatial


def _check_nchw(name: str, t: Tensor) -> None:
    if t.data.ndim != 4:
        raise ShapeError(f"{name}: expected (B, C, H, W), got {t.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation via im2col and one GEMM."""
    _check_nchw("conv2d input", x)
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d weight: expected (Cout, Cin, k, k), got {weight.shape}")
    B, C, H, W = x.shape
    Cout, Cin, kh, kw = weight.shape
    if Cin != C:
        raise ShapeError(f"conv2d: input has {C} channels, weight expects {Cin}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd extent, got {kh}x{kw}")
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({Cout},)")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be >= 1 and padding >= 0")
    k = kh
    span_h, span_w = H + 2 * padding - k, W + 2 * padding - k
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ShapeError(
            f"conv2d: output extent ({H}+2*{padding}-{k})/{stride}+1 is not integral")
    Ho, Wo = span_h // stride + 1, span_w // stride + 1
    xd = x.data
    if padding:
        xp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=xd.dtype)
        xp[:, :, padding:padding + H, padding:padding + W] = xd
    else:
        xp = xd
    if stride == 1 and k > 1 and C >= 8 and Ho * Wo >= 64:
        return _conv2d_shifted(x, weight, bias, padding, Ho, Wo)
    wmat = weight.data.reshape(Cout, -1)
    if k == 1 and stride == 1:
        cols = xp.reshape(B, C, Ho * Wo)
    else:
        cols6 = np.empty((B, C, k, k, Ho, Wo), dtype=xd.dtype)
        for i in range(k):
            for j in range(k):
                cols6[:, :, i, j] = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
        cols = cols6.reshape(B, C * k * k, Ho * Wo)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(B, Cout, Ho, Wo)

    def bw(g):
        g3 = g.reshape(B, Cout, Ho * Wo)
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape) \
            if weight.requires_grad else None
        gb = g3.sum(axis=(0, 2)) if bias is not None and bias.requires_grad else None
        if not x.requires_grad:
            return None, gw, gb
        gcols = wmat.T @ g3
        if k == 1 and stride == 1:
            gxp = gcols.reshape(B, C, Ho, Wo)
        else:
            gcols = gcols.reshape(B, C, k, k, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, i, j]
        if padding:
            gxp = np.ascontiguousarray(gxp[:, :, padding:padding + H, padding:padding + W])
        return gxp, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv2d", inputs, out, bw)


def _conv2d_shifted(x: Tensor, weight: Tensor, bias: Tensor | None,
                    padding: int, Ho: int, Wo: int) -> Tensor:
    """Stride-1 conv as k*k GEMMs over row-shifted views of a flat padded NHWC buffer.

    Output row ``n`` of the flat grid accumulates ``xf[n + i*Wp + j] @ w[i, j]``;
    rows that fall in the padding margin are computed and discarded. No im2col
    buffer is built, which is what makes this faster at high resolution.
    """
    B, C, H, W = x.shape
    Cout, _, k, _ = weight.shape
    p = padding
    Hp, Wp = H + 2 * p, W + 2 * p
    L = B * Hp * Wp
    dt = x.dtype
    xf = np.zeros((L + (k - 1) * Wp + (k - 1), C), dtype=dt)
    xf[:L].reshape(B, Hp, Wp, C)[:, p:p + H, p:p + W, :] = x.data.transpose(0, 2, 3, 1)
    wt = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0))  # (k, k, Cin, Cout)
    full = np.zeros((L, Cout), dtype=dt)
    for i in range(k):
        for j in range(k):
            s = i * Wp + j
            full += xf[s:s + L] @ wt[i, j]
    out = full.reshape(B, Hp, Wp, Cout)[:, :Ho, :Wo, :].transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)

    def bw(g):
        gf = np.zeros((L, Cout), dtype=dt)
        gf.reshape(B, Hp, Wp, Cout)[:, :Ho, :Wo, :] = g.transpose(0, 2, 3, 1)
        gw = np.empty((k, k, C, Cout), dtype=dt) if weight.requires_grad else None
        gxf = np.zeros_like(xf) if x.requires_grad else None
        for i in range(k):
            for j in range(k):
                s = i * Wp + j
                if gw is not None:
                    gw[i, j] = xf[s:s + L].T @ gf
                if gxf is not None:
                    gxf[s:s + L] += gf @ wt[i, j].T
        gx = None
        if gxf is not None:
            gx = np.ascontiguousarray(
                gxf[:L].reshape(B, Hp, Wp, C)[:, p:p + H, p:p + W, :].transpose(0, 3, 1, 2))
        gwt = np.ascontiguousarray(gw.transpose(3, 2, 0, 1)) if gw is not None else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gwt, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv2d", inputs, out, bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_nchw("concat_channels", a)
    _check_nchw("concat_channels", b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: B/H/W mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data.astype(a.dtype, copy=False)], axis=1)
    return _emit("concat", (a, b), out, lambda g: (g[:, :ca], g[:, ca:]))


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    _check_nchw("slice_channels", a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice", (a,), a.data[:, start:stop].copy(), bw)


def downsample2(a: Tensor) -> Tensor:
    """2x2 max pool, stride 2. Gradient routes to the first maximum of each window."""
    _check_nchw("downsample2", a)
    B, C, H, W = a.shape
    if H % 2 or W % 2:
        raise ShapeError(f"downsample2: spatial extents must be even, got {H}x{W}")
    x = a.data
    q = (x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2])
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))

    def bw(g):
        gx = np.zeros_like(x)
        taken = np.zeros(out.shape, dtype=bool)
        for (di, dj), qv in zip(((0, 0), (0, 1), (1, 0), (1, 1)), q):
            hit = (qv == out) & ~taken
            taken |= hit
            gx[:, :, di::2, dj::2] = g * hit
        return (gx,)

    return _emit("maxpool2", (a,), out, bw)


def upsample2(a: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling."""
    _check_nchw("upsample2", a)
    B, C, H, W = a.shape
    out = np.broadcast_to(a.data[:, :, :, None, :, None], (B, C, H, 2, W, 2)).reshape(B, C, 2 * H, 2 * W)

    def bw(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return _emit("upsample2", (a,), np.ascontiguousarray(out), bw)


def global_avg_pool(a: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial mean."""
    _check_nchw("global_avg_pool", a)
    B, C, H, W = a.shape
    out = a.data.mean(axis=(2, 3))
    return _emit("gap", (a,), out,
                 lambda g: (np.broadcast_to(g[:, :, None, None] / (H * W), a.shape).copy(),))


def softmax_channels(a: Tensor) -> Tensor:
    """Softmax over axis 1, stabilised by subtracting the per-pixel max."""
    _check_nchw("softmax_channels", a)
    if a.shape[1] < 2:
        raise ShapeError("softmax_channels needs at least 2 channels")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _emit("softmax", (a,), out, bw)
