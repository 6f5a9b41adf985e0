"""Dense NCHW tensors, a recording tape for reverse-mode gradients, and the
kernel operations the network is assembled from.

Every op is a plain function of :class:`Tensor` arguments. When a
:class:`Tape` is active and any argument requires a gradient, the op
records a closure that maps the upstream gradient to gradients of its
inputs. Ops keep the floating dtype of their inputs, so the same code runs
in float32 for production and in float64 for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ParameterError, ShapeError

DTYPE = np.float32

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A float array plus gradient bookkeeping.

    Activations are 4-D ``(n, c, h, w)``; parameters may have any rank
    (conv weights are 4-D, biases 1-D) and scalar losses are 0-D.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def check4d(x: Tensor, what: str = "input"):
    if x.data.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (n, c, h, w), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{what} has an empty dimension: {x.shape}")


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

_TAPES: list["Tape"] = []


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Records differentiable ops executed inside ``with Tape() as tape:``."""

    records: list[_Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def backward(self, loss: Tensor, grad: np.ndarray | None = None):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf tensor
        that requires a gradient."""
        if grad is None:
            if loss.data.size != 1:
                raise ShapeError("backward() without an explicit gradient needs a scalar loss")
            grad = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): grad}
        holders: dict[int, Tensor] = {id(loss): loss}
        produced = {id(r.out) for r in self.records}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                holders[key] = t
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, g in grads.items():
            if key in produced:
                continue
            t = holders[key]
            t.grad = g if t.grad is None else t.grad + g


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.records.append(_Record(out, tuple(inputs), backward))
    return out


# --------------------------------------------------------------------------
# parameter containers
# --------------------------------------------------------------------------


@dataclass
class ConvParams:
    weight: Tensor  # (out_ch, in_ch, kh, kw)
    bias: Tensor  # (out_ch,)

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, dtype=DTYPE) -> "BatchNormParams":
        return cls(
            gamma=Tensor(np.ones(channels, dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


def conv2d(x: Tensor, p: ConvParams, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2-D cross-correlation."""
    check4d(x)
    if stride < 1 or padding < 0:
        raise ParameterError(f"invalid stride={stride} / padding={padding}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = p.weight.shape
    if c != ic:
        raise ShapeError(f"conv2d expects {ic} input channels, got {c}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape} and kernel {kh}x{kw}")

    xd = x.data
    wd = p.weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd

    def window(i, j):
        return xp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride]

    out = np.zeros((n, oc, oh * ow), dtype=np.result_type(xd, wd))
    for i in range(kh):
        for j in range(kw):
            out += np.matmul(wd[:, :, i, j], window(i, j).reshape(n, c, oh * ow))
    out = out.reshape(n, oc, oh, ow) + p.bias.data.reshape(1, oc, 1, 1)

    def backward(g):
        g2 = g.reshape(n, oc, oh * ow)
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                cols = window(i, j).reshape(n, c, oh * ow)
                gw[:, :, i, j] = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
                if gxp is not None:
                    gxp[:, :, i : i + stride * (oh - 1) + 1 : stride, j : j + stride * (ow - 1) + 1 : stride] += (
                        np.matmul(wd[:, :, i, j].T, g2).reshape(n, c, oh, ow)
                    )
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _result(out, (x, p.weight, p.bias), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    out = (xd * cdf).astype(xd.dtype, copy=False)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype, copy=False),)

    return _result(out, (x,), backward)


def batch_norm(x: Tensor, p: BatchNormParams, training: bool) -> Tensor:
    """Per-channel normalisation over (n, h, w).

    In training mode the batch statistics are used and ``p``'s running
    statistics are updated in place (running variance uses the unbiased
    batch variance).
    """
    check4d(x)
    n, c, h, w = x.shape
    if c != p.gamma.shape[0]:
        raise ShapeError(f"batch_norm expects {p.gamma.shape[0]} channels, got {c}")
    xd = x.data
    gamma = p.gamma.data.reshape(1, c, 1, 1)
    beta = p.beta.data.reshape(1, c, 1, 1)
    m = n * h * w

    if training:
        mean = xd.mean(axis=(0, 2, 3), keepdims=True)
        centered = xd - mean
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        mom = p.momentum
        unbiased = var.reshape(c) * (m / (m - 1)) if m > 1 else var.reshape(c)
        p.running_mean[...] = (1 - mom) * p.running_mean + mom * mean.reshape(c)
        p.running_var[...] = (1 - mom) * p.running_var + mom * unbiased
    else:
        mean = p.running_mean.reshape(1, c, 1, 1).astype(xd.dtype)
        centered = xd - mean
        var = p.running_var.reshape(1, c, 1, 1).astype(xd.dtype)
    inv_std = 1.0 / np.sqrt(var + p.eps)
    xhat = centered * inv_std
    out = (xhat * gamma + beta).astype(xd.dtype, copy=False)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma
        if training:
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = gxhat * inv_std
        return gx.astype(xd.dtype, copy=False), ggamma, gbeta

    return _result(out, (x, p.gamma, p.beta), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    return np.where(
        t <= 1,
        ((a + 2) * t - (a + 3)) * t * t + 1,
        np.where(t < 2, ((a * t - 5 * a) * t + 8 * a) * t - 4 * a, 0.0),
    )


def interp_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """(n_out, n_in) float64 matrix of 1-D interpolation weights.

    Half-pixel-centre mapping, edge indices clamped, no antialiasing.
    """
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    base = np.floor(src)
    frac = src - base
    if mode == "bicubic":
        offsets = np.arange(-1, 3)
        weights = _cubic(frac[:, None] - offsets[None, :])
    elif mode == "bilinear":
        offsets = np.arange(0, 2)
        weights = np.stack([1.0 - frac, frac], axis=1)
    else:
        raise ParameterError(f"unknown resize mode {mode!r}")
    idx = np.clip(base[:, None].astype(int) + offsets[None, :], 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    rows = np.repeat(np.arange(n_out), len(offsets))
    np.add.at(mat, (rows, idx.ravel()), weights.ravel())
    return mat


def resize(x: Tensor, out_h: int, out_w: int, mode: str = "bicubic") -> Tensor:
    """Separable bilinear/bicubic (a = -0.5) resampling.

    Differentiable: stage two of a 4x model resizes the Y output of stage
    one, so gradients must flow through it.
    """
    check4d(x)
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"resize target must be >= 1x1, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x
    dt = x.dtype
    rh = interp_matrix(h, out_h, mode).astype(dt)
    rw = interp_matrix(w, out_w, mode).astype(dt)
    out = np.matmul(np.matmul(rh, x.data), rw.T)

    def backward(g):
        return (np.matmul(np.matmul(rh.T, g), rw),)

    return _result(out, (x,), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    for t in xs:
        check4d(t)
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: {t.shape} does not match batch/spatial dims of {xs[0].shape}")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([t.shape[1] for t in xs])[:-1]
    out = np.concatenate([t.data for t in xs], axis=1)
    return _result(out, tuple(xs), lambda g: np.split(g, bounds, axis=1))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    check4d(x)
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"channel slice [{start}:{stop}] out of range for {c} channels")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _result(x.data[:, start:stop], (x,), backward)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add: shape mismatch {x.shape} vs {y.shape}")
    return _result(x.data + y.data, (x, y), lambda g: (g, g))


def pad_to_even(x: Tensor) -> Tensor:
    """Reflect-pad one row at the bottom / one column at the right when the
    corresponding dimension is odd."""
    check4d(x)
    _, _, h, w = x.shape
    ph, pw = h % 2, w % 2
    if not (ph or pw):
        return x
    if (ph and h < 2) or (pw and w < 2):
        raise ShapeError(f"cannot reflect-pad a dimension of size 1: {x.shape}")
    out = np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")

    def backward(g):
        g = g.copy()
        if pw:
            g[:, :, :, w - 2] += g[:, :, :, w]
            g = g[:, :, :, :w]
        if ph:
            g[:, :, h - 2, :] += g[:, :, h, :]
            g = g[:, :, :h, :]
        return (g,)

    return _result(out, (x,), backward)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h`` x ``w`` region."""
    check4d(x)
    H, W = x.shape[2], x.shape[3]
    if h > H or w > W:
        raise ShapeError(f"crop {h}x{w} larger than input {H}x{W}")
    if (h, w) == (H, W):
        return x

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :h, :w] = g
        return (gx,)

    return _result(x.data[:, :, :h, :w], (x,), backward)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum(x * weights); a projection used to reduce an op's output
    to a scalar when checking gradients."""
    if x.shape != weights.shape:
        raise ShapeError(f"weighted_sum: shape mismatch {x.shape} vs {weights.shape}")
    out = np.asarray((x.data * weights).sum(), dtype=x.dtype)
    return _result(out, (x,), lambda g: (g * weights,))
