"""Single-level orthonormal 2-D Haar transform and pixel (un)shuffle.

The forward DWT maps ``(n, c, h, w)`` to ``(n, 4c, h/2, w/2)`` with the
sub-bands concatenated as ``(aa, ad, da, dd)``, each block ``c`` channels
wide. For a 2x2 patch ``[[a, b], [c, d]]``::

    aa = (a + b + c + d) / 2      ad = (a + b - c - d) / 2
    da = (a - b + c - d) / 2      dd = (a - b - c + d) / 2

The transform is orthonormal, so its inverse is its transpose and the
backward pass of each direction is the forward pass of the other.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _result, check4d

SUBBAND_ORDER = ("aa", "ad", "da", "dd")


def _dwt(x: np.ndarray) -> np.ndarray:
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    s_ab, d_ab = a + b, a - b
    s_cd, d_cd = c + d, c - d
    half = x.dtype.type(0.5)
    return np.concatenate(
        [(s_ab + s_cd) * half, (s_ab - s_cd) * half, (d_ab + d_cd) * half, (d_ab - d_cd) * half],
        axis=1,
    )


def _idwt(y: np.ndarray) -> np.ndarray:
    n, c4, h, w = y.shape
    c = c4 // 4
    aa, ad, da, dd = y[:, :c], y[:, c : 2 * c], y[:, 2 * c : 3 * c], y[:, 3 * c :]
    half = y.dtype.type(0.5)
    out = np.empty((n, c, 2 * h, 2 * w), dtype=y.dtype)
    p, q = aa + ad, aa - ad
    r, s = da + dd, da - dd
    out[:, :, 0::2, 0::2] = (p + r) * half
    out[:, :, 0::2, 1::2] = (p - r) * half
    out[:, :, 1::2, 0::2] = (q + s) * half
    out[:, :, 1::2, 1::2] = (q - s) * half
    return out


def dwt2_haar(x: Tensor) -> Tensor:
    check4d(x)
    h, w = x.shape[2], x.shape[3]
    if h % 2 or w % 2:
        raise ShapeError(f"dwt2_haar needs even spatial dims, got {h}x{w}")
    return _result(_dwt(x.data), (x,), lambda g: (_idwt(g),))


def idwt2_haar(y: Tensor) -> Tensor:
    check4d(y)
    if y.shape[1] % 4:
        raise ShapeError(f"idwt2_haar needs a channel count divisible by 4, got {y.shape[1]}")
    return _result(_idwt(y.data), (y,), lambda g: (_dwt(g),))


def _shuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = x.shape
    k = c // (r * r)
    return x.reshape(n, k, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, k, h * r, w * r)


def _unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    n, k, hr, wr = x.shape
    h, w = hr // r, wr // r
    return x.reshape(n, k, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, k * r * r, h, w)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``out[n, k, r*i + di, r*j + dj] = in[n, k*r*r + di*r + dj, i, j]``."""
    check4d(x)
    if r < 1 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: {x.shape[1]} channels not divisible by r^2 = {r * r}")
    if r == 1:
        return x
    return _result(_shuffle(x.data, r), (x,), lambda g: (_unshuffle(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    check4d(x)
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {x.shape[2:]} not divisible by {r}")
    if r == 1:
        return x
    return _result(_unshuffle(x.data, r), (x,), lambda g: (_shuffle(g, r),))
