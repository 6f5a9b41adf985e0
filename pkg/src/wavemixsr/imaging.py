"""Colour conversion, bicubic degradation, Y-channel quality metrics, the
Huber training loss and PNG I/O."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import ImageIOError, ParameterError, ShapeError
from .tensor import DTYPE, Tensor, _result, check4d, resize

# BT.601 studio swing, inputs in [0, 1], outputs scaled by 1/255
_RGB2YCC = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
)
_YCC_OFFSET = np.array([16.0, 128.0, 128.0])
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def _apply_color(x: np.ndarray, mat: np.ndarray) -> np.ndarray:
    return np.einsum("ij,njhw->nihw", mat, x)


def rgb_to_ycbcr(x: Tensor) -> Tensor:
    check4d(x)
    if x.shape[1] != 3:
        raise ShapeError(f"rgb_to_ycbcr expects 3 channels, got {x.shape[1]}")
    rgb = np.clip(x.data.astype(np.float64), 0.0, 1.0)
    ycc = (_apply_color(rgb, _RGB2YCC) + _YCC_OFFSET.reshape(1, 3, 1, 1)) / 255.0
    return Tensor(ycc.astype(x.dtype))


def ycbcr_to_rgb(x: Tensor) -> Tensor:
    check4d(x)
    if x.shape[1] != 3:
        raise ShapeError(f"ycbcr_to_rgb expects 3 channels, got {x.shape[1]}")
    ycc = x.data.astype(np.float64) * 255.0 - _YCC_OFFSET.reshape(1, 3, 1, 1)
    rgb = np.clip(_apply_color(ycc, _YCC2RGB), 0.0, 1.0)
    return Tensor(rgb.astype(x.dtype))


def crop_to_multiple(x: np.ndarray, scale: int) -> np.ndarray:
    """Drop the bottom/right remainder so h and w divide by ``scale``."""
    h, w = x.shape[-2], x.shape[-1]
    return x[..., : h - h % scale, : w - w % scale]


def degrade_bicubic(hr: Tensor, scale: int) -> Tensor:
    """Bicubic down-sampling by an integer factor (after cropping)."""
    check4d(hr)
    if scale < 1:
        raise ParameterError(f"scale must be >= 1, got {scale}")
    cropped = crop_to_multiple(hr.data, scale)
    h, w = cropped.shape[2] // scale, cropped.shape[3] // scale
    if h < 1 or w < 1:
        raise ParameterError(f"image {hr.shape[2]}x{hr.shape[3]} too small for scale {scale}")
    return Tensor(resize(Tensor(cropped), h, w, "bicubic").data)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    a, b = _data(a), _data(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def gaussian_window_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows of two
    single-channel images in [0, 1]."""
    a, b = np.squeeze(_data(a)).astype(np.float64), np.squeeze(_data(b)).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a single-channel image, got shape {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ParameterError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    g = gaussian_window_1d()
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def huber_loss(pred: Tensor, target: Tensor, delta: float = 1.0) -> Tensor:
    """Mean Huber loss; differentiable with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"huber_loss: shape mismatch {pred.shape} vs {target.shape}")
    if delta <= 0:
        raise ParameterError(f"delta must be > 0, got {delta}")
    r = pred.data - target.data
    ar = np.abs(r)
    quad = ar <= delta
    vals = np.where(quad, 0.5 * r * r, delta * (ar - 0.5 * delta))
    out = np.asarray(vals.mean(), dtype=pred.dtype)
    n = r.size

    def backward(g):
        dr = np.where(quad, r, delta * np.sign(r)) / n
        return (g * dr).astype(pred.dtype, copy=False), -(g * dr).astype(pred.dtype, copy=False)

    return _result(out, (pred, target), backward)


# --------------------------------------------------------------------------
# PNG I/O
# --------------------------------------------------------------------------


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit RGB or grayscale PNG as an (h, w, c) uint8 array."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"{path}: no such file")
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageIOError(f"{path}: not a PNG file ({im.format})")
            if im.mode not in ("RGB", "L"):
                raise ImageIOError(f"{path}: unsupported PNG mode {im.mode!r} (need 8-bit RGB or grayscale)")
            arr = np.array(im, dtype=np.uint8)
    except ImageIOError:
        raise
    except Exception as exc:  # PIL raises a zoo of types for corrupt files
        raise ImageIOError(f"{path}: cannot decode PNG ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_png(img: np.ndarray, path: str | os.PathLike):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ImageIOError(f"save_png expects uint8 data, got {img.dtype}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    try:
        Image.fromarray(img).save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write PNG ({exc})") from exc


def image_to_tensor(img: np.ndarray, rgb: bool = True) -> Tensor:
    """uint8 (h, w, c) -> (1, c, h, w) float32 in [0, 1]; grayscale is
    replicated to three channels when ``rgb`` is set."""
    if img.ndim == 2:
        img = img[:, :, None]
    if rgb and img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return Tensor((img.astype(DTYPE) / 255.0).transpose(2, 0, 1)[None].copy())


def tensor_to_image(x: Tensor) -> np.ndarray:
    """(1, c, h, w) in [0, 1] -> uint8 (h, w, c), clamped, round half away
    from zero."""
    check4d(x)
    if x.shape[0] != 1:
        raise ShapeError(f"tensor_to_image expects a batch of one, got {x.shape[0]}")
    v = np.clip(x.data[0].astype(np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8).transpose(1, 2, 0)


def quantize(x: Tensor) -> Tensor:
    """Round-trip through 8-bit storage."""
    return image_to_tensor(tensor_to_image(x), rgb=False)


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class EvalRecord:
    image_id: str
    psnr_db: float
    ssim: float


def y_channel_metrics(sr_rgb: Tensor, hr_rgb: Tensor, crop_border: int = 0) -> tuple[float, float]:
    """PSNR and SSIM between the Y channels of two RGB tensors."""
    ys = rgb_to_ycbcr(Tensor(sr_rgb.data.astype(np.float64))).data[0, 0]
    yh = rgb_to_ycbcr(Tensor(hr_rgb.data.astype(np.float64))).data[0, 0]
    if crop_border:
        b = crop_border
        ys, yh = ys[b:-b, b:-b], yh[b:-b, b:-b]
    return psnr(ys, yh), ssim(ys, yh)


def mean_record(records: Sequence[EvalRecord]) -> EvalRecord:
    if not records:
        return EvalRecord("mean", math.nan, math.nan)
    return EvalRecord(
        "mean",
        float(np.mean([r.psnr_db for r in records])),
        float(np.mean([r.ssim for r in records])),
    )


def write_eval_csv(records: Iterable[EvalRecord], path: str | os.PathLike):
    records = list(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "psnr_db", "ssim"])
        for r in records + [mean_record(records)]:
            w.writerow([r.image_id, f"{r.psnr_db:.6f}", f"{r.ssim:.6f}"])


def read_eval_csv(path: str | os.PathLike) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EvalRecord(r["image"], float(r["psnr_db"]), float(r["ssim"])) for r in rows]
