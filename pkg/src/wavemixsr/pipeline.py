"""RGB-in / RGB-out inference and dataset evaluation."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ImageIOError, ShapeError
from .imaging import (
    EvalRecord,
    crop_to_multiple,
    degrade_bicubic,
    image_to_tensor,
    load_png,
    quantize,
    rgb_to_ycbcr,
    y_channel_metrics,
    ycbcr_to_rgb,
)
from .model import Model, model_forward
from .tensor import Tensor, resize

log = logging.getLogger(__name__)


def upscale_rgb(model: Model, rgb: Tensor) -> Tensor:
    """RGB -> YCbCr -> model (eval mode) -> RGB, clamped to [0, 1]."""
    return ycbcr_to_rgb(model_forward(rgb_to_ycbcr(rgb), model, training=False))


def bicubic_upscale(rgb: Tensor, scale: int) -> Tensor:
    _, _, h, w = rgb.shape
    return resize(rgb, h * scale, w * scale, "bicubic")


def list_pngs(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ImageIOError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")


@dataclass
class EvalRun:
    records: list[EvalRecord] = field(default_factory=list)
    baseline: list[EvalRecord] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def _evaluate_one(path: Path, model: Model | None, scale: int, lr_dir, crop_border: int):
    hr = image_to_tensor(load_png(path))
    hr = Tensor(crop_to_multiple(hr.data, scale))
    if lr_dir is not None:
        lr = image_to_tensor(load_png(Path(lr_dir) / path.name))
        if (lr.shape[2] * scale, lr.shape[3] * scale) != hr.shape[2:]:
            raise ShapeError(f"{path.name}: LR {lr.shape[2:]} x{scale} does not match HR {hr.shape[2:]}")
    else:
        lr = quantize(degrade_bicubic(hr, scale))
    base = quantize(bicubic_upscale(lr, scale))
    base_rec = EvalRecord(path.stem, *y_channel_metrics(base, hr, crop_border))
    if model is None:
        return base_rec, base_rec
    sr = quantize(upscale_rgb(model, lr))
    return EvalRecord(path.stem, *y_channel_metrics(sr, hr, crop_border)), base_rec


def evaluate_dir(
    hr_dir,
    model: Model | None,
    scale: int,
    lr_dir=None,
    crop_border: int = 0,
    jobs: int = 1,
) -> EvalRun:
    """Y-channel PSNR/SSIM for every PNG in ``hr_dir``. With ``model=None``
    the bicubic upsampler itself is evaluated. Unreadable images are skipped
    with a warning."""
    paths = list_pngs(hr_dir)

    def work(p):
        try:
            return p, _evaluate_one(p, model, scale, lr_dir, crop_border)
        except (ImageIOError, ShapeError, ValueError) as exc:
            return p, exc

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(work, paths))
    else:
        results = [work(p) for p in paths]

    run = EvalRun()
    for p, res in results:
        if isinstance(res, Exception):
            log.warning("skipping %s: %s", p.name, res)
            run.skipped.append(p.name)
            continue
        run.records.append(res[0])
        run.baseline.append(res[1])
    return run
