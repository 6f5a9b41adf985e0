"""Optimisers, patch sampling, the training loop and finite-difference
gradient checks."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .imaging import degrade_bicubic, huber_loss, rgb_to_ycbcr
from .model import Model, model_forward
from .tensor import Tape, Tensor, slice_channels, weighted_sum


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


@dataclass
class SgdState:
    lr: float = 1e-3
    momentum: float = 0.9
    velocity: list[np.ndarray] = field(default_factory=list)


def _check_grads(params: Sequence[Tensor], grads: Sequence[np.ndarray]):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamWState) -> AdamWState:
    """One AdamW update in place: decoupled decay, then the bias-corrected
    Adam step."""
    _check_grads(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        dt = p.data.dtype
        p.data *= dt.type(1.0 - state.lr * state.weight_decay)
        m *= dt.type(b1)
        m += dt.type(1.0 - b1) * g
        v *= dt.type(b2)
        v += dt.type(1.0 - b2) * (g * g)
        denom = np.sqrt(v / dt.type(bc2)) + dt.type(state.eps)
        p.data -= dt.type(state.lr / bc1) * m / denom
    return state


def sgd_momentum_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: SgdState) -> SgdState:
    """v <- mu*v + g; theta <- theta - lr*v."""
    _check_grads(params, grads)
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    for p, g, v in zip(params, grads, state.velocity):
        dt = p.data.dtype
        v *= dt.type(state.momentum)
        v += g
        p.data -= dt.type(state.lr) * v
    return state


@dataclass
class TrainPlan:
    total_steps: int = 200
    switch_step: int | None = None  # AdamW before, SGD from here on; None = never switch
    batch_size: int = 1
    patch_size: int = 64  # LR pixels
    scale: int = 2
    huber_delta: float = 1.0
    seed: int = 0
    lr: float = 1e-3
    weight_decay: float = 0.01
    sgd_lr: float = 1e-3
    sgd_momentum: float = 0.9

    def __post_init__(self):
        if self.switch_step is None:
            self.switch_step = self.total_steps
        if self.total_steps < 0 or not 0 <= self.switch_step <= self.total_steps:
            raise ParameterError(
                f"need 0 <= switch_step <= total_steps, got {self.switch_step} / {self.total_steps}"
            )
        if self.batch_size < 1 or self.patch_size < 1:
            raise ParameterError("batch_size and patch_size must be >= 1")


def sample_patches(hr_image: Tensor, plan: TrainPlan, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """Random scale-aligned HR crops and their bicubic LR counterparts,
    stacked into batches ``(lr, hr)``."""
    _, _, H, W = hr_image.shape
    s = plan.scale
    size = plan.patch_size * s
    if size > H or size > W:
        raise ParameterError(f"image {H}x{W} smaller than HR patch {size}x{size}")
    ny = (H - size) // s + 1
    nx = (W - size) // s + 1
    lrs, hrs = [], []
    for _ in range(plan.batch_size):
        oy = s * int(rng.integers(ny))
        ox = s * int(rng.integers(nx))
        hr = Tensor(hr_image.data[:1, :, oy : oy + size, ox : ox + size])
        lrs.append(degrade_bicubic(hr, s).data)
        hrs.append(hr.data)
    return Tensor(np.concatenate(lrs)), Tensor(np.concatenate(hrs))


def patch_offsets(hr_shape: tuple[int, int], plan: TrainPlan, rng: np.random.Generator, draws: int) -> np.ndarray:
    """Offsets drawn exactly as ``sample_patches`` draws them (for
    statistics on the crop distribution)."""
    H, W = hr_shape
    s = plan.scale
    size = plan.patch_size * s
    ny = (H - size) // s + 1
    nx = (W - size) // s + 1
    out = np.empty((draws, 2), dtype=int)
    for i in range(draws):
        out[i] = s * int(rng.integers(ny)), s * int(rng.integers(nx))
    return out


def training_loss(model: Model, lr: Tensor, hr: Tensor, delta: float, rng) -> Tensor:
    """Huber loss between the Y channel of the model output and the HR Y."""
    pred = model_forward(rgb_to_ycbcr(lr), model, training=True, rng=rng)
    target = Tensor(rgb_to_ycbcr(hr).data[:, :1])
    return huber_loss(slice_channels(pred, 0, 1), target, delta)


@dataclass
class TrainResult:
    model: Model
    losses: list[float]


def train(
    model: Model,
    dataset: Sequence[Tensor],
    plan: TrainPlan,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train ``model`` in place on random patches from ``dataset`` (RGB
    tensors in [0, 1]). Raises :class:`NumericError` on a non-finite loss."""
    if not dataset:
        raise ParameterError("training needs at least one image")
    if plan.scale != model.config.scale:
        raise ParameterError(f"plan scale {plan.scale} does not match model scale {model.config.scale}")
    rng = np.random.default_rng(plan.seed)
    params = model.parameters()
    adam = AdamWState(lr=plan.lr, weight_decay=plan.weight_decay)
    sgd = SgdState(lr=plan.sgd_lr, momentum=plan.sgd_momentum)
    losses = []
    for step in range(plan.total_steps):
        img = dataset[int(rng.integers(len(dataset)))]
        lr, hr = sample_patches(img, plan, rng)
        model.zero_grad()
        with Tape() as tape:
            loss = training_loss(model, lr, hr, plan.huber_delta, rng)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError("training diverged: non-finite loss", step)
        tape.backward(loss)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        if step < plan.switch_step:
            adamw_step(params, grads, adam)
        else:
            sgd_momentum_step(params, grads, sgd)
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
    model.zero_grad()
    return TrainResult(model, losses)


def write_loss_csv(losses: Sequence[float], path: str | os.PathLike):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    tolerance: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if e.passed else 'FAIL'}  {e.name:<28} max rel err {e.max_rel_error:.3e} "
            f"(tol {e.tolerance:.0e}, {e.samples} samples)"
            for e in self.entries
        ]


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    name: str,
    tolerance: float,
    samples: int = 20,
    step: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> GradCheckEntry:
    """Compare tape gradients of the scalar ``fn()`` against central finite
    differences at ``samples`` random coordinates of ``tensors``.

    ``fn`` must be a pure function of the tensors' current values.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = fn()
    tape.backward(out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    sizes = np.array([t.data.size for t in tensors])
    worst = 0.0
    for _ in range(samples):
        k = int(rng.choice(len(tensors), p=sizes / sizes.sum()))
        t = tensors[k]
        idx = int(rng.integers(t.data.size))
        flat = t.data.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + step
        up = fn().item()
        flat[idx] = orig - step
        down = fn().item()
        flat[idx] = orig
        numeric = (up - down) / (2 * step)
        worst = max(worst, relative_error(float(analytic[k].reshape(-1)[idx]), numeric))
    for t in tensors:
        t.grad = None
    return GradCheckEntry(name, worst, tolerance, samples)


def projected(op: Callable[[], Tensor], seed: int = 1) -> Callable[[], Tensor]:
    """Reduce a tensor-valued op to a scalar with a fixed random projection."""
    cache = {}

    def fn():
        out = op()
        if "w" not in cache:
            cache["w"] = np.random.default_rng(seed).standard_normal(out.shape)
        return weighted_sum(out, cache["w"])

    return fn


def grad_check(seed: int = 0, samples: int = 20) -> GradCheckReport:
    """Finite-difference checks of every differentiable op and of a tiny
    end-to-end 2x model, all in float64."""
    from .imaging import huber_loss as _huber
    from .model import BlockConfig, ModelConfig, block_forward, init_params
    from .tensor import (
        BatchNormParams,
        ConvParams,
        add,
        batch_norm,
        concat_channels,
        conv2d,
        crop,
        dropout,
        gelu,
        pad_to_even,
        resize,
    )
    from .wavelet import dwt2_haar, idwt2_haar, pixel_shuffle, pixel_unshuffle

    rng = np.random.default_rng(seed)

    def t(*shape):
        return Tensor(rng.standard_normal(shape))

    report = GradCheckReport()

    def run(name, op, tensors, tol=1e-3):
        report.entries.append(
            check_gradients(projected(op), tensors, name, tol, samples=samples, rng=np.random.default_rng(seed))
        )

    x = t(2, 3, 6, 5)
    conv = ConvParams(t(4, 3, 3, 3), t(4))
    run("conv2d 3x3 pad 1", lambda: conv2d(x, conv, padding=1), [x, conv.weight, conv.bias])
    x = t(2, 3, 7, 7)
    conv = ConvParams(t(2, 3, 3, 3), t(2))
    run("conv2d 3x3 stride 2", lambda: conv2d(x, conv, stride=2), [x, conv.weight, conv.bias])
    x = t(1, 4, 5, 5)
    conv = ConvParams(t(6, 4, 1, 1), t(6))
    run("conv2d 1x1", lambda: conv2d(x, conv), [x, conv.weight, conv.bias])
    x = t(2, 3, 4, 4)
    run("gelu", lambda: gelu(x), [x])
    x = t(2, 3, 4, 5)
    bn = BatchNormParams(t(3), t(3), np.zeros(3), np.ones(3))
    run("batch_norm (train)", lambda: batch_norm(x, bn, training=True), [x, bn.gamma, bn.beta])
    bn_eval = BatchNormParams(t(3), t(3), rng.standard_normal(3), rng.uniform(0.5, 2, 3))
    run("batch_norm (eval)", lambda: batch_norm(x, bn_eval, training=False), [x, bn_eval.gamma, bn_eval.beta])
    x = t(2, 3, 4, 4)
    run("dropout (fixed mask)", lambda: dropout(x, 0.3, True, np.random.default_rng(7)), [x])
    x = t(1, 2, 5, 6)
    run("resize bicubic", lambda: resize(x, 10, 9, "bicubic"), [x])
    run("resize bilinear", lambda: resize(x, 3, 12, "bilinear"), [x])
    a, b = t(1, 2, 3, 3), t(1, 3, 3, 3)
    run("concat_channels", lambda: concat_channels([a, b]), [a, b], tol=1e-9)
    a, b = t(1, 2, 3, 3), t(1, 2, 3, 3)
    run("add", lambda: add(a, b), [a, b], tol=1e-9)
    x = t(1, 2, 5, 7)
    run("pad_to_even", lambda: pad_to_even(x), [x])
    run("crop", lambda: crop(x, 3, 4), [x])
    x = t(1, 2, 6, 4)
    run("dwt2_haar", lambda: dwt2_haar(x), [x])
    y = t(1, 8, 3, 2)
    run("idwt2_haar", lambda: idwt2_haar(y), [y])
    run("pixel_shuffle", lambda: pixel_shuffle(y, 2), [y])
    x = t(1, 2, 6, 4)
    run("pixel_unshuffle", lambda: pixel_unshuffle(x, 2), [x])
    q = t(1, 1, 4, 4)
    p = Tensor(q.data + rng.uniform(-2, 2, q.shape))
    report.entries.append(
        check_gradients(lambda: _huber(p, q, 1.0), [p], "huber_loss", 1e-3, samples, rng=np.random.default_rng(seed))
    )

    bcfg = BlockConfig(embed_dim=8, mlp_mult=2.0, dropout=0.3)
    tiny = init_params(ModelConfig.build(scale=2, embed_dim=8, depth=1, mlp_mult=2.0, dropout=0.3), seed).astype(
        np.float64
    )
    bp = tiny.stages[0].blocks[0]
    bp.bn.gamma.data = rng.uniform(0.5, 1.5, 8)
    bp.bn.beta.data = rng.standard_normal(8) * 0.1
    xb = t(2, 8, 5, 6)
    run(
        "block_forward",
        lambda: block_forward(xb, bp, bcfg, training=True, rng=np.random.default_rng(3)),
        [xb] + _block_tensors(bp),
    )

    lr = Tensor(rng.uniform(0, 1, (2, 3, 6, 6)))
    hr = Tensor(rng.uniform(0, 1, (2, 3, 12, 12)))
    report.entries.append(
        check_gradients(
            lambda: training_loss(tiny, lr, hr, 1.0, np.random.default_rng(5)),
            tiny.parameters(),
            "end-to-end 2x model (Huber)",
            1e-2,
            samples=max(samples, 20),
            rng=np.random.default_rng(seed + 1),
        )
    )
    return report


def _block_tensors(bp):
    return [
        bp.reduce.weight,
        bp.reduce.bias,
        bp.mlp1.weight,
        bp.mlp1.bias,
        bp.mlp2.weight,
        bp.mlp2.bias,
        bp.expand.weight,
        bp.expand.bias,
        bp.bn.gamma,
        bp.bn.beta,
    ]
