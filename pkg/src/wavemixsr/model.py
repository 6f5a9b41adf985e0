"""WaveMixSR-V2 network: the wavelet token-mixing block, the two-path 2x
stage, and the multi-stage model built from them."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor import (
    DTYPE,
    BatchNormParams,
    ConvParams,
    Tensor,
    add,
    batch_norm,
    check4d,
    concat_channels,
    conv2d,
    crop,
    dropout,
    gelu,
    pad_to_even,
    resize,
    slice_channels,
)
from .wavelet import dwt2_haar, pixel_shuffle

UPSAMPLE_MODES = ("bilinear", "bicubic")


@dataclass
class BlockConfig:
    embed_dim: int = 144
    mlp_mult: float = 2.0
    dropout: float = 0.3

    def __post_init__(self):
        if self.embed_dim < 4 or self.embed_dim % 4:
            raise ParameterError(f"embed_dim must be a positive multiple of 4, got {self.embed_dim}")
        if self.mlp_mult <= 1:
            raise ParameterError(f"mlp_mult must be > 1, got {self.mlp_mult}")
        if not 0 <= self.dropout < 1:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def hidden_dim(self) -> int:
        return int(round(self.mlp_mult * self.embed_dim))


@dataclass
class SR2xConfig:
    depth: int = 4
    block: BlockConfig = field(default_factory=BlockConfig)
    upsample_mode: str = "bicubic"

    def __post_init__(self):
        if self.depth < 1:
            raise ParameterError(f"depth must be >= 1, got {self.depth}")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ParameterError(f"upsample_mode must be one of {UPSAMPLE_MODES}")


@dataclass
class ModelConfig:
    stages: int = 2
    sr2x: SR2xConfig = field(default_factory=SR2xConfig)

    def __post_init__(self):
        if self.stages < 1:
            raise ParameterError(f"stages must be >= 1, got {self.stages}")

    @property
    def scale(self) -> int:
        return 2**self.stages

    @classmethod
    def build(
        cls,
        scale: int = 4,
        embed_dim: int = 144,
        depth: int = 4,
        mlp_mult: float = 2.0,
        dropout: float = 0.3,
        upsample_mode: str = "bicubic",
    ) -> "ModelConfig":
        stages = int(np.log2(scale)) if scale >= 2 else 0
        if 2**stages != scale:
            raise ParameterError(f"scale must be a power of two >= 2, got {scale}")
        block = BlockConfig(embed_dim=embed_dim, mlp_mult=mlp_mult, dropout=dropout)
        return cls(stages=stages, sr2x=SR2xConfig(depth=depth, block=block, upsample_mode=upsample_mode))


@dataclass
class BlockParams:
    reduce: ConvParams  # C -> C/4, 1x1
    mlp1: ConvParams  # C -> mC, 1x1
    mlp2: ConvParams  # mC -> C, 1x1
    expand: ConvParams  # C/4 -> C, 1x1
    bn: BatchNormParams


@dataclass
class StageParams:
    stem: ConvParams  # 1 -> C, 3x3
    blocks: list[BlockParams]
    head: ConvParams  # C -> 1, 3x3


@dataclass
class Model:
    config: ModelConfig
    stages: list[StageParams]

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every stored array in serialization order, running stats included."""
        for s, st in enumerate(self.stages):
            pre = f"stage{s}"
            yield from _conv_arrays(f"{pre}.stem", st.stem)
            for b, bp in enumerate(st.blocks):
                bpre = f"{pre}.block{b}"
                for name in ("reduce", "mlp1", "mlp2", "expand"):
                    yield from _conv_arrays(f"{bpre}.{name}", getattr(bp, name))
                yield f"{bpre}.bn.gamma", bp.bn.gamma.data
                yield f"{bpre}.bn.beta", bp.bn.beta.data
                yield f"{bpre}.bn.running_mean", bp.bn.running_mean
                yield f"{bpre}.bn.running_var", bp.bn.running_var
            yield from _conv_arrays(f"{pre}.head", st.head)

    def parameters(self) -> list[Tensor]:
        """Trainable tensors, in serialization order."""
        out = []
        for st in self.stages:
            out += [st.stem.weight, st.stem.bias]
            for bp in st.blocks:
                for conv in (bp.reduce, bp.mlp1, bp.mlp2, bp.expand):
                    out += [conv.weight, conv.bias]
                out += [bp.bn.gamma, bp.bn.beta]
            out += [st.head.weight, st.head.bias]
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Model":
        """Deep copy with every array cast to ``dtype``."""
        new = copy.deepcopy(self)
        for st in new.stages:
            convs = [st.stem, st.head]
            for bp in st.blocks:
                convs += [bp.reduce, bp.mlp1, bp.mlp2, bp.expand]
                bp.bn.gamma.data = bp.bn.gamma.data.astype(dtype)
                bp.bn.beta.data = bp.bn.beta.data.astype(dtype)
                bp.bn.running_mean = bp.bn.running_mean.astype(dtype)
                bp.bn.running_var = bp.bn.running_var.astype(dtype)
            for conv in convs:
                conv.weight.data = conv.weight.data.astype(dtype)
                conv.bias.data = conv.bias.data.astype(dtype)
        return new

    def submodel(self, stages: int) -> "Model":
        """A model sharing (not copying) the first ``stages`` stages."""
        cfg = ModelConfig(stages=stages, sr2x=self.config.sr2x)
        return Model(cfg, self.stages[:stages])


def _conv_arrays(prefix, conv):
    yield f"{prefix}.weight", conv.weight.data
    yield f"{prefix}.bias", conv.bias.data


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------


def _init_conv(rng: np.random.Generator, out_ch: int, in_ch: int, k: int) -> ConvParams:
    # uniform(-b, b) with b = sqrt(3 / fan_in) has variance 1 / fan_in
    fan_in = in_ch * k * k
    bound = np.sqrt(3.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(DTYPE)
    return ConvParams(Tensor(w, requires_grad=True), Tensor(np.zeros(out_ch, DTYPE), requires_grad=True))


def init_params(cfg: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    C = cfg.sr2x.block.embed_dim
    hid = cfg.sr2x.block.hidden_dim
    stages = []
    for _ in range(cfg.stages):
        stem = _init_conv(rng, C, 1, 3)
        blocks = [
            BlockParams(
                reduce=_init_conv(rng, C // 4, C, 1),
                mlp1=_init_conv(rng, hid, C, 1),
                mlp2=_init_conv(rng, C, hid, 1),
                expand=_init_conv(rng, C, C // 4, 1),
                bn=BatchNormParams.create(C),
            )
            for _ in range(cfg.sr2x.depth)
        ]
        head = _init_conv(rng, 1, C, 3)
        stages.append(StageParams(stem, blocks, head))
    return Model(cfg, stages)


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------


def block_forward(
    x_in: Tensor,
    p: BlockParams,
    cfg: BlockConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """reduce -> Haar DWT -> MLP -> PixelShuffle -> expand -> BN, plus the
    input. Odd feature maps are reflect-padded before the DWT and the branch
    is cropped back before BN, so the output shape equals the input shape."""
    check4d(x_in)
    if x_in.shape[1] != cfg.embed_dim:
        raise ShapeError(f"block expects {cfg.embed_dim} channels, got {x_in.shape[1]}")
    h, w = x_in.shape[2], x_in.shape[3]
    x0 = conv2d(x_in, p.reduce)
    x = dwt2_haar(pad_to_even(x0))
    x = conv2d(x, p.mlp1)
    x = dropout(gelu(x), cfg.dropout, training, rng)
    x = conv2d(x, p.mlp2)
    x = conv2d(pixel_shuffle(x, 2), p.expand)
    x = batch_norm(crop(x, h, w), p.bn, training)
    return add(x, x_in)


def sr2x_forward(
    y: Tensor,
    cbcr: Tensor,
    params: StageParams,
    cfg: SR2xConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    check4d(y, "y")
    check4d(cbcr, "cbcr")
    if y.shape[1] != 1 or cbcr.shape[1] != 2:
        raise ShapeError(f"expected 1 Y and 2 CbCr channels, got {y.shape[1]} and {cbcr.shape[1]}")
    if (y.shape[0], y.shape[2], y.shape[3]) != (cbcr.shape[0], cbcr.shape[2], cbcr.shape[3]):
        raise ShapeError(f"Y {y.shape} and CbCr {cbcr.shape} disagree on batch/spatial dims")
    H, W = 2 * y.shape[2], 2 * y.shape[3]
    mode = cfg.upsample_mode
    f = conv2d(resize(y, H, W, mode), params.stem, padding=1)
    for bp in params.blocks:
        f = block_forward(f, bp, cfg.block, training, rng)
    y2 = conv2d(f, params.head, padding=1)
    return y2, resize(cbcr, H, W, mode)


def model_forward(
    ycbcr: Tensor,
    model: Model,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_intermediates: bool = False,
):
    """YCbCr in, YCbCr out at ``2**stages`` times the resolution.

    With ``return_intermediates`` the per-stage outputs are returned as a
    second value (the last one is the final output).
    """
    check4d(ycbcr)
    if ycbcr.shape[1] != 3:
        raise ShapeError(f"model expects 3 YCbCr channels, got {ycbcr.shape[1]}")
    x = ycbcr
    outs = []
    for st in model.stages:
        y2, cbcr2 = sr2x_forward(slice_channels(x, 0, 1), slice_channels(x, 1, 3), st, model.config.sr2x, training, rng)
        x = concat_channels([y2, cbcr2])
        outs.append(x)
    if return_intermediates:
        return x, outs
    return x


# --------------------------------------------------------------------------
# accounting
# --------------------------------------------------------------------------


def param_count(model: Model) -> int:
    return sum(p.data.size for p in model.parameters())


def layer_table(model: Model) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, arr.shape) for name, arr in model.named_arrays()]


def multiply_adds(cfg: ModelConfig, h: int, w: int) -> int:
    """Convolution multiply-accumulates for one forward pass on an h x w input.

    Parameter-free ops (DWT, PixelShuffle, resampling, GELU, BN, residual
    adds) are not counted.
    """
    C = cfg.sr2x.block.embed_dim
    q = C // 4
    hid = cfg.sr2x.block.hidden_dim
    total = 0
    for _ in range(cfg.stages):
        h, w = 2 * h, 2 * w
        full = h * w
        half = ((h + 1) // 2) * ((w + 1) // 2)
        per_block = full * C * q + half * (C * hid + hid * C) + (4 * half) * q * C
        total += full * 9 * C  # stem
        total += cfg.sr2x.depth * per_block
        total += full * 9 * C  # head
    return total
