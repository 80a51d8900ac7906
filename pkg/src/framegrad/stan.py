"""Hierarchical four-stage video classifier with local and global token mixing.

The network maps a clip (3,T,H,W) to class logits: a strided stem partitions
the clip into tokens, four stages of residual blocks mix them (stages 1-2
with learnable fixed-weight neighborhood aggregation, stages 3-4 with full
self-attention over the spatiotemporal tube), and a pooled linear head
classifies. Each block is depthwise position encoding -> token mixer ->
feed-forward, every piece residual, with residual-branch outputs
zero-initialized so a fresh block is the identity map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .nn import BatchNorm3d, Conv3d, LayerNorm, Linear, Module, ModuleList
from .tensor import Tensor

STAGE_KINDS = ("local", "local", "global", "global")


class ConfigError(ValueError):
    """Raised at build time when a configuration constraint fails."""


@dataclass(frozen=True)
class StanConfig:
    num_classes: int
    frames: int = 16
    height: int = 224
    width: int = 224
    stage_channels: tuple = (64, 128, 320, 512)
    stage_blocks: tuple = (3, 4, 8, 3)
    heads_per_stage: Optional[tuple] = None
    local_neighborhood: tuple = (5, 5, 5)
    dpe_kernel: tuple = (3, 3, 3)
    ffn_expansion: float = 4.0
    desk_scale: bool = False

    def heads(self) -> tuple:
        if self.heads_per_stage is not None:
            return tuple(self.heads_per_stage)
        return tuple(max(1, c // 32) for c in self.stage_channels)

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        if self.frames % 2 != 0:
            raise ConfigError(f"frames={self.frames} must be divisible by 2")
        if self.height % 32 != 0:
            raise ConfigError(f"height={self.height} must be divisible by 32")
        if self.width % 32 != 0:
            raise ConfigError(f"width={self.width} must be divisible by 32")
        if len(self.stage_channels) != 4 or len(self.stage_blocks) != 4:
            raise ConfigError("stage_channels and stage_blocks must have 4 entries")
        if any(c2 <= c1 for c1, c2 in zip(self.stage_channels, self.stage_channels[1:])):
            raise ConfigError(f"stage_channels {self.stage_channels} must be strictly increasing")
        if any(b < 1 for b in self.stage_blocks):
            raise ConfigError("stage_blocks entries must be positive")
        heads = self.heads()
        for i, kind in enumerate(STAGE_KINDS):
            if kind == "global" and self.stage_channels[i] % heads[i] != 0:
                raise ConfigError(
                    f"stage {i + 1} channels {self.stage_channels[i]} not divisible by "
                    f"head count {heads[i]}")
        for name, extents in (("local_neighborhood", self.local_neighborhood),
                              ("dpe_kernel", self.dpe_kernel)):
            if len(extents) != 3 or any(e % 2 == 0 or e < 1 for e in extents):
                raise ConfigError(f"{name} extents {extents} must be odd and positive")
        if self.ffn_expansion <= 0:
            raise ConfigError("ffn_expansion must be positive")

    def stage_shapes(self) -> list:
        """Exact (C, t, h, w) token-grid shape after each stage."""
        shapes = []
        for i, c in enumerate(self.stage_channels):
            div = 4 * (2 ** i)
            shapes.append((c, self.frames // 2, self.height // div, self.width // div))
        return shapes

    @classmethod
    def paper(cls, num_classes: int, frames: int = 16, height: int = 224, width: int = 224) -> "StanConfig":
        return cls(num_classes=num_classes, frames=frames, height=height, width=width)

    @classmethod
    def desk(cls, num_classes: int, frames: int = 16, height: int = 32, width: int = 32) -> "StanConfig":
        # 3x3x3 neighborhood keeps the desk CPU budget; widths/blocks scaled down
        return cls(num_classes=num_classes, frames=frames, height=height, width=width,
                   stage_channels=(16, 32, 64, 128), stage_blocks=(1, 1, 2, 1),
                   local_neighborhood=(3, 3, 3), desk_scale=True)


def _same_pad(kernel) -> tuple:
    return tuple(k // 2 for k in kernel)


class LocalBlock(Module):
    """Residual position encoding + neighborhood aggregation + feed-forward."""

    def __init__(self, channels: int, neighborhood, dpe_kernel, ffn_hidden: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.dpe = Conv3d(channels, channels, dpe_kernel, padding=_same_pad(dpe_kernel),
                          groups=channels, bias=False, init="zero", dtype=dtype)
        self.norm = BatchNorm3d(channels, dtype=dtype)
        self.value = Conv3d(channels, channels, (1, 1, 1), init="fan_in", rng=rng, dtype=dtype)
        self.affinity = Conv3d(channels, channels, neighborhood, padding=_same_pad(neighborhood),
                               groups=channels, bias=False, init="fan_in", rng=rng, dtype=dtype)
        self.proj = Conv3d(channels, channels, (1, 1, 1), init="zero", dtype=dtype)
        self.ffn_norm = LayerNorm(channels, axis=0, dtype=dtype)
        self.fc1 = Conv3d(channels, ffn_hidden, (1, 1, 1), init="fan_in", rng=rng, dtype=dtype)
        self.fc2 = Conv3d(ffn_hidden, channels, (1, 1, 1), init="zero", dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.dpe(x)
        x = x + self.proj(self.affinity(self.value(self.norm(x))))
        x = x + self.fc2(ops.gelu(self.fc1(self.ffn_norm(x))))
        return x


class GlobalBlock(Module):
    """Residual position encoding + full self-attention over the token tube + feed-forward."""

    def __init__(self, channels: int, heads: int, dpe_kernel, ffn_hidden: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.heads = heads
        self.head_dim = channels // heads
        self.dpe = Conv3d(channels, channels, dpe_kernel, padding=_same_pad(dpe_kernel),
                          groups=channels, bias=False, init="zero", dtype=dtype)
        self.attn_norm = LayerNorm(channels, axis=-1, dtype=dtype)
        self.query = Linear(channels, channels, rng=rng, dtype=dtype)
        self.key = Linear(channels, channels, rng=rng, dtype=dtype)
        self.value = Linear(channels, channels, rng=rng, dtype=dtype)
        self.proj = Linear(channels, channels, init="zero", dtype=dtype)
        self.ffn_norm = LayerNorm(channels, axis=-1, dtype=dtype)
        self.fc1 = Linear(channels, ffn_hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(ffn_hidden, channels, init="zero", dtype=dtype)

    def attention(self, seq: Tensor) -> Tensor:
        n, c = seq.shape
        h, d = self.heads, self.head_dim

        def split(t):
            return ops.permute(ops.reshape(t, (n, h, d)), (1, 0, 2))

        q = split(self.query(seq))
        k = split(self.key(seq))
        v = split(self.value(seq))
        affinity = ops.softmax(ops.matmul(q, ops.permute(k, (0, 2, 1))) * (d ** -0.5), axis=-1)
        mixed = ops.reshape(ops.permute(ops.matmul(affinity, v), (1, 0, 2)), (n, c))
        return self.proj(mixed)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.dpe(x)
        c, t, h, w = x.shape
        seq = ops.permute(ops.reshape(x, (c, t * h * w)), (1, 0))
        seq = seq + self.attention(self.attn_norm(seq))
        seq = seq + self.fc2(ops.gelu(self.fc1(self.ffn_norm(seq))))
        return ops.reshape(ops.permute(seq, (1, 0)), (c, t, h, w))


class StanModel(Module):
    def __init__(self, config: StanConfig, seed: int, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        ch = config.stage_channels
        heads = config.heads()
        self.stem = Conv3d(3, ch[0], (3, 4, 4), stride=(2, 4, 4), padding=(1, 0, 0),
                           init="fan_in", rng=rng, dtype=dtype)
        stages = []
        for i, kind in enumerate(STAGE_KINDS):
            hidden = int(round(config.ffn_expansion * ch[i]))
            blocks = []
            for _ in range(config.stage_blocks[i]):
                if kind == "local":
                    blocks.append(LocalBlock(ch[i], config.local_neighborhood,
                                             config.dpe_kernel, hidden, rng, dtype=dtype))
                else:
                    blocks.append(GlobalBlock(ch[i], heads[i], config.dpe_kernel, hidden, rng,
                                              dtype=dtype))
            stages.append(ModuleList(blocks))
        self.stages = ModuleList(stages)
        self.transitions = ModuleList([
            Conv3d(ch[i], ch[i + 1], (1, 2, 2), stride=(1, 2, 2), init="fan_in", rng=rng, dtype=dtype)
            for i in range(3)
        ])
        self.head = Linear(ch[3], config.num_classes, rng=rng, dtype=dtype)

    def forward_stages(self, clip: Tensor) -> list:
        """Token grids after each of the four stages."""
        if clip.shape != (3, self.config.frames, self.config.height, self.config.width):
            raise ops.ShapeError(
                f"clip shape {clip.shape} does not match configured "
                f"(3,{self.config.frames},{self.config.height},{self.config.width})")
        x = self.stem(clip)
        outputs = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = self.transitions[i - 1](x)
            for block in stage:
                x = block(x)
            outputs.append(x)
        return outputs

    def forward_with_tokens(self, clip: Tensor) -> tuple:
        """(logits, final token grid); the grid is the saliency-map target layer."""
        tokens = self.forward_stages(clip)[-1]
        logits = self.head(ops.avg_pool_all(tokens))
        return logits, tokens

    def forward(self, clip: Tensor) -> Tensor:
        return self.forward_with_tokens(clip)[0]

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def map_cam_to_clip(self, cam: np.ndarray) -> np.ndarray:
        """Trilinearly upsample a (t,h,w) stage-4 map to clip resolution (T,H,W)."""
        from .saliency import upsample_trilinear
        return upsample_trilinear(cam, (self.config.frames, self.config.height, self.config.width))


def build_model(config: StanConfig, seed: int, dtype=np.float32) -> StanModel:
    return StanModel(config, seed, dtype=dtype)


def parameter_count(config: StanConfig) -> int:
    """Closed-form parameter count; must match the built model exactly."""
    ch = config.stage_channels
    kd = int(np.prod(config.dpe_kernel))
    kn = int(np.prod(config.local_neighborhood))
    total = ch[0] * 3 * 3 * 4 * 4 + ch[0]  # stem
    for i, kind in enumerate(STAGE_KINDS):
        c = ch[i]
        hidden = int(round(config.ffn_expansion * c))
        ffn = 2 * c + (hidden * c + hidden) + (c * hidden + c)
        if kind == "local":
            block = c * kd + 2 * c + (c * c + c) + c * kn + (c * c + c) + ffn
        else:
            block = c * kd + 2 * c + 4 * (c * c + c) + ffn
        total += config.stage_blocks[i] * block
    for i in range(3):
        total += ch[i + 1] * ch[i] * 1 * 2 * 2 + ch[i + 1]
    total += config.num_classes * ch[3] + config.num_classes
    return total
