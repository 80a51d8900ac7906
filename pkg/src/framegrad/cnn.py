"""Frame-wise CNN baseline over patched images.

Every frame runs through a small trainable convolutional encoder (kernels
span one frame only, so features never mix across frames); the per-frame
feature maps are tiled row-major into one 2D "patched image", which a single
conv + maxpool + two fully connected layers classify. Because the encoder
and tiling are frame-separable, the input gradient of a class logit yields
full-length frame scores directly, with no temporal subsampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv3d, Linear, Module
from .tensor import Tensor


@dataclass(frozen=True)
class CnnConfig:
    num_classes: int
    frames: int
    height: int = 32
    width: int = 32
    encoder_channels: tuple = (8, 16, 16)
    head_channels: int = 32
    hidden: int = 64

    def validate(self) -> None:
        if self.num_classes < 1 or self.frames < 1:
            raise ValueError("num_classes and frames must be positive")
        if self.height % 8 or self.width % 8:
            raise ValueError(f"height/width must divide by 8, got {self.height}x{self.width}")
        if len(self.encoder_channels) != 3:
            raise ValueError("encoder needs exactly 3 channel counts")

    def tile_grid(self) -> tuple:
        """Smallest near-square (rows, cols) with rows*cols >= frames."""
        cols = int(math.ceil(math.sqrt(self.frames)))
        rows = int(math.ceil(self.frames / cols))
        return rows, cols

    def feature_shape(self) -> tuple:
        return self.height // 8, self.width // 8


class PatchedCnn(Module):
    def __init__(self, config: CnnConfig, seed: int, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        e1, e2, e3 = config.encoder_channels
        conv = lambda ci, co: Conv3d(ci, co, (1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1),
                                     init="fan_in", rng=rng, dtype=dtype)
        self.enc1 = conv(3, e1)
        self.enc2 = conv(e1, e2)
        self.enc3 = conv(e2, e3)
        self.head_conv = Conv3d(e3, config.head_channels, (1, 3, 3), padding=(0, 1, 1),
                                init="fan_in", rng=rng, dtype=dtype)
        rows, cols = config.tile_grid()
        fh, fw = config.feature_shape()
        flat = config.head_channels * (rows * fh // 2) * (cols * fw // 2)
        self.fc1 = Linear(flat, config.hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(config.hidden, config.num_classes, rng=rng, dtype=dtype)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def encode(self, clip: Tensor) -> Tensor:
        """Per-frame feature maps (F, T, fh, fw), differentiable to the pixels."""
        x = ops.relu(self.enc1(clip))
        x = ops.relu(self.enc2(x))
        return ops.relu(self.enc3(x))

    def tile(self, features: Tensor) -> Tensor:
        """Row-major tiling of per-frame maps into one plane (F, rows*fh, cols*fw)."""
        f, t, fh, fw = features.shape
        rows, cols = self.config.tile_grid()
        padded = ops.pad_axis(features, 1, rows * cols - t)
        grid = ops.reshape(padded, (f, rows, cols, fh, fw))
        return ops.reshape(ops.permute(grid, (0, 1, 3, 2, 4)), (f, rows * fh, cols * fw))

    def untile(self, patched: np.ndarray) -> np.ndarray:
        """Inverse of tile() for plain arrays: (F, rows*fh, cols*fw) -> (F, T, fh, fw)."""
        rows, cols = self.config.tile_grid()
        f = patched.shape[0]
        fh, fw = patched.shape[1] // rows, patched.shape[2] // cols
        grid = patched.reshape(f, rows, fh, cols, fw).transpose(0, 1, 3, 2, 4)
        return grid.reshape(f, rows * cols, fh, fw)[:, :self.config.frames]

    def forward_with_tokens(self, clip: Tensor):
        """(logits, post-activation head conv map); the map is the saliency-map target layer."""
        cfg = self.config
        if clip.shape != (3, cfg.frames, cfg.height, cfg.width):
            raise ops.ShapeError(
                f"clip shape {clip.shape} does not match configured "
                f"(3,{cfg.frames},{cfg.height},{cfg.width})")
        patched = self.tile(self.encode(clip))
        f, hp, wp = patched.shape
        z = ops.relu(self.head_conv(ops.reshape(patched, (f, 1, hp, wp))))
        tokens = z
        z = ops.max_pool2d(ops.reshape(z, (cfg.head_channels, hp, wp)), 2)
        flat = ops.reshape(z, (1, z.size))
        logits = ops.reshape(self.fc2(ops.relu(self.fc1(flat))), (cfg.num_classes,))
        return logits, tokens

    def forward(self, clip: Tensor) -> Tensor:
        return self.forward_with_tokens(clip)[0]

    def map_cam_to_clip(self, cam: np.ndarray) -> np.ndarray:
        """Un-tile a (1, rows*fh, cols*fw) map into frames, then upsample spatially."""
        from .saliency import upsample_trilinear
        per_frame = self.untile(cam)[0]  # (T, fh, fw)
        return upsample_trilinear(per_frame, (self.config.frames, self.config.height,
                                              self.config.width))


def build_cnn(config: CnnConfig, seed: int, dtype=np.float32) -> PatchedCnn:
    return PatchedCnn(config, seed, dtype=dtype)


def frame_scores_cnn(model: PatchedCnn, clip: np.ndarray, class_index: int):
    """Full-length frame scores straight from the class-logit input gradient,
    using the same absolute-mean + min-max rule as the attention path."""
    from .saliency import frame_scores, vanilla_grad

    return frame_scores(vanilla_grad(model, clip, class_index))
