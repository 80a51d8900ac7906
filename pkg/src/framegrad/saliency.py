"""Gradient explanations: saliency volumes, frame scores, threshold calibration.

All three explainers differentiate a class score of a trained model with
respect to the input clip (or, for the class-activation variant, with
respect to the final token grid). Volumes collapse to per-frame scores by
absolute-value averaging over channels and pixels, then per-video min-max
normalization into [0,1]; a calibrated threshold turns scores into
important/not-important frame decisions, and nearest-sample extension maps
scores from a subsampled clip back onto its full-length sequence.
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ops
from .metrics import binary_f1
from .serialize import atomic_write_text, save_tensor
from .tensor import Tensor

THRESHOLD_GRID_STEP = 0.01
SMOOTHGRAD_SAMPLES = 25
SMOOTHGRAD_SIGMA = 0.15


@dataclass
class SaliencyVolume:
    values: np.ndarray  # (3,T,H,W), aligned with the explained clip
    method: str
    class_index: int


@dataclass
class FrameScoreSeries:
    scores: np.ndarray  # (T,) in [0,1]
    sampled_indices: Optional[np.ndarray] = None  # positions in a longer sequence


@dataclass
class ThresholdModel:
    threshold: float
    metric: float  # pooled F1 achieved on the calibration set
    grid_step: float = THRESHOLD_GRID_STEP


@contextmanager
def frozen_parameters(model):
    """Skip parameter-gradient work while differentiating w.r.t. the input."""
    params = model.parameters()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def _check_class(model, class_index: int) -> None:
    if not 0 <= class_index < model.num_classes:
        raise IndexError(f"class {class_index} out of range [0,{model.num_classes})")


def vanilla_grad(model, clip: np.ndarray, class_index: int, target: str = "logit") -> SaliencyVolume:
    """d(class score)/d(clip) from one backward pass; parameters untouched.

    ``target="logit"`` differentiates the pre-softmax class logit (default);
    ``target="loss"`` differentiates the cross-entropy loss for the class.
    """
    _check_class(model, class_index)
    if target not in ("logit", "loss"):
        raise ValueError(f"unknown gradient target {target!r}")
    x = Tensor(clip, requires_grad=True)
    with frozen_parameters(model):
        logits = model.forward(x)
        if target == "logit":
            score = ops.select(logits, class_index)
        else:
            score = ops.cross_entropy(ops.reshape(logits, (1, model.num_classes)), [class_index])
        score.backward()
    return SaliencyVolume(values=x.grad, method="vanilla", class_index=class_index)


def smoothgrad(model, clip: np.ndarray, class_index: int,
               n_samples: int = SMOOTHGRAD_SAMPLES, sigma: float = SMOOTHGRAD_SIGMA,
               seed: int = 0, target: str = "logit") -> SaliencyVolume:
    """Mean input gradient over noisy copies, noise sigma scaled by the clip value range."""
    _check_class(model, class_index)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    scale = np.asarray(sigma * (clip.max() - clip.min()), dtype=clip.dtype)
    total = np.zeros(clip.shape, dtype=np.float64)
    for _ in range(n_samples):
        noise = rng.standard_normal(clip.shape).astype(clip.dtype) * scale
        total += vanilla_grad(model, clip + noise, class_index, target=target).values
    values = (total / n_samples).astype(clip.dtype)
    return SaliencyVolume(values=values, method="smoothgrad", class_index=class_index)


def gradcam(model, clip: np.ndarray, class_index: int) -> SaliencyVolume:
    """ReLU of the gradient-weighted channel sum of the last token grid, upsampled to clip shape."""
    _check_class(model, class_index)
    x = Tensor(clip, requires_grad=True)
    with frozen_parameters(model):
        logits, tokens = model.forward_with_tokens(x)
        ops.select(logits, class_index).backward()
    cam = cam_from_activation(tokens.data, tokens.grad)
    full = model.map_cam_to_clip(cam)
    values = np.repeat(full[None].astype(clip.dtype), 3, axis=0)
    return SaliencyVolume(values=values, method="gradcam", class_index=class_index)


def cam_from_activation(activation: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Per-channel weights = global average of the gradient; map = ReLU of the
    weighted channel sum. Shapes: (C, *spatial) -> (*spatial)."""
    weights = grad.mean(axis=tuple(range(1, grad.ndim)))
    return np.maximum(np.tensordot(weights, activation, axes=1), 0.0)


def upsample_trilinear(vol: np.ndarray, out_shape) -> np.ndarray:
    """Separable corner-aligned linear interpolation of a (t,h,w) volume."""
    out = np.asarray(vol, dtype=np.float64)
    for axis, target in enumerate(out_shape):
        n = out.shape[axis]
        if n == target:
            continue
        if n == 1:
            out = np.repeat(out, target, axis=axis)
            continue
        pos = np.linspace(0.0, n - 1, target)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n - 1)
        frac = (pos - lo).reshape([-1 if a == axis else 1 for a in range(out.ndim)])
        out = np.take(out, lo, axis=axis) * (1.0 - frac) + np.take(out, hi, axis=axis) * frac
    return out


def frame_scores(volume: SaliencyVolume) -> FrameScoreSeries:
    """Absolute-mean over channels and pixels per frame, then per-video min-max to [0,1]."""
    values = volume.values
    if not np.isfinite(values).all():
        raise ValueError("saliency volume contains non-finite values")
    raw = np.abs(values).mean(axis=(0, 2, 3), dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        scores = np.full(raw.shape, 0.5)
    else:
        scores = (raw - lo) / (hi - lo)
    return FrameScoreSeries(scores=scores)


def threshold_grid(step: float = THRESHOLD_GRID_STEP) -> np.ndarray:
    count = int(round(1.0 / step))
    return np.array([i * step for i in range(count + 1)])


def calibrate_threshold(series_set: Sequence, grid_step: float = THRESHOLD_GRID_STEP) -> ThresholdModel:
    """Exhaustive sweep over the threshold grid maximizing pooled frame F1.

    ``series_set``: (FrameScoreSeries, frame labels) pairs. Ties break toward
    the smallest threshold.
    """
    if not series_set:
        raise ValueError("calibration requires at least one scored series")
    scores = np.concatenate([np.asarray(s.scores, dtype=np.float64) for s, _ in series_set])
    labels = np.concatenate([np.asarray(l, dtype=bool) for _, l in series_set])
    if scores.shape != labels.shape:
        raise ValueError("scores and labels disagree in length")
    best_theta, best_f1 = 0.0, -1.0
    for theta in threshold_grid(grid_step):
        f1 = binary_f1(scores > theta, labels)
        if f1 > best_f1:
            best_theta, best_f1 = float(theta), f1
    return ThresholdModel(threshold=best_theta, metric=best_f1, grid_step=grid_step)


def classify_frames(series: FrameScoreSeries, threshold: float) -> np.ndarray:
    """Frame t is important iff score_t > threshold."""
    return np.asarray(series.scores) > threshold


def extend_to_long(series: FrameScoreSeries, total_frames: int) -> FrameScoreSeries:
    """Propagate sampled-frame scores to every frame via nearest sampled index
    (ties toward the earlier sample)."""
    if series.sampled_indices is None:
        raise ValueError("series carries no sampled-index map")
    samples = np.asarray(series.sampled_indices, dtype=np.int64)
    if len(samples) != len(series.scores):
        raise ValueError("sampled index map length does not match score count")
    if (np.diff(samples) <= 0).any() or samples[0] < 0 or samples[-1] >= total_frames:
        raise ValueError("sampled indices must be strictly increasing within the sequence")
    distance = np.abs(np.arange(total_frames)[:, None] - samples[None, :])
    nearest = distance.argmin(axis=1)  # argmin takes the first (earlier) index on ties
    return FrameScoreSeries(scores=np.asarray(series.scores)[nearest])


def parameter_checksum(model) -> str:
    digest = hashlib.sha256()
    for name, p in model.named_parameters():
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


def export_explanation(out_dir, clip: np.ndarray, volume: SaliencyVolume,
                       series: FrameScoreSeries, threshold: Optional[float] = None) -> None:
    """Saliency tensor + JSON sidecar + qualitative overlay grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_tensor(out_dir / "saliency.stnt", volume.values)
    sidecar = {
        "method": volume.method,
        "class_index": int(volume.class_index),
        "scores": [float(s) for s in series.scores],
        "threshold": None if threshold is None else float(threshold),
        "sampled_indices": None if series.sampled_indices is None
        else [int(i) for i in series.sampled_indices],
    }
    atomic_write_text(out_dir / "scores.json", json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    render_overlay_grid(clip, volume, out_dir / "overlay.png")


def render_overlay_grid(clip: np.ndarray, volume: SaliencyVolume, path, max_cols: int = 10) -> None:
    """Per-frame pairs (input | saliency heat) tiled into one grayscale PNG."""
    from PIL import Image

    frames = clip.shape[1]
    gray = clip.mean(axis=0)
    heat = np.abs(volume.values).mean(axis=0)
    span = heat.max() - heat.min()
    heat = (heat - heat.min()) / span if span > 0 else np.zeros_like(heat)
    cols = min(max_cols, frames)
    rows = (frames + cols - 1) // cols
    h, w = clip.shape[2], clip.shape[3]
    canvas = np.zeros((rows * h, cols * (2 * w + 1)), dtype=np.float32)
    for f in range(frames):
        r, c = divmod(f, cols)
        x0 = c * (2 * w + 1)
        canvas[r * h:(r + 1) * h, x0:x0 + w] = gray[f]
        canvas[r * h:(r + 1) * h, x0 + w + 1:x0 + 2 * w + 1] = heat[f]
    img = Image.fromarray((np.clip(canvas, 0, 1) * 255).astype(np.uint8), mode="L")
    img.save(path)
