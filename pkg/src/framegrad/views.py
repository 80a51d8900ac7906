"""Input views: the original clip, a keypoint-derived ROI crop, or their blend.

Keypoint tracks carry per-frame (joint_id, x, y, confidence) tuples with
pixel coordinates, origin top-left. ROI masks are axis-aligned bounding
boxes over the confident joints, dilated by a fraction of the box size;
frames without any confident joint reuse the nearest earlier mask (or the
next one at the sequence start).
"""

from __future__ import annotations

from enum import Enum

import numpy as np


class ViewKind(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"
    GLOBAL_LOCAL = "global-local"


DEFAULT_MARGIN = 0.1
DEFAULT_CONFIDENCE_FLOOR = 0.3
DEFAULT_BLEND = 0.5


def roi_mask(track, frame_shape, margin: float = DEFAULT_MARGIN,
             confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR) -> np.ndarray:
    """Per-frame boolean ROI masks (T,H,W) from a keypoint track."""
    if len(track) == 0:
        raise ValueError("empty keypoint track")
    if margin < 0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    h, w = frame_shape
    boxes: list = []
    for joints in track:
        pts = [(float(j[1]), float(j[2])) for j in joints if float(j[3]) >= confidence_floor]
        if not pts:
            boxes.append(None)
            continue
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        dx = margin * (x_hi - x_lo)
        dy = margin * (y_hi - y_lo)
        boxes.append((x_lo - dx, x_hi + dx, y_lo - dy, y_hi + dy))
    if all(b is None for b in boxes):
        raise ValueError("no frame has a joint above the confidence floor")

    # carry the nearest previous box forward; leading gaps borrow the next one
    last = None
    for i, b in enumerate(boxes):
        if b is None and last is not None:
            boxes[i] = last
        elif b is not None:
            last = b
    first_valid = next(b for b in boxes if b is not None)
    for i, b in enumerate(boxes):
        if b is None:
            boxes[i] = first_valid
        else:
            break

    masks = np.zeros((len(track), h, w), dtype=bool)
    for i, (x_lo, x_hi, y_lo, y_hi) in enumerate(boxes):
        x0 = int(np.clip(np.floor(x_lo), 0, w - 1))
        x1 = int(np.clip(np.ceil(x_hi), 0, w - 1))
        y0 = int(np.clip(np.floor(y_lo), 0, h - 1))
        y1 = int(np.clip(np.ceil(y_hi), 0, h - 1))
        masks[i, y0:y1 + 1, x0:x1 + 1] = True
    return masks


def make_local(clip: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Copy ROI pixels, zero everything else, every channel."""
    if mask.shape != clip.shape[1:]:
        raise ValueError(f"mask shape {mask.shape} does not match clip frames {clip.shape[1:]}")
    return np.where(mask[None, :, :, :], clip, np.zeros((), dtype=clip.dtype))


def make_global_local(clip: np.ndarray, local_clip: np.ndarray, alpha: float = DEFAULT_BLEND) -> np.ndarray:
    """alpha-blend: ROI pixels stay bit-identical, non-ROI pixels attenuate to alpha of original.

    Computed as local + alpha*(clip - local), which equals
    alpha*clip + (1-alpha)*local exactly where local is a masked copy of clip.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"blend weight must lie in [0,1], got {alpha}")
    if local_clip.shape != clip.shape:
        raise ValueError(f"local clip shape {local_clip.shape} != clip shape {clip.shape}")
    a = np.asarray(alpha, dtype=clip.dtype)
    return local_clip + a * (clip - local_clip)


def apply_view(clip: np.ndarray, track, kind: ViewKind, margin: float = DEFAULT_MARGIN,
               confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR,
               alpha: float = DEFAULT_BLEND) -> np.ndarray:
    kind = ViewKind(kind)
    if kind is ViewKind.GLOBAL:
        return clip
    if len(track) != clip.shape[1]:
        raise ValueError(f"track length {len(track)} does not match clip frames {clip.shape[1]}")
    mask = roi_mask(track, clip.shape[2:], margin=margin, confidence_floor=confidence_floor)
    local = make_local(clip, mask)
    if kind is ViewKind.LOCAL:
        return local
    return make_global_local(clip, local, alpha)
