"""Synthetic planted-signal video benchmark.

Each clip shows one bright sprite drifting gently around mid-frame. During a
uniformly placed active window the sprite both brightens (the recoverable
planted marker) and performs one of the class motion signatures:

  class 0  deep dip to the bottom edge and back
  class 1  deep rise to the top edge and back
  class 2  wide horizontal sweep and back
  class 3  fast vertical shake around the anchor

Outside the window the motion is class-neutral. Frame labels mark exactly
the active window; the emitted keypoint track carries the sprite centroid
plus its four corners. All randomness derives from (seed, clip index), so
generation is byte-deterministic and parallelizable per clip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .manifest import ClipRecord, DatasetManifest, save_manifest
from .serialize import save_clip

SPRITE_COLOR = (1.0, 0.85, 0.7)
NEUTRAL_BRIGHTNESS = 0.7
ACTIVE_BRIGHTNESS = 1.0


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 4
    clips_per_class: int = 50
    frames: int = 20
    height: int = 32
    width: int = 32
    sprite_size: int = 5
    clutter_blobs: int = 3
    noise_sigma: float = 0.02
    window_frac: tuple = (0.3, 0.5)
    groups: int = 15
    seed: int = 0

    def validate(self) -> None:
        if min(self.num_classes, self.clips_per_class, self.frames, self.height,
               self.width, self.sprite_size, self.groups) < 1:
            raise ValueError("all extents must be positive")
        lo, hi = self.window_frac
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"window fraction range {self.window_frac} must satisfy 0 < lo <= hi <= 1")
        if max(1, round(hi * self.frames)) > self.frames:
            raise ValueError("active window cannot exceed the clip length")

    @classmethod
    def short(cls, **kwargs) -> "SynthConfig":
        return cls(**{"frames": 20, **kwargs})

    @classmethod
    def long(cls, **kwargs) -> "SynthConfig":
        return cls(**{"frames": 394, **kwargs})


def _clip_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _trajectory(cfg: SynthConfig, rng: np.random.Generator, label: int):
    """Per-frame sprite center (x, y) plus the active-window slice."""
    t = cfg.frames
    half = cfg.sprite_size / 2.0
    x_anchor = cfg.width / 2.0
    y_anchor = cfg.height / 2.0

    lo, hi = cfg.window_frac
    w_len = max(1, int(round(t * rng.uniform(lo, hi))))
    w_start = int(rng.integers(0, t - w_len + 1))
    window = slice(w_start, w_start + w_len)

    # neutral drift: slow sine wander, speed well under 1 px/frame
    amp = rng.uniform(1.5, 3.0)
    phase = rng.uniform(0, 2 * math.pi)
    cycles = rng.uniform(0.5, 1.0)
    frames_idx = np.arange(t)
    xs = x_anchor + amp * np.sin(2 * math.pi * cycles * frames_idx / t + phase)
    ys = np.full(t, y_anchor) + rng.uniform(-0.5, 0.5, size=t)

    u = np.linspace(0.0, 1.0, w_len)
    y_span = cfg.height / 2.0 - half - 1.0
    x_span = cfg.width / 2.0 - half - 1.0
    if label == 0:
        ys[window] = y_anchor + y_span * np.sin(math.pi * u)
    elif label == 1:
        ys[window] = y_anchor - y_span * np.sin(math.pi * u)
    elif label == 2:
        xs[window] = x_anchor + x_span * np.sin(2 * math.pi * u)
        ys[window] = y_anchor
    else:
        ys[window] = y_anchor + 0.6 * y_span * np.sin(2 * math.pi * 3 * u)
    return xs, ys, window


def _render_clip(cfg: SynthConfig, rng: np.random.Generator, xs, ys, window) -> np.ndarray:
    clip = np.zeros((3, cfg.frames, cfg.height, cfg.width), dtype=np.float32)
    for _ in range(cfg.clutter_blobs):
        bh = int(rng.integers(2, 5))
        bw = int(rng.integers(2, 5))
        by = int(rng.integers(0, cfg.height - bh + 1))
        bx = int(rng.integers(0, cfg.width - bw + 1))
        value = rng.uniform(0.2, 0.5, size=3).astype(np.float32)
        clip[:, :, by:by + bh, bx:bx + bw] = value[:, None, None, None]

    half = cfg.sprite_size // 2
    active = np.zeros(cfg.frames, dtype=bool)
    active[window] = True
    for f in range(cfg.frames):
        brightness = ACTIVE_BRIGHTNESS if active[f] else NEUTRAL_BRIGHTNESS
        cy, cx = int(round(ys[f])), int(round(xs[f]))
        y0, y1 = max(0, cy - half), min(cfg.height, cy + half + 1)
        x0, x1 = max(0, cx - half), min(cfg.width, cx + half + 1)
        for ch, tint in enumerate(SPRITE_COLOR):
            clip[ch, f, y0:y1, x0:x1] = brightness * tint

    noise = rng.normal(0.0, cfg.noise_sigma, size=clip.shape).astype(np.float32)
    return np.clip(clip + noise, 0.0, 1.0)


def _keypoints(cfg: SynthConfig, xs, ys) -> list:
    half = cfg.sprite_size / 2.0
    track = []
    for f in range(cfg.frames):
        x, y = float(xs[f]), float(ys[f])
        joints = [[0, round(x, 2), round(y, 2), 1.0]]
        for jid, (dx, dy) in enumerate(((-half, -half), (half, -half), (-half, half), (half, half)), start=1):
            jx = min(max(x + dx, 0.0), cfg.width - 1.0)
            jy = min(max(y + dy, 0.0), cfg.height - 1.0)
            joints.append([jid, round(jx, 2), round(jy, 2), 1.0])
        track.append(joints)
    return track


def generate_clip(cfg: SynthConfig, index: int):
    """(clip, label, important mask, keypoint track, group) for one clip index."""
    label = index % cfg.num_classes
    rng = _clip_rng(cfg.seed, index)
    xs, ys, window = _trajectory(cfg, rng, label)
    clip = _render_clip(cfg, rng, xs, ys, window)
    important = np.zeros(cfg.frames, dtype=np.uint8)
    important[window] = 1
    group = f"subject{index % cfg.groups:02d}"
    return clip, label, important, _keypoints(cfg, xs, ys), group


def generate(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Write clip files plus manifest.json under out_dir and return the manifest."""
    cfg.validate()
    out_dir = Path(out_dir)
    clips_dir = out_dir / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)
    total = cfg.num_classes * cfg.clips_per_class
    manifest = DatasetManifest(
        dataset_id=f"synth-c{cfg.num_classes}-n{total}-t{cfg.frames}-s{cfg.seed}",
        num_classes=cfg.num_classes,
        height=cfg.height,
        width=cfg.width,
        base_dir=out_dir,
    )
    for index in range(total):
        clip, label, important, track, group = generate_clip(cfg, index)
        clip_id = f"clip{index:04d}"
        rel = f"clips/{clip_id}.stnv"
        save_clip(out_dir / rel, clip)
        manifest.clips.append(ClipRecord(
            clip_id=clip_id, path=rel, label=label, group=group,
            frames=cfg.frames, important=important, keypoints=track))
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def sample_indices(total: int, count: int) -> np.ndarray:
    """``count`` uniformly spaced indices over [0, total): strictly increasing,
    first 0, last total-1, adjacent gaps differing by at most one."""
    if not 1 <= count <= total:
        raise ValueError(f"cannot draw {count} frames from a length-{total} sequence")
    if count == 1:
        return np.array([0], dtype=np.int64)
    return np.array([int((i * (total - 1)) // (count - 1) + (((i * (total - 1)) % (count - 1)) * 2 >= (count - 1)))
                     for i in range(count)], dtype=np.int64)


def sample_frames(clip: np.ndarray, count: int):
    """(subsampled clip, index map) drawing ``count`` evenly spaced frames."""
    idx = sample_indices(clip.shape[1], count)
    return np.ascontiguousarray(clip[:, idx]), idx
