"""Dataset manifest: the versioned, human-readable index of a clip corpus.

The manifest is a single JSON document; binary payloads stay in the STNV
clip files it references. Loading validates the full label structure before
anything downstream touches the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .serialize import FormatError, atomic_write_text, peek_clip_shape

MANIFEST_FORMAT = "framegrad-manifest"
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    """Manifest fails structural validation."""


@dataclass
class ClipRecord:
    clip_id: str
    path: str  # relative to the manifest directory
    label: int
    group: str
    frames: int
    important: np.ndarray  # uint8 mask, one entry per frame
    keypoints: list  # per frame: list of [joint_id, x, y, confidence]

    def to_json(self) -> dict:
        return {
            "id": self.clip_id,
            "path": self.path,
            "label": int(self.label),
            "group": self.group,
            "frames": int(self.frames),
            "important": "".join("1" if v else "0" for v in self.important),
            "keypoints": self.keypoints,
        }


@dataclass
class DatasetManifest:
    dataset_id: str
    num_classes: int
    height: int
    width: int
    clips: list = field(default_factory=list)
    base_dir: Path = field(default_factory=Path)

    def clip_path(self, record: ClipRecord) -> Path:
        return self.base_dir / record.path

    def by_id(self) -> dict:
        return {c.clip_id: c for c in self.clips}

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "dataset_id": self.dataset_id,
            "num_classes": int(self.num_classes),
            "height": int(self.height),
            "width": int(self.width),
            "clips": [c.to_json() for c in self.clips],
        }


def save_manifest(manifest: DatasetManifest, path) -> None:
    atomic_write_text(path, json.dumps(manifest.to_json(), indent=1, sort_keys=True) + "\n")


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot parse manifest {path}: {e}") from e
    if doc.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: not a {MANIFEST_FORMAT} document")
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {doc.get('version')}")
    required = ("dataset_id", "num_classes", "height", "width", "clips")
    for key in required:
        if key not in doc:
            raise ManifestError(f"{path}: missing field {key!r}")

    manifest = DatasetManifest(
        dataset_id=doc["dataset_id"],
        num_classes=int(doc["num_classes"]),
        height=int(doc["height"]),
        width=int(doc["width"]),
        base_dir=path.parent,
    )
    seen = set()
    for entry in doc["clips"]:
        clip_id = entry["id"]
        if clip_id in seen:
            raise ManifestError(f"duplicate clip id {clip_id!r}")
        seen.add(clip_id)
        mask = entry["important"]
        if set(mask) - {"0", "1"}:
            raise ManifestError(f"clip {clip_id}: importance mask must be 0/1")
        record = ClipRecord(
            clip_id=clip_id,
            path=entry["path"],
            label=int(entry["label"]),
            group=entry["group"],
            frames=int(entry["frames"]),
            important=np.array([int(ch) for ch in mask], dtype=np.uint8),
            keypoints=entry["keypoints"],
        )
        if record.label < 0 or record.label >= manifest.num_classes:
            raise ManifestError(
                f"clip {clip_id}: label {record.label} outside [0,{manifest.num_classes})")
        if len(record.important) != record.frames:
            raise ManifestError(
                f"clip {clip_id}: importance mask length {len(record.important)} "
                f"!= frame count {record.frames}")
        if len(record.keypoints) != record.frames:
            raise ManifestError(
                f"clip {clip_id}: keypoint track length {len(record.keypoints)} "
                f"!= frame count {record.frames}")
        if check_files:
            clip_file = manifest.base_dir / record.path
            if not clip_file.exists():
                raise ManifestError(f"clip {clip_id}: file {clip_file} does not exist")
            try:
                shape = peek_clip_shape(clip_file)
            except FormatError as e:
                raise ManifestError(f"clip {clip_id}: {e}") from e
            expected = (3, record.frames, manifest.height, manifest.width)
            if shape != expected:
                raise ManifestError(
                    f"clip {clip_id}: file shape {shape} != manifest shape {expected}")
        manifest.clips.append(record)
    if not manifest.clips:
        raise ManifestError(f"{path}: manifest lists no clips")
    return manifest
