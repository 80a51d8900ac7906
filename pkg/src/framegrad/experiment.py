"""Cross-validated experiment grid: train, calibrate, explain, evaluate, report.

A grid cell is (model kind x view x gradient method) over one dataset; the
sequence regime is implied by the dataset length: clips longer than the
attention model's frame budget are subsampled for it (scores extended back
to full length afterwards), while the patched-image CNN always consumes
full-length clips. Per fold: train on the training split, calibrate the
frame threshold on training-split scores only, evaluate on the held-out
split; frame and video predictions pool across folds (micro).

Every run emits raw per-frame and per-video predictions as CSV next to the
report so all pooled numbers can be recomputed independently.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cnn import CnnConfig, build_cnn
from .manifest import DatasetManifest, load_manifest
from .metrics import binary_f1, multiclass_f1
from .saliency import (
    FrameScoreSeries,
    calibrate_threshold,
    classify_frames,
    extend_to_long,
    frame_scores,
    gradcam,
    smoothgrad,
    vanilla_grad,
)
from .serialize import atomic_write_text
from .stan import StanConfig, build_model
from .synth import sample_indices
from .tensor import Tensor
from .train import TrainConfig, kfold, leave_one_group_out, predict_class, train_model
from .views import DEFAULT_BLEND, DEFAULT_CONFIDENCE_FLOOR, DEFAULT_MARGIN, apply_view

MODEL_KINDS = ("stan", "cnn")
VIEWS = ("global", "local", "global-local")
METHODS = ("vanilla", "smoothgrad", "gradcam")


@dataclass(frozen=True)
class GridConfig:
    model_kinds: tuple = ("stan",)
    views: tuple = VIEWS
    methods: tuple = ("vanilla", "smoothgrad", "gradcam")
    split: str = "kfold"  # "kfold" | "logo"
    folds: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)
    smoothgrad_samples: int = 8
    smoothgrad_sigma: float = 0.15
    sample_count: int = 20
    calibration_clips: Optional[int] = None  # cap on training clips scored for theta; None = all
    explain_target: str = "logit"
    roi_margin: float = DEFAULT_MARGIN
    confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR
    blend_alpha: float = DEFAULT_BLEND

    def validate(self) -> None:
        for kind in self.model_kinds:
            if kind not in MODEL_KINDS:
                raise ValueError(f"unknown model kind {kind!r}")
        for view in self.views:
            if view not in VIEWS:
                raise ValueError(f"unknown view {view!r}")
        for method in self.methods:
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r}")
        if self.split not in ("kfold", "logo"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.explain_target not in ("logit", "loss"):
            raise ValueError(f"unknown explanation target {self.explain_target!r}")
        self.train.validate()

    def to_json_dict(self) -> dict:
        d = asdict(self)
        for key in ("model_kinds", "views", "methods"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "GridConfig":
        d = dict(d)
        train = TrainConfig(**d.pop("train"))
        for key in ("model_kinds", "views", "methods"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(train=train, **d)


@dataclass
class FoldResult:
    fold_index: int
    train_ids: list
    test_ids: list
    video: list  # (clip_id, label, predicted)
    methods: dict  # method -> {"theta": float, "frames": [(clip_id, scores, labels)]}


@dataclass
class CellResult:
    model_kind: str
    view: str
    method: str
    sequence: str
    split_kind: str
    video_f1_per_class: list
    video_f1_overall: float
    frame_f1_per_class: list
    frame_f1_overall: float
    always_positive_f1: float
    thetas: list


@dataclass
class MetricsReport:
    dataset_id: str
    num_classes: int
    frames: int
    sequence: str
    grid: dict
    cells: list
    fold_audit: list  # per (kind, view): fold train/test id lists

    def to_json_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "num_classes": self.num_classes,
            "frames": self.frames,
            "sequence": self.sequence,
            "grid": self.grid,
            "cells": [asdict(c) for c in self.cells],
            "fold_audit": self.fold_audit,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MetricsReport":
        cells = [CellResult(**c) for c in d["cells"]]
        return cls(dataset_id=d["dataset_id"], num_classes=d["num_classes"], frames=d["frames"],
                   sequence=d["sequence"], grid=d["grid"], cells=cells,
                   fold_audit=d["fold_audit"])


def _fold_seed(base: int, fold_index: int) -> int:
    return int(np.random.SeedSequence([base, fold_index]).generate_state(1)[0])


def _split_plan(manifest: DatasetManifest, grid: GridConfig):
    if grid.split == "kfold":
        return kfold(manifest, grid.folds, grid.train.seed)
    return leave_one_group_out(manifest)


def _uses_sampling(manifest_frames: int, model_kind: str, grid: GridConfig) -> bool:
    return model_kind == "stan" and manifest_frames > grid.sample_count


def _build_for(manifest: DatasetManifest, model_kind: str, grid: GridConfig, seed: int):
    frames = manifest.clips[0].frames
    if model_kind == "stan":
        t = grid.sample_count if _uses_sampling(frames, model_kind, grid) else frames
        return build_model(StanConfig.desk(num_classes=manifest.num_classes, frames=t,
                                           height=manifest.height, width=manifest.width), seed)
    return build_cnn(CnnConfig(num_classes=manifest.num_classes, frames=frames,
                               height=manifest.height, width=manifest.width), seed)


class _ClipPipeline:
    """Loads, optionally subsamples, and view-transforms clips of one manifest."""

    def __init__(self, manifest: DatasetManifest, grid: GridConfig, view: str, sampling: bool):
        self.manifest = manifest
        self.records = manifest.by_id()
        self.grid = grid
        self.view = view
        self.sampling = sampling
        self._cache: dict = {}
        # keep raw clips in memory when the whole corpus stays small
        total_bytes = sum(3 * c.frames * manifest.height * manifest.width * 4
                          for c in manifest.clips)
        self._memoize = total_bytes < 256 * 1024 * 1024

    def prepared(self, clip_id: str):
        """(viewed clip, sampled index map or None, full-length labels)."""
        if clip_id in self._cache:
            return self._cache[clip_id]
        from .serialize import load_clip

        record = self.records[clip_id]
        clip = load_clip(self.manifest.clip_path(record))
        track = record.keypoints
        idx = None
        if self.sampling:
            idx = sample_indices(record.frames, self.grid.sample_count)
            clip = np.ascontiguousarray(clip[:, idx])
            track = [track[i] for i in idx]
        viewed = apply_view(clip, track, self.view, margin=self.grid.roi_margin,
                            confidence_floor=self.grid.confidence_floor,
                            alpha=self.grid.blend_alpha)
        result = (viewed, idx, record.important.astype(bool))
        if self._memoize:
            self._cache[clip_id] = result
        return result

    def loader(self, clip_id: str):
        return lambda: self.prepared(clip_id)[0]


def _explain(model, method: str, clip: np.ndarray, class_index: int, grid: GridConfig, seed: int):
    if method == "vanilla":
        return vanilla_grad(model, clip, class_index, target=grid.explain_target)
    if method == "smoothgrad":
        return smoothgrad(model, clip, class_index, n_samples=grid.smoothgrad_samples,
                          sigma=grid.smoothgrad_sigma, seed=seed, target=grid.explain_target)
    if method == "gradcam":
        return gradcam(model, clip, class_index)
    raise ValueError(f"unknown method {method!r}")


def run_fold(manifest: DatasetManifest, grid: GridConfig, model_kind: str, view: str,
             fold_index: int, log=None) -> FoldResult:
    plan = _split_plan(manifest, grid)
    train_ids, test_ids = plan.train_test(fold_index)
    frames = manifest.clips[0].frames
    sampling = _uses_sampling(frames, model_kind, grid)
    pipeline = _ClipPipeline(manifest, grid, view, sampling)
    records = manifest.by_id()

    model = _build_for(manifest, model_kind, grid, _fold_seed(grid.train.seed, fold_index))
    examples = [(pipeline.loader(cid), records[cid].label) for cid in train_ids]
    train_model(model, examples, grid.train, log=log)

    predictions: dict = {}
    for cid in train_ids + test_ids:
        viewed, _, _ = pipeline.prepared(cid)
        predictions[cid] = predict_class(model, viewed)
    video = [(cid, int(records[cid].label), predictions[cid]) for cid in test_ids]

    def scored(cid: str) -> tuple:
        viewed, idx, labels = pipeline.prepared(cid)
        volume = _explain(model, method, viewed, predictions[cid], grid,
                          seed=_fold_seed(grid.train.seed, fold_index))
        series = frame_scores(volume)
        if idx is not None:
            series = FrameScoreSeries(series.scores, sampled_indices=idx)
            series = extend_to_long(series, records[cid].frames)
        return series.scores, labels

    calibration_ids = train_ids
    if grid.calibration_clips is not None and grid.calibration_clips < len(train_ids):
        step = len(train_ids) / grid.calibration_clips
        calibration_ids = [train_ids[int(i * step)] for i in range(grid.calibration_clips)]

    methods_out: dict = {}
    for method in grid.methods:
        calibration = []
        for cid in calibration_ids:
            scores, labels = scored(cid)
            calibration.append((FrameScoreSeries(scores), labels))
        theta = calibrate_threshold(calibration)
        frames_out = []
        for cid in test_ids:
            scores, labels = scored(cid)
            frames_out.append((cid, scores, labels))
        methods_out[method] = {"theta": theta.threshold, "frames": frames_out}

    return FoldResult(fold_index=fold_index, train_ids=train_ids, test_ids=test_ids,
                      video=video, methods=methods_out)


def _fold_task(payload: tuple) -> FoldResult:
    manifest_path, grid_dict, model_kind, view, fold_index = payload
    manifest = load_manifest(manifest_path)
    grid = GridConfig.from_json_dict(grid_dict)
    return run_fold(manifest, grid, model_kind, view, fold_index)


def run_experiment_grid(manifest: DatasetManifest, grid: GridConfig, out_dir,
                        jobs: int = 1, log=None) -> MetricsReport:
    grid.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = manifest.clips[0].frames
    sequence = "long" if frames > grid.sample_count else "short"
    plan = _split_plan(manifest, grid)
    plan.validate([c.clip_id for c in manifest.clips])
    n_folds = len(plan.folds)
    records = manifest.by_id()

    tasks = [(kind, view, fold) for kind in grid.model_kinds
             for view in grid.views for fold in range(n_folds)]
    results: dict = {}
    if jobs > 1:
        manifest_path = str(manifest.base_dir / "manifest.json")
        payloads = [(manifest_path, grid.to_json_dict(), kind, view, fold)
                    for kind, view, fold in tasks]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, result in zip(tasks, pool.map(_fold_task, payloads)):
                results[key] = result
                if log:
                    log(f"finished {key[0]}/{key[1]} fold {key[2] + 1}/{n_folds}")
    else:
        for kind, view, fold in tasks:
            results[(kind, view, fold)] = run_fold(manifest, grid, kind, view, fold)
            if log:
                log(f"finished {kind}/{view} fold {fold + 1}/{n_folds}")

    cells: list = []
    fold_audit: list = []
    for kind in grid.model_kinds:
        for view in grid.views:
            folds = [results[(kind, view, f)] for f in range(n_folds)]
            for fr in folds:
                if set(fr.train_ids) & set(fr.test_ids):
                    raise RuntimeError(f"fold {fr.fold_index} train/test overlap")
            fold_audit.append({
                "model_kind": kind, "view": view,
                "folds": [{"fold": fr.fold_index, "train": fr.train_ids, "test": fr.test_ids}
                          for fr in folds],
            })
            video_labels = [v[1] for fr in folds for v in fr.video]
            video_preds = [v[2] for fr in folds for v in fr.video]
            v_per_class, v_overall = multiclass_f1(video_preds, video_labels,
                                                   manifest.num_classes)
            _write_video_csv(out_dir, kind, view, folds)
            for method in grid.methods:
                frame_preds: list = []
                frame_labels: list = []
                class_of_frames: list = []
                thetas = []
                for fr in folds:
                    theta = fr.methods[method]["theta"]
                    thetas.append(theta)
                    for cid, scores, labels in fr.methods[method]["frames"]:
                        pred = classify_frames(FrameScoreSeries(scores), theta)
                        frame_preds.append(pred)
                        frame_labels.append(np.asarray(labels, dtype=bool))
                        class_of_frames.append(np.full(len(scores), records[cid].label))
                pooled_pred = np.concatenate(frame_preds)
                pooled_label = np.concatenate(frame_labels)
                pooled_class = np.concatenate(class_of_frames)
                per_class = [
                    binary_f1(pooled_pred[pooled_class == c], pooled_label[pooled_class == c])
                    for c in range(manifest.num_classes)
                ]
                overall = binary_f1(pooled_pred, pooled_label)
                baseline = binary_f1(np.ones_like(pooled_label), pooled_label)
                cells.append(CellResult(
                    model_kind=kind, view=view, method=method, sequence=sequence,
                    split_kind=plan.kind,
                    video_f1_per_class=[float(x) for x in v_per_class],
                    video_f1_overall=float(v_overall),
                    frame_f1_per_class=[float(x) for x in per_class],
                    frame_f1_overall=float(overall),
                    always_positive_f1=float(baseline),
                    thetas=[float(t) for t in thetas],
                ))
                _write_frame_csv(out_dir, kind, view, method, folds)

    report = MetricsReport(dataset_id=manifest.dataset_id, num_classes=manifest.num_classes,
                           frames=frames, sequence=sequence, grid=grid.to_json_dict(),
                           cells=cells, fold_audit=fold_audit)
    atomic_write_text(out_dir / "report.json",
                      json.dumps(report.to_json_dict(), indent=1, sort_keys=True) + "\n")
    atomic_write_text(out_dir / "tables.txt", render_tables([report.to_json_dict()]))
    return report


def _cell_dir(out_dir: Path, kind: str, view: str) -> Path:
    d = Path(out_dir) / "cells" / f"{kind}_{view}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_video_csv(out_dir: Path, kind: str, view: str, folds) -> None:
    rows = [["fold", "clip_id", "label", "pred"]]
    for fr in folds:
        for cid, label, pred in fr.video:
            rows.append([fr.fold_index, cid, label, pred])
    _write_csv(_cell_dir(out_dir, kind, view) / "video_predictions.csv", rows)


def _write_frame_csv(out_dir: Path, kind: str, view: str, method: str, folds) -> None:
    rows = [["fold", "clip_id", "frame", "score", "pred", "label", "theta"]]
    for fr in folds:
        theta = fr.methods[method]["theta"]
        for cid, scores, labels in fr.methods[method]["frames"]:
            preds = classify_frames(FrameScoreSeries(scores), theta)
            for i, (s, p, l) in enumerate(zip(scores, preds, labels)):
                rows.append([fr.fold_index, cid, i, repr(float(s)), int(p), int(l), repr(theta)])
    _write_csv(_cell_dir(out_dir, kind, view) / f"{method}_frame_predictions.csv", rows)


def _write_csv(path: Path, rows) -> None:
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def recompute_cell_from_csv(out_dir, kind: str, view: str, method: str) -> tuple:
    """(video micro F1, frame overall F1) recomputed from the emitted raw predictions."""
    cell = Path(out_dir) / "cells" / f"{kind}_{view}"
    with open(cell / "video_predictions.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    labels = [int(r["label"]) for r in rows]
    preds = [int(r["pred"]) for r in rows]
    num_classes = max(labels + preds) + 1
    _, video_micro = multiclass_f1(preds, labels, num_classes)
    with open(cell / f"{method}_frame_predictions.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    frame_pred = [int(r["pred"]) for r in rows]
    frame_label = [int(r["label"]) for r in rows]
    return video_micro, binary_f1(frame_pred, frame_label)


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------

def _row_name(kind: str, view: str) -> str:
    pretty = {"global": "Global", "local": "Local", "global-local": "Global + Local"}
    return f"{kind.upper()} - {pretty.get(view, view)}"


def _fmt(x: float) -> str:
    return f"{100 * x:6.2f}"


def render_tables(report_dicts: list) -> str:
    """Text tables: video classification, per-method frame F1, short-vs-long summary."""
    reports = [MetricsReport.from_json_dict(d) for d in report_dicts]
    lines: list = []
    num_classes = reports[0].num_classes
    class_cols = [f"Class{c}" for c in range(num_classes)]

    for report in reports:
        lines.append(f"== Dataset {report.dataset_id} ({report.sequence} sequences, "
                     f"{report.frames} frames, {report.cells[0].split_kind}) ==")
        lines.append("")
        lines.append("-- Video classification F1 --")
        lines.append("  ".join(["Model/View".ljust(24)] + class_cols + ["Overall"]))
        seen = set()
        for cell in report.cells:
            key = (cell.model_kind, cell.view)
            if key in seen:
                continue
            seen.add(key)
            row = [_row_name(*key).ljust(24)]
            row += [_fmt(x) for x in cell.video_f1_per_class]
            row += [_fmt(cell.video_f1_overall)]
            lines.append("  ".join(row))
        lines.append("")
        methods = sorted({c.method for c in report.cells})
        for method in methods:
            lines.append(f"-- Frame identification F1 ({method}) --")
            lines.append("  ".join(["Model/View".ljust(24)] + class_cols
                                   + ["Overall", "AlwaysPos"]))
            for cell in report.cells:
                if cell.method != method:
                    continue
                row = [_row_name(cell.model_kind, cell.view).ljust(24)]
                row += [_fmt(x) for x in cell.frame_f1_per_class]
                row += [_fmt(cell.frame_f1_overall), _fmt(cell.always_positive_f1)]
                lines.append("  ".join(row))
            lines.append("")

    sequences = sorted({r.sequence for r in reports})
    if len(sequences) > 1:
        methods = sorted({c.method for r in reports for c in r.cells})
        lines.append("-- Frame F1 by sequence length --")
        header = ["Model/View".ljust(24)]
        for method in methods:
            for seq in sequences:
                header.append(f"{method[:7]}/{seq}".rjust(14))
        lines.append("  ".join(header))
        keys = []
        for r in reports:
            for c in r.cells:
                if (c.model_kind, c.view) not in keys:
                    keys.append((c.model_kind, c.view))
        for key in keys:
            row = [_row_name(*key).ljust(24)]
            for method in methods:
                for seq in sequences:
                    value = ""
                    for r in reports:
                        for c in r.cells:
                            if (c.model_kind, c.view, c.method, c.sequence) == (*key, method, seq):
                                value = _fmt(c.frame_f1_overall)
                    row.append(value.rjust(14))
            lines.append("  ".join(row))
        lines.append("")
    return "\n".join(lines) + "\n"
