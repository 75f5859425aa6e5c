"""Recall metrics, confusion matrices, silhouette scores and the ablation grid runner."""

import csv
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DomainError, TrainingAborted

N_CLASSES = 7


def confusion(preds, labels, n_classes=N_CLASSES):
    """Counts table, rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=int).ravel()
    labels = np.asarray(labels, dtype=int).ravel()
    if preds.shape != labels.shape:
        raise ContractError("predictions and labels differ in length")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise DomainError(f"{name} outside 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def per_class_recall(cm):
    support = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(support > 0, np.diag(cm) / np.maximum(support, 1), np.nan)


def uar(cm):
    """Mean recall over classes with non-zero support."""
    cm = np.asarray(cm)
    if cm.sum() == 0:
        raise ContractError("UAR of an empty confusion matrix")
    recall = per_class_recall(cm)
    return float(np.mean(recall[~np.isnan(recall)]))


def war(cm):
    """Support-weighted recall, i.e. overall accuracy."""
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise ContractError("WAR of an empty confusion matrix")
    return float(np.trace(cm) / total)


@dataclass
class MetricsReport:
    UAR: float
    WAR: float
    per_class_recall: list
    ambiguous_accuracy: float
    confusion: list = field(default_factory=list)

    @classmethod
    def from_predictions(cls, preds, labels, ambiguous=None):
        cm = confusion(preds, labels)
        amb = float("nan")
        if ambiguous is not None and np.any(ambiguous):
            mask = np.asarray(ambiguous, dtype=bool)
            amb = float(np.mean(np.asarray(preds)[mask] == np.asarray(labels)[mask]))
        recall = [None if np.isnan(r) else float(r) for r in per_class_recall(cm)]
        return cls(uar(cm), war(cm), recall, amb, cm.tolist())


def silhouette(features, labels):
    """Mean silhouette coefficient under Euclidean distance.

    Points in singleton clusters score 0.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 2:
        raise ContractError("silhouette needs at least two points")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ContractError("silhouette needs at least two distinct labels")
    sq = (x * x).sum(axis=1)
    dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0))
    np.fill_diagonal(dist, 0.0)
    members = [labels == c for c in classes]
    sums = np.stack([dist[:, m].sum(axis=1) for m in members], axis=1)
    sizes = np.array([m.sum() for m in members])
    own = np.searchsorted(classes, labels)
    own_size = sizes[own]
    a = np.where(own_size > 1, sums[np.arange(len(x)), own] / np.maximum(own_size - 1, 1), 0.0)
    means = sums / sizes[None, :]
    means[np.arange(len(x)), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own_size > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


TAP_ORDER = ("vision_encoder", "frame_encoder", "pre_tfe_aligned", "post_tfe_fused")


def cluster_report(taps, labels):
    return {name: silhouette(taps[name], labels) for name in TAP_ORDER if name in taps}


# -- ablation grid ----------------------------------------------------------

@dataclass
class AblationGrid:
    tfe_blocks: list = field(default_factory=lambda: [8, 12, 16])
    prompt_length: list = field(default_factory=lambda: [16, 32, 64])
    loss_strategy: list = field(default_factory=lambda: ["ce_only", "global"])
    fusion: list = field(default_factory=lambda: ["tfe", "mean_pool"])

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("grid must be a JSON object")
        unknown = sorted(set(raw) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown grid axes: {', '.join(unknown)}")
        grid = cls(**{k: list(v) for k, v in raw.items()})
        for axis in cls.__dataclass_fields__:
            if not getattr(grid, axis):
                raise ConfigError(f"grid axis {axis} is empty")
        return grid

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"grid file is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def cells(self):
        return [
            dict(zip(("tfe_blocks", "prompt_length", "loss_strategy", "fusion"), combo))
            for combo in itertools.product(
                self.tfe_blocks, self.prompt_length, self.loss_strategy, self.fusion
            )
        ]


CSV_HEADER = (
    "setting_id", "tfe_blocks", "prompt_length", "loss_strategy", "fusion",
    "seed", "UAR", "WAR", "best_epoch", "status",
)


def cell_config(base, cell, seed):
    return base.replace(
        tfe={"blocks": cell["tfe_blocks"], "fusion": cell["fusion"]},
        text={"prompt_length": cell["prompt_length"]},
        train={"loss_strategy": cell["loss_strategy"], "seed": seed},
    )


def _run_cell(args):
    from .train import train

    cfg, data_dir, cell_dir = args
    try:
        result = train(cfg, data_dir, cell_dir)
        best = result.best_record
        row = {"UAR": best["val_UAR"], "WAR": best["val_WAR"], "best_epoch": best["epoch"], "status": "ok"}
    except TrainingAborted as exc:
        row = {"UAR": "", "WAR": "", "best_epoch": "", "status": f"failed: {exc}"}
    with open(os.path.join(cell_dir, "result.json"), "w", encoding="utf-8") as fh:
        json.dump(row, fh, sort_keys=True)
    return row


def ablate(grid, base, data_dir, out_dir, seeds, workers=None):
    """Train and evaluate every grid cell for every seed; write ``results.csv``.

    A cell whose directory already holds ``result.json`` is not rerun, so an
    interrupted grid resumes where it stopped.
    """
    if workers is None:
        workers = int(os.environ.get("OUS_THREADS", os.cpu_count() or 1))
    jobs, rows = [], []
    for setting_id, cell in enumerate(grid.cells(), start=1):
        for seed in seeds:
            cell_dir = os.path.join(out_dir, "cells", f"setting{setting_id:03d}_seed{seed}")
            rows.append((setting_id, cell, seed, cell_dir))
            if not os.path.exists(os.path.join(cell_dir, "result.json")):
                os.makedirs(cell_dir, exist_ok=True)
                jobs.append((cell_config(base, cell, seed), data_dir, cell_dir))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_run_cell, jobs))
    else:
        for job in jobs:
            _run_cell(job)
    table = []
    for setting_id, cell, seed, cell_dir in rows:
        with open(os.path.join(cell_dir, "result.json"), encoding="utf-8") as fh:
            result = json.load(fh)
        table.append({"setting_id": setting_id, **cell, "seed": seed, **result})
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        writer.writeheader()
        writer.writerows(table)
    return table


def write_metrics_report(path, report, cluster, emotions):
    doc = {"emotions": {name: i for i, name in enumerate(emotions)}, **asdict(report), "silhouette": cluster}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
