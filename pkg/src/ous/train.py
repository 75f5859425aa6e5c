"""Epoch loop: gated multi-loss training with routed gradients, plateau schedule and checkpoints."""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .checkpoint import save_checkpoint
from .data import EMOTIONS, POLARITIES, Manifest, load_clips, substream
from .encoders import FrozenFeatures
from .errors import NumericError, TrainingAborted
from .evaluation import MetricsReport
from .model import OUSModel
from .objectives import (
    Adam,
    PlateauSchedule,
    cross_entropy,
    global_loss,
    pair_contrast_loss,
    polarity_loss,
    similarity_loss,
)

EVAL_BATCH = 64
_feature_cache = {}


def frozen_features(model, data_dir, records, chunk=64):
    """Frozen front-end features for ``records``, memoised per encoder and clip list."""
    h = hashlib.sha256()
    for p in model.vision.parameters():
        h.update(p.data.tobytes())
    h.update(json.dumps([model.cfg.data.face_size, model.cfg.streams.scene_input]).encode())
    h.update(os.path.abspath(data_dir).encode())
    h.update("\n".join(r.clip_id for r in records).encode())
    key = h.hexdigest()
    if key not in _feature_cache:
        parts = [
            model.encode(load_clips(data_dir, records[i:i + chunk]), chunk=chunk)
            for i in range(0, len(records), chunk)
        ]
        _feature_cache[key] = FrozenFeatures(
            np.concatenate([p.face for p in parts]),
            np.concatenate([p.scene for p in parts]),
            np.concatenate([p.scene_early for p in parts]),
        )
    return _feature_cache[key]


def clear_feature_cache():
    _feature_cache.clear()


@dataclass
class Evaluation:
    loss: float
    preds: np.ndarray
    report: MetricsReport
    taps: dict


def evaluate(model, features, records, batch=EVAL_BATCH):
    labels = np.array([r.emotion for r in records])
    ambiguous = np.array([r.ambiguous for r in records])
    total, preds, taps = 0.0, [], []
    with ag.no_grad():
        for start in range(0, len(records), batch):
            part = features.take(slice(start, start + batch))
            out = model.forward(part)
            y = labels[start:start + batch]
            total += float(cross_entropy(out.logits, y).data) * len(y)
            preds.append(out.logits.data.argmax(axis=1))
            taps.append(out.taps(part))
    preds = np.concatenate(preds)
    merged = {k: np.concatenate([t[k] for t in taps]) for k in taps[0]}
    report = MetricsReport.from_predictions(preds, labels, ambiguous)
    return Evaluation(total / len(records), preds, report, merged)


def compute_losses(model, out, emotions, polarities):
    l_pol = polarity_loss(out.polarity_logits, polarities)
    l_sim = similarity_loss(out.V_ft_aligned, out.V_st_aligned)
    l_con = cross_entropy(out.logits, emotions)
    weight = model.cfg.text.pair_contrast_weight
    if weight > 0:
        tau = model.head.temperature.value()
        l_con = l_con + weight * pair_contrast_loss(out.V_st_aligned, out.V_ft_aligned, tau)
    return l_pol, l_sim, l_con


@dataclass
class TrainResult:
    model: OUSModel
    epochs: list
    best_record: dict
    best_state: dict
    stop_reason: str
    steps: int
    out_dir: str = None
    features: dict = field(default_factory=dict)


def _jsonl(fh, record):
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def train(cfg, data_dir, out_dir=None, manifest=None):
    """Train on the corpus in ``data_dir``; write metrics and checkpoints to ``out_dir``.

    Per step, the global loss is the component sum while the previous step's
    global loss exceeds ``gate.alpha`` and the contrastive loss alone
    otherwise.  When summed, the similarity gradient reaches only the frames
    encoder and alignment projectors and the polarity gradient only the
    polarity encoder; the contrastive gradient reaches every trainable part.
    """
    manifest = manifest or Manifest.load(data_dir)
    if manifest.config != cfg.data:
        # the corpus on disk decides the clip geometry; echo what was used
        cfg = cfg.replace(data=asdict(manifest.config))
    model = OUSModel(cfg)
    train_recs, val_recs = manifest.split("train"), manifest.split("val")
    train_feats = frozen_features(model, data_dir, train_recs)
    val_feats = frozen_features(model, data_dir, val_recs)
    emotions = np.array([r.emotion for r in train_recs])
    polarities = np.array([r.polarity for r in train_recs])

    tc = cfg.train
    alpha = cfg.gate.alpha if tc.loss_strategy == "global" else None
    groups = model.routing_groups()
    optimizer = Adam(model.trainable_parameters())
    schedule = PlateauSchedule(
        tc.lr, tc.plateau_patience, tc.lr_decay_factor, tc.lr_floor, tc.overfit_guard
    )
    metrics = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics = open(os.path.join(out_dir, "metrics.jsonl"), "w", encoding="utf-8")
    header = {
        "config": cfg.to_dict(),
        "emotions": {name: i for i, name in enumerate(EMOTIONS)},
        "polarities": {name: i for i, name in enumerate(POLARITIES)},
        "alpha": alpha,
    }
    _jsonl(metrics, {"header": header})

    step, prev_global = 0, math.inf
    epochs, best, best_state, stop_reason = [], None, None, "max_epochs"
    try:
        for epoch in range(1, tc.max_epochs + 1):
            lr = schedule.lr
            order = substream(tc.seed, f"shuffle/{epoch}").permutation(len(train_recs))
            correct = 0
            for start in range(0, len(order), tc.batch):
                idx = order[start:start + tc.batch]
                try:
                    with ag.Tape() as tape:
                        out = model.forward(train_feats.take(idx))
                        l_pol, l_sim, l_con = compute_losses(model, out, emotions[idx], polarities[idx])
                        total = l_pol + l_sim + l_con
                    gate = alpha is not None and global_loss(l_pol, l_sim, l_con, alpha, prev_global)[1]
                    model.zero_grad()
                    tape.backward(l_con)
                    if gate:
                        tape.backward(l_sim, only=groups["similarity"])
                        tape.backward(l_pol, only=groups["polarity"])
                    for p in optimizer.params:
                        if not np.isfinite(p.grad).all():
                            raise NumericError(f"non-finite gradient in {p.name}")
                except NumericError as exc:
                    _jsonl(metrics, {"abort": {"step": step, "epoch": epoch, "error": str(exc)}})
                    raise TrainingAborted(str(exc), step, epoch) from None
                optimizer.step(lr)
                correct += int((out.logits.data.argmax(axis=1) == emotions[idx]).sum())
                record = {
                    "step": step,
                    "epoch": epoch,
                    "L_polarity": float(l_pol.data),
                    "L_similarity": float(l_sim.data),
                    "L_contrast": float(l_con.data),
                    "L_global": float(total.data),
                    "gate_active": gate,
                    "lr": lr,
                }
                _jsonl(metrics, record)
                prev_global = record["L_global"]
                step += 1

            train_acc = correct / len(order)
            ev = evaluate(model, val_feats, val_recs)
            _, flags = schedule.step(ev.loss, train_acc)
            record = {
                "epoch": epoch,
                "train_acc": train_acc,
                "val_loss": ev.loss,
                "val_UAR": ev.report.UAR,
                "val_WAR": ev.report.WAR,
                "val_ambiguous_acc": ev.report.ambiguous_accuracy,
                "lr": lr,
                "flags": flags,
            }
            _jsonl(metrics, record)
            epochs.append(record)
            if best is None or ev.loss < best["val_loss"]:
                best = record
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
                if out_dir is not None:
                    _save(out_dir, "best.ckpt", best_state, cfg, epoch, ev.loss)
            if flags["converged"]:
                stop_reason = "converged"
                break
            if flags["overfit"]:
                stop_reason = "overfit"
                break
    finally:
        if metrics is not None:
            metrics.close()
    if out_dir is not None:
        _save(out_dir, "last.ckpt", model.state_dict(), cfg, epochs[-1]["epoch"], epochs[-1]["val_loss"])
    return TrainResult(
        model, epochs, best, best_state, stop_reason, step, out_dir,
        {"train": train_feats, "val": val_feats},
    )


def _save(out_dir, name, state, cfg, epoch, val_loss):
    trailer = {"config": cfg.to_dict(), "epoch": epoch, "val_loss": val_loss}
    save_checkpoint(os.path.join(out_dir, name), state, trailer)


def read_metrics(path):
    """Split a metrics log into (header, step records, epoch records)."""
    header, steps, epochs = None, [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if "header" in rec:
                header = rec["header"]
            elif "step" in rec:
                steps.append(rec)
            elif "epoch" in rec:
                epochs.append(rec)
    return header, steps, epochs


def epochs_to_target(epochs, target, key="val_WAR"):
    for rec in epochs:
        if rec[key] >= target:
            return rec["epoch"]
    return None
