"""Experiment configuration, balanced sampling, early stopping, training.

One training job owns one model. Batches are drawn with equal class
probability; items sharing sequence lengths are processed together so the
kernels stay vectorized. Validation Acc-K (ties broken by MSE) drives
early stopping, and the best epoch's parameters are what the bundle keeps.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import PieceData, fragment_units, infer_input_dims, load_corpus
from .errors import ConfigError, DataError
from .ingest import CorpusManifest
from .losses import ClassWeights
from .metrics import MetricsReport, compute_metrics, group3
from .model import ClassifierConfig, DifficultyModel, criterion_sum_grad
from .nn.optim import Adam
from .splits import make_splits

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one training run."""

    manifest: str = ""
    rep: str = "pitch"
    loss: str = "ordinal"
    fusion: str = "none"
    k: int | None = None
    fold: int = 0
    split_strategy: str = "length_level"
    seed: int = 0
    lr: float = 1e-4
    clip: float | None = 1e-4
    batch_size: int = 64
    dropout: float = 0.2
    hidden: int = 64
    layers: int = 2
    bidirectional: bool = False
    alpha: float = 1.0
    patience: int = 50
    max_epochs: int = 1000
    fragment: bool = False
    fragment_window: int = 256
    fragment_overlap: float = 0.25
    length_cap: int | None = None
    group3_training: bool = False
    pitch_embed_dim: int = 32
    fusion_heads: int = 2
    fusion_streams: tuple[str, ...] = ("argnn", "virtuoso")
    threshold: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_streams"] = list(self.fusion_streams)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        obj = dict(obj)
        if "fusion_streams" in obj:
            obj["fusion_streams"] = tuple(obj["fusion_streams"])
        return cls(**obj)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(obj)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if "fusion_streams" in overrides:
            overrides["fusion_streams"] = tuple(overrides["fusion_streams"])
        return replace(self, **overrides)


# ---------------------------------------------------------------------------
# sampling and stopping


def balanced_batches(
    labels, batch_size: int, rng: np.random.Generator
) -> list[list[int]]:
    """One epoch of index batches drawn with uniform class probability.

    Classes are sampled uniformly and members within a class uniformly
    with replacement; the epoch covers ceil(n / batch_size) batches. With
    a single class this degrades to a plain shuffled pass.
    """
    labels = list(labels)
    n = len(labels)
    if n == 0:
        return []
    classes = sorted(set(labels))
    if len(classes) == 1:
        perm = rng.permutation(n)
        return [list(perm[i : i + batch_size]) for i in range(0, n, batch_size)]
    members = {c: [i for i, y in enumerate(labels) if y == c] for c in classes}
    n_batches = math.ceil(n / batch_size)
    batches = []
    for _ in range(n_batches):
        picks = rng.integers(0, len(classes), size=batch_size)
        batch = []
        for ci in picks:
            pool = members[classes[ci]]
            batch.append(pool[rng.integers(0, len(pool))])
        batches.append(batch)
    return batches


def early_stop_best(history) -> int:
    """1-based index of the best epoch: max acc, then min mse, then earliest."""
    if not history:
        raise ConfigError("empty history")
    best = 0
    for i in range(1, len(history)):
        acc, mse = history[i]
        bacc, bmse = history[best]
        if acc > bacc or (acc == bacc and mse < bmse):
            best = i
    return best + 1


class EarlyStopping:
    """Tracks the acc/mse composite and triggers after `patience` stalls."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_acc = -np.inf
        self.best_mse = np.inf
        self.best_epoch = 0
        self.stalled = 0

    def update(self, epoch: int, acc: float, mse: float) -> bool:
        improved = acc > self.best_acc or (acc == self.best_acc and mse < self.best_mse)
        if improved:
            self.best_acc = acc
            self.best_mse = mse
            self.best_epoch = epoch
            self.stalled = 0
        else:
            self.stalled += 1
        return improved

    @property
    def should_stop(self) -> bool:
        return self.stalled >= self.patience


# ---------------------------------------------------------------------------
# batching helpers


def _signature(streams: dict[str, np.ndarray]):
    return tuple(sorted((name, arr.shape[0]) for name, arr in streams.items()))


def group_by_shape(indices, units):
    groups: dict = {}
    for i in indices:
        groups.setdefault(_signature(units[i][1]), []).append(i)
    return list(groups.values())


def predict_units(model: DifficultyModel, units, indices=None, threshold=0.5):
    """Decode a set of (id, streams, label) units in eval mode."""
    if indices is None:
        indices = range(len(units))
    records = {}
    for group in group_by_shape(indices, units):
        items = [units[i][1] for i in group]
        ids = [units[i][0] for i in group]
        for rec in model.predict_group(items, ids, threshold=threshold):
            records[rec.piece_id] = rec
    return [records[units[i][0]] for i in indices]


def metrics_for_units(model, units, indices=None, threshold=0.5) -> MetricsReport:
    if indices is None:
        indices = list(range(len(units)))
    records = predict_units(model, units, indices, threshold)
    truth = [units[i][2] for i in indices]
    preds = [r.decoded for r in records]
    return compute_metrics(truth, preds, model.config.k)


# ---------------------------------------------------------------------------
# the training job


@dataclass
class TrainResult:
    model: DifficultyModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    bundle_dir: Path | None = None
    assignment: dict[str, str] = field(default_factory=dict)
    n_train_units: int = 0


def _apply_group3(manifest: CorpusManifest) -> CorpusManifest:
    entries = [replace(e, label=group3(e.label)) for e in manifest.entries]
    return CorpusManifest(k=3, entries=entries, root=manifest.root)


def prepare_manifest(
    exp: ExperimentConfig, manifest: CorpusManifest | None = None
) -> CorpusManifest:
    """Load, length-cap and (optionally) regroup the corpus for a run."""
    if manifest is None:
        manifest = CorpusManifest.load(exp.manifest)
    if exp.length_cap is not None:
        kept = [e for e in manifest.entries if e.n_notes <= exp.length_cap]
        manifest = CorpusManifest(k=manifest.k, entries=kept, root=manifest.root)
    if exp.group3_training:
        manifest = _apply_group3(manifest)
    if exp.k is not None and exp.k != manifest.k:
        raise ConfigError(
            f"config k={exp.k} disagrees with manifest k={manifest.k}"
        )
    return manifest


def resolve_assignment(
    exp: ExperimentConfig, manifest: CorpusManifest
) -> dict[str, str]:
    plans = make_splits(manifest, strategy=exp.split_strategy, seed=exp.seed)
    if not 0 <= exp.fold < len(plans):
        raise ConfigError(f"fold {exp.fold} outside 0..{len(plans) - 1}")
    return plans[exp.fold].assignment


def build_units(pieces: dict[str, PieceData], ids, exp: ExperimentConfig):
    """Training units: whole pieces, or overlapping windows inheriting the
    piece label when fragment mode is on."""
    units = []
    for pid in ids:
        piece = pieces[pid]
        if exp.fragment:
            units.extend(
                fragment_units(piece, exp.fragment_window, exp.fragment_overlap)
            )
        else:
            units.append((pid, piece.streams, piece.label))
    return units


def run_training(
    exp: ExperimentConfig,
    out_dir: str | Path | None = None,
    manifest: CorpusManifest | None = None,
    assignment: dict[str, str] | None = None,
    stop_train_acc: float | None = None,
    quiet: bool = True,
) -> TrainResult:
    """Train one classifier and (optionally) persist its bundle directory."""
    manifest = prepare_manifest(exp, manifest)
    if not manifest.entries:
        raise DataError("no pieces left after filtering")
    if assignment is None:
        assignment = resolve_assignment(exp, manifest)

    known = {e.piece_id for e in manifest.entries}
    train_ids = sorted(p for p, s in assignment.items() if s == "train" and p in known)
    val_ids = sorted(p for p, s in assignment.items() if s == "val" and p in known)
    if not train_ids:
        raise DataError("empty training subset")

    pieces = load_corpus(
        manifest,
        train_ids + val_ids,
        exp.rep,
        fusion=exp.fusion,
        fusion_streams=exp.fusion_streams,
        fragments=exp.fragment,
    )
    train_units = build_units(pieces, train_ids, exp)
    val_units = [(pid, pieces[pid].streams, pieces[pid].label) for pid in val_ids]
    log.info(
        "training on %d unit(s) from %d piece(s)%s",
        len(train_units),
        len(train_ids),
        " (fragment windows)" if exp.fragment else "",
    )

    k = manifest.k
    config = ClassifierConfig(
        rep_name=exp.rep,
        k=k,
        head=exp.loss,
        fusion=exp.fusion,
        hidden_dim=exp.hidden,
        num_layers=exp.layers,
        dropout=exp.dropout,
        bidirectional=exp.bidirectional,
        pitch_embed_dim=exp.pitch_embed_dim,
        fusion_heads=exp.fusion_heads,
        fusion_streams=exp.fusion_streams,
        seed=exp.seed,
        input_dims=infer_input_dims(next(iter(pieces.values()))),
    )
    model = DifficultyModel(config)
    optimizer = Adam(model.store, lr=exp.lr, clip=exp.clip)
    weights = ClassWeights.from_labels(
        np.array([u[2] for u in train_units]), k
    )

    stopper = EarlyStopping(exp.patience)
    history: list[dict] = []
    best_snapshot = model.store.snapshot()
    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = (out_dir / "training_log.jsonl").open("w", encoding="utf-8")

    try:
        for epoch in range(1, exp.max_epochs + 1):
            batch_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=exp.seed, spawn_key=(1, epoch))
            )
            drop_rng = np.random.default_rng(
                np.random.SeedSequence(entropy=exp.seed, spawn_key=(2, epoch))
            )
            epoch_loss = 0.0
            n_batches = 0
            for batch in balanced_batches(
                [u[2] for u in train_units], exp.batch_size, batch_rng
            ):
                optimizer.zero_grad()
                batch_loss = 0.0
                for group in group_by_shape(batch, train_units):
                    items = [train_units[i][1] for i in group]
                    labels = np.array([train_units[i][2] for i in group])
                    raw, cache = model.forward_group(
                        items, train=True, rng=drop_rng
                    )
                    per_sample, draws = criterion_sum_grad(
                        exp.loss, raw, labels, k, weights=weights, alpha=exp.alpha
                    )
                    scale = 1.0 / len(batch)
                    scaled = {
                        name: g * scale for name, g in draws.items()
                    }
                    model.backward_group(scaled, cache)
                    batch_loss += float(per_sample.sum()) * scale
                optimizer.step()
                epoch_loss += batch_loss
                n_batches += 1

            train_metrics = metrics_for_units(model, train_units, threshold=exp.threshold)
            if val_units:
                val_metrics = metrics_for_units(model, val_units, threshold=exp.threshold)
            else:
                val_metrics = train_metrics
            improved = stopper.update(epoch, val_metrics.acc_k, val_metrics.mse)
            if improved:
                best_snapshot = model.store.snapshot()
            entry = {
                "epoch": epoch,
                "train_loss": epoch_loss / max(1, n_batches),
                "train_acc_k": train_metrics.acc_k,
                "train_mse": train_metrics.mse,
                "val_acc_k": val_metrics.acc_k,
                "val_mse": val_metrics.mse,
                "improved": improved,
            }
            history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
                log_fh.flush()
            if not quiet:
                log.info(
                    "epoch %d loss %.4f val acc %.1f mse %.2f",
                    epoch, entry["train_loss"], entry["val_acc_k"], entry["val_mse"],
                )
            if stop_train_acc is not None and train_metrics.acc_k >= stop_train_acc:
                break
            if stopper.should_stop:
                break
    finally:
        if log_fh:
            log_fh.close()

    model.store.restore(best_snapshot)
    result = TrainResult(
        model=model,
        history=history,
        best_epoch=stopper.best_epoch,
        assignment=assignment,
        n_train_units=len(train_units),
    )
    if out_dir is not None:
        model.save_bundle(out_dir, experiment=exp.to_dict())
        result.bundle_dir = out_dir
    return result
