"""Bundle evaluation, ensembling and single-score prediction."""

from __future__ import annotations

import logging
from pathlib import Path

from .data import load_corpus, load_piece
from .errors import ConfigError, CoverageMismatch, DataError
from .ingest import ManifestEntry, parse_musicxml
from .metrics import compute_metrics
from .model import DifficultyModel, ensemble_predict
from .training import (
    ExperimentConfig,
    predict_units,
    prepare_manifest,
    resolve_assignment,
)

log = logging.getLogger(__name__)


def _load_bundle(bundle_dir: str | Path):
    model, experiment = DifficultyModel.load_bundle(bundle_dir)
    exp = ExperimentConfig.from_dict(experiment)
    return model, exp


def _subset_units(model, exp, manifest, subset):
    assignment = resolve_assignment(exp, manifest)
    known = {e.piece_id for e in manifest.entries}
    val_ids = {p for p, s in assignment.items() if s == "val"}
    test_ids = {p for p, s in assignment.items() if s == "test"}
    if val_ids & test_ids:
        raise ConfigError("val and test subsets overlap")
    ids = sorted(p for p, s in assignment.items() if s == subset and p in known)
    if not ids:
        raise DataError(f"subset {subset!r} is empty for fold {exp.fold}")
    pieces = load_corpus(
        manifest, ids, exp.rep, fusion=exp.fusion, fusion_streams=exp.fusion_streams
    )
    units = [(pid, pieces[pid].streams, pieces[pid].label) for pid in ids]
    return units


def evaluate_bundle(
    bundle_dir: str | Path,
    manifest_path: str | Path | None = None,
    fold: int | None = None,
    subset: str = "test",
):
    """Deterministic metrics report for one bundle on one split subset."""
    model, exp = _load_bundle(bundle_dir)
    if manifest_path is not None:
        exp = exp.with_overrides(manifest=str(manifest_path))
    if fold is not None:
        exp = exp.with_overrides(fold=fold)
    manifest = prepare_manifest(exp)
    if manifest.k != model.config.k:
        raise ConfigError(
            f"bundle expects K={model.config.k}, manifest provides K={manifest.k}"
        )
    units = _subset_units(model, exp, manifest, subset)
    records = predict_units(model, units, threshold=exp.threshold)
    truth = [u[2] for u in units]
    preds = [r.decoded for r in records]
    report = compute_metrics(truth, preds, model.config.k)
    payload = {
        "bundle": str(bundle_dir),
        "rep": exp.rep,
        "loss": exp.loss,
        "fusion": exp.fusion,
        "fold": exp.fold,
        "subset": subset,
        "split_strategy": exp.split_strategy,
        "seed": exp.seed,
        "metrics": report.to_dict(),
        "predictions": {
            u[0]: {"truth": u[2], "level": r.decoded}
            for u, r in zip(units, records)
        },
    }
    return payload, report, records


def ensemble_evaluate(
    bundle_dirs: list[str | Path],
    manifest_path: str | Path | None = None,
    fold: int | None = None,
    subset: str = "test",
):
    """Average member distributions piece-wise and score the result.

    Members must agree on K and on the fold definition (same strategy,
    seed and piece partition).
    """
    if not bundle_dirs:
        raise ConfigError("ensemble needs at least one bundle")
    member_payloads = []
    member_records = []
    reference = None
    truth_by_id = {}
    k = None
    for bundle in bundle_dirs:
        payload, report, records = evaluate_bundle(
            bundle, manifest_path=manifest_path, fold=fold, subset=subset
        )
        ids = sorted(payload["predictions"])
        key = (payload["fold"], payload["split_strategy"], payload["seed"], tuple(ids))
        if reference is None:
            reference = key
            k = report.k
            truth_by_id = {
                pid: payload["predictions"][pid]["truth"] for pid in ids
            }
        elif key[:3] != reference[:3] or key[3] != reference[3]:
            raise CoverageMismatch(
                f"bundle {bundle} disagrees on the fold definition"
            )
        elif report.k != k:
            raise CoverageMismatch(f"bundle {bundle} has K={report.k}, expected {k}")
        member_payloads.append(payload)
        member_records.append(records)

    combined = ensemble_predict(member_records)
    truth = [truth_by_id[r.piece_id] for r in combined]
    preds = [r.decoded for r in combined]
    report = compute_metrics(truth, preds, k)
    payload = {
        "subset": subset,
        "fold": member_payloads[0]["fold"],
        "k": k,
        "metrics": report.to_dict(),
        "predictions": {
            r.piece_id: {"truth": truth_by_id[r.piece_id], "level": r.decoded}
            for r in combined
        },
        "members": [
            {
                "bundle": p["bundle"],
                "rep": p["rep"],
                "loss": p["loss"],
                "metrics": p["metrics"],
            }
            for p in member_payloads
        ],
    }
    return payload, report, combined


def predict_score(
    bundle_dir: str | Path,
    score_path: str | Path,
    embedding_paths: dict | None = None,
    top_attention: int = 5,
):
    """Classify one score file with a trained bundle."""
    model, exp = _load_bundle(bundle_dir)
    seq = parse_musicxml(score_path)
    entry = ManifestEntry(
        piece_id=seq.piece_id,
        score_path=str(score_path),
        label=1,  # placeholder; prediction never reads it
        n_notes=len(seq),
        embedding_paths=embedding_paths or {},
    )
    piece = load_piece(
        entry, exp.rep, fusion=exp.fusion, fusion_streams=exp.fusion_streams
    )
    record = predict_units(
        model, [(seq.piece_id, piece.streams, 1)], threshold=exp.threshold
    )[0]
    return record.to_dict(top=top_attention)
