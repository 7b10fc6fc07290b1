"""Assemble per-piece model inputs from a manifest entry.

The classifier consumes named streams: integer pitch tokens, float
embedding matrices (one per piece, or right/left pairs for the fingering
representation), or their early-fusion concatenation. Score parsing only
happens when hand order or tokens are actually needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, LengthMismatch
from .ingest import CorpusManifest, ManifestEntry, parse_musicxml
from .representations import (
    VIRTUOSO_DIM,
    FeatureSequence,
    align,
    fragment_spans,
    load_embedding,
    pitch_tokens,
    slice_features,
)


@dataclass
class PieceData:
    piece_id: str
    label: int
    streams: dict[str, np.ndarray]
    hand_tags: tuple[str, ...] | None
    n_notes: int


def _resolve(path: str, root: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and root is not None:
        candidate = root / p
        if candidate.exists():
            return candidate
    return p


def _embedding_path(entry: ManifestEntry, rep: str):
    paths = entry.embedding_paths.get(rep)
    if paths is None:
        raise DataError(
            f"{entry.piece_id}: manifest has no {rep!r} embedding paths "
            "(run synth-embed or register real embeddings first)"
        )
    return paths


def _load_argnn(entry: ManifestEntry, root: Path | None):
    paths = _embedding_path(entry, "argnn")
    if not isinstance(paths, dict) or "rh" not in paths or "lh" not in paths:
        raise DataError(f"{entry.piece_id}: argnn embeddings need 'rh' and 'lh' paths")
    rh = load_embedding(_resolve(paths["rh"], root)).astype(np.float64)
    lh = load_embedding(_resolve(paths["lh"], root)).astype(np.float64)
    if entry.n_notes and rh.shape[0] + lh.shape[0] != entry.n_notes:
        raise LengthMismatch(
            f"{entry.piece_id}: argnn rows {rh.shape[0]}+{lh.shape[0]} "
            f"!= {entry.n_notes} notes"
        )
    return rh, lh


def _load_single(entry: ManifestEntry, rep: str, root: Path | None) -> np.ndarray:
    paths = _embedding_path(entry, rep)
    if isinstance(paths, dict):
        raise DataError(f"{entry.piece_id}: {rep} expects a single embedding file")
    matrix = load_embedding(_resolve(paths, root)).astype(np.float64)
    if rep == "virtuoso" and matrix.shape[1] != VIRTUOSO_DIM:
        raise DataError(
            f"{entry.piece_id}: virtuoso embeddings must be {VIRTUOSO_DIM}-wide, "
            f"got {matrix.shape[1]}"
        )
    if entry.n_notes and matrix.shape[0] != entry.n_notes:
        raise LengthMismatch(
            f"{entry.piece_id}: {rep} has {matrix.shape[0]} rows, "
            f"score has {entry.n_notes} notes"
        )
    return matrix


def needs_score(rep: str, fusion: str, fusion_streams, fragments: bool) -> bool:
    if rep == "pitch":
        return True
    if rep == "fused":
        if fusion == "sync":
            return True
        if "pitch" in fusion_streams:
            return True
        if fragments and "argnn" in fusion_streams:
            return True
    if rep == "argnn" and fragments:
        return True
    return False


def load_piece(
    entry: ManifestEntry,
    rep: str,
    fusion: str = "none",
    fusion_streams=("argnn", "virtuoso"),
    root: Path | None = None,
    fragments: bool = False,
) -> PieceData:
    """Load every stream the configured classifier needs for one piece."""
    streams: dict[str, np.ndarray] = {}
    hand_tags = None
    seq = None
    if needs_score(rep, fusion, fusion_streams, fragments):
        seq = parse_musicxml(_resolve(entry.score_path, root))
        hand_tags = seq.hand_tags

    if rep == "pitch":
        streams["pitch"] = pitch_tokens(seq).branches[0]
    elif rep in ("virtuoso", "virtuoso_enc"):
        streams[rep] = _load_single(entry, rep, root)
    elif rep == "argnn":
        rh, lh = _load_argnn(entry, root)
        streams["rh"], streams["lh"] = rh, lh
    elif rep == "fused":
        if fusion == "sync":
            rh, lh = _load_argnn(entry, root)
            argnn_fs = FeatureSequence(
                rep_name="argnn", branches=[rh, lh], hand_tags=hand_tags
            )
            other = [s for s in fusion_streams if s != "argnn"]
            base = argnn_fs
            for name in other:
                base = align(
                    base,
                    FeatureSequence(
                        rep_name=name, branches=[_load_single(entry, name, root)]
                    ),
                )
            streams["sync"] = base.branches[0]
        else:
            for name in fusion_streams:
                if name == "argnn":
                    rh, lh = _load_argnn(entry, root)
                    streams["rh"], streams["lh"] = rh, lh
                elif name == "pitch":
                    streams["pitch"] = pitch_tokens(seq).branches[0]
                else:
                    streams[name] = _load_single(entry, name, root)
    else:
        raise DataError(f"unknown representation {rep!r}")

    n_notes = entry.n_notes or (len(seq) if seq else 0)
    return PieceData(
        piece_id=entry.piece_id,
        label=entry.label,
        streams=streams,
        hand_tags=hand_tags,
        n_notes=n_notes,
    )


def infer_input_dims(piece: PieceData) -> dict[str, int]:
    dims = {}
    for name, matrix in piece.streams.items():
        if name == "pitch":
            continue  # token stream width comes from the embedding table
        dims[name] = int(matrix.shape[1])
    return dims


def slice_streams(piece: PieceData, start: int, length: int) -> dict[str, np.ndarray]:
    """Cut one fragment window (canonical note indices) from every stream."""
    out = {}
    hand_pair = "rh" in piece.streams and "lh" in piece.streams
    if hand_pair:
        fs = FeatureSequence(
            rep_name="argnn",
            branches=[piece.streams["rh"], piece.streams["lh"]],
            hand_tags=piece.hand_tags,
        )
        cut = slice_features(fs, start, length)
        out["rh"], out["lh"] = cut.branches
    for name, matrix in piece.streams.items():
        if name in ("rh", "lh"):
            continue
        out[name] = matrix[start : start + length]
    return out


def fragment_units(
    piece: PieceData, window: int, overlap: float
) -> list[tuple[str, dict[str, np.ndarray], int]]:
    """(unit_id, streams, label) triples for each training window."""
    units = []
    for i, (start, length) in enumerate(
        fragment_spans(piece.n_notes, window, overlap)
    ):
        units.append(
            (
                f"{piece.piece_id}#{i}",
                slice_streams(piece, start, length),
                piece.label,
            )
        )
    return units


def load_corpus(
    manifest: CorpusManifest,
    piece_ids,
    rep: str,
    fusion: str = "none",
    fusion_streams=("argnn", "virtuoso"),
    fragments: bool = False,
) -> dict[str, PieceData]:
    by_id = manifest.by_id()
    out = {}
    for pid in piece_ids:
        out[pid] = load_piece(
            by_id[pid],
            rep,
            fusion=fusion,
            fusion_streams=fusion_streams,
            root=manifest.root,
            fragments=fragments,
        )
    return out
