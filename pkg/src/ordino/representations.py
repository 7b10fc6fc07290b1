"""Per-note feature sequences and their file carrier.

Three kinds of inputs feed the classifier: pitch-token sequences derived
directly from a parsed score, precomputed embedding matrices loaded from
PEMB files (one per piece, or one per hand for the two-branch fingering
representation), and the early-fusion concatenation of both.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptySequence,
    FormatError,
    LengthMismatch,
    NonFiniteValue,
    ShapeMismatch,
    SizeMismatch,
)
from .ingest import PIANO_LOW, NoteSequence

PITCH_VOCAB = 88  # piano keys, token = midi_pitch - 21

REP_NAMES = ("pitch", "argnn", "virtuoso", "virtuoso_enc", "fused")
VIRTUOSO_DIM = 64

PEMB_MAGIC = b"PEMB"
PEMB_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass
class FeatureSequence:
    """One or two per-note feature matrices for a piece.

    Single-branch sequences hold one T x d matrix. The two-branch fingering
    representation holds independently sized right- and left-hand matrices;
    ``hand_tags`` records the canonical note order ('R'/'L' per note) so the
    branches can be interleaved back onto a common note axis.
    """

    rep_name: str
    branches: list[np.ndarray]
    hand_tags: tuple[str, ...] | None = None
    token_branch: bool = False  # integer token rows, embedded by the model

    def __post_init__(self):
        if len(self.branches) not in (1, 2):
            raise ShapeMismatch(f"{len(self.branches)} branches, expected 1 or 2")
        if len(self.branches) == 2 and self.rep_name != "argnn":
            raise ShapeMismatch("two branches are only valid for rep 'argnn'")
        for b in self.branches:
            if not self.token_branch and not np.all(np.isfinite(b)):
                raise NonFiniteValue(f"non-finite value in {self.rep_name} features")
        if self.rep_name == "virtuoso" and self.branches[0].shape[1] != VIRTUOSO_DIM:
            raise ShapeMismatch(
                f"virtuoso features must have {VIRTUOSO_DIM} columns, "
                f"got {self.branches[0].shape[1]}"
            )

    @property
    def total_notes(self) -> int:
        return sum(b.shape[0] for b in self.branches)


def pitch_tokens(seq: NoteSequence) -> FeatureSequence:
    """Map a note sequence to its 88-category pitch token sequence."""
    if len(seq) == 0:
        raise EmptySequence(f"{seq.piece_id}: cannot tokenize an empty sequence")
    tokens = np.array(
        [[n.midi_pitch - PIANO_LOW] for n in seq.notes], dtype=np.int64
    )
    return FeatureSequence(rep_name="pitch", branches=[tokens], token_branch=True)


def save_embedding(path: str | Path, matrix: np.ndarray) -> None:
    """Write a T x d float32 matrix in the PEMB container format."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ShapeMismatch(f"embedding must be 2-D, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteValue("refusing to write non-finite embedding")
    t, d = matrix.shape
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(PEMB_MAGIC, PEMB_VERSION, t, d))
        fh.write(matrix.tobytes())


def load_embedding(path: str | Path) -> np.ndarray:
    """Read a PEMB file back into a float32 T x d matrix (bit-exact)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, t, d = _HEADER.unpack_from(blob)
    if magic != PEMB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != PEMB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = blob[_HEADER.size :]
    if len(payload) != 4 * t * d:
        raise SizeMismatch(
            f"{path}: header says {t}x{d} ({4 * t * d} bytes), "
            f"payload has {len(payload)}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(t, d)
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteValue(f"{path}: payload contains non-finite values")
    return matrix


def interleave_hands(rep: FeatureSequence) -> np.ndarray:
    """Restore a two-branch sequence to canonical note order.

    Requires ``hand_tags``; row t of the result is the next unread row of
    the right- or left-hand matrix, as dictated by tag t.
    """
    if len(rep.branches) == 1:
        return rep.branches[0]
    if rep.hand_tags is None:
        raise LengthMismatch("two-branch sequence without hand tags")
    right, left = rep.branches
    n_r = sum(1 for h in rep.hand_tags if h == "R")
    n_l = len(rep.hand_tags) - n_r
    if right.shape[0] != n_r or left.shape[0] != n_l:
        raise LengthMismatch(
            f"hand tags expect {n_r}R/{n_l}L rows, "
            f"matrices have {right.shape[0]}/{left.shape[0]}"
        )
    if right.shape[1] != left.shape[1]:
        raise LengthMismatch("hand matrices disagree on feature width")
    out = np.empty((len(rep.hand_tags), right.shape[1]), dtype=right.dtype)
    r = l = 0
    for t, tag in enumerate(rep.hand_tags):
        if tag == "R":
            out[t] = right[r]
            r += 1
        else:
            out[t] = left[l]
            l += 1
    return out


def align(rep_a: FeatureSequence, rep_b: FeatureSequence) -> FeatureSequence:
    """Concatenate two representations per note for early (sync) fusion.

    Two-branch inputs are first interleaved into canonical note order. A
    differing note count means the embeddings were computed from a
    different note set than the score; that is an error, not a truncation.
    """
    a = interleave_hands(rep_a)
    b = interleave_hands(rep_b)
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch(
            f"note axes differ: {rep_a.rep_name} has {a.shape[0]} rows, "
            f"{rep_b.rep_name} has {b.shape[0]}"
        )
    fusedm = np.concatenate(
        [a.astype(np.float64), b.astype(np.float64)], axis=1
    )
    return FeatureSequence(rep_name="fused", branches=[fusedm])


@dataclass(frozen=True)
class Fragment:
    """A fixed window of consecutive notes inheriting the piece label."""

    piece_id: str
    start_note: int
    length: int
    label: int | None = None


def fragment_spans(
    seq_len: int, window: int = 256, overlap_fraction: float = 0.25
) -> list[tuple[int, int]]:
    """Window starts/lengths covering every note index in [0, seq_len).

    hop = round(window * (1 - overlap_fraction)). Full windows start at
    0, hop, 2*hop, ... while they fit; a piece shorter than the window
    yields a single whole-piece fragment; otherwise a final window
    anchored at seq_len - window is added when the last full window stops
    short of the end.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if not (0 <= overlap_fraction < 1):
        raise ValueError("overlap_fraction must be in [0, 1)")
    if seq_len <= 0:
        return []
    if seq_len < window:
        return [(0, seq_len)]
    hop = max(1, round(window * (1 - overlap_fraction)))
    spans = []
    start = 0
    while start + window <= seq_len:
        spans.append((start, window))
        start += hop
    last_end = spans[-1][0] + window
    if last_end < seq_len:
        spans.append((max(0, seq_len - window), window))
    return spans


def fragment_piece(
    piece_id: str,
    seq_len: int,
    label: int | None = None,
    window: int = 256,
    overlap_fraction: float = 0.25,
) -> list[Fragment]:
    return [
        Fragment(piece_id=piece_id, start_note=start, length=length, label=label)
        for start, length in fragment_spans(seq_len, window, overlap_fraction)
    ]


def slice_features(rep: FeatureSequence, start: int, length: int) -> FeatureSequence:
    """Extract a note window from a feature sequence.

    For two-branch sequences the window is defined on the canonical note
    axis; each branch keeps only its rows whose canonical index falls
    inside the window (hand tags required).
    """
    if len(rep.branches) == 1:
        return FeatureSequence(
            rep_name=rep.rep_name,
            branches=[rep.branches[0][start : start + length]],
            token_branch=rep.token_branch,
        )
    if rep.hand_tags is None:
        raise LengthMismatch("cannot window a two-branch sequence without hand tags")
    tags = rep.hand_tags
    r_rows = []
    l_rows = []
    r = l = 0
    for t, tag in enumerate(tags):
        inside = start <= t < start + length
        if tag == "R":
            if inside:
                r_rows.append(r)
            r += 1
        else:
            if inside:
                l_rows.append(l)
            l += 1
    right, left = rep.branches
    return FeatureSequence(
        rep_name=rep.rep_name,
        branches=[right[r_rows], left[l_rows]],
        hand_tags=tuple(tags[start : start + length]),
        token_branch=rep.token_branch,
    )
