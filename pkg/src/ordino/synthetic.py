"""Synthetic scores, corpora and pseudo-embeddings for tests and demos.

Real backbone embeddings come from external pretrained models; everything
here exists so the full pipeline can run and be verified without them.
The pseudo-embedding is a seeded random projection of each note's pitch
context, so it is a pure function of (score, representation, seed).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .ingest import CorpusManifest, NoteSequence, build_manifest, write_rejects
from .representations import VIRTUOSO_DIM, save_embedding

_SHARP_NAMES = [
    ("C", 0), ("C", 1), ("D", 0), ("D", 1), ("E", 0), ("F", 0),
    ("F", 1), ("G", 0), ("G", 1), ("A", 0), ("A", 1), ("B", 0),
]

_REP_TAGS = {"argnn": 1, "virtuoso": 2, "virtuoso_enc": 3}


def _pitch_xml(midi: int, indent: str) -> str:
    step, alter = _SHARP_NAMES[midi % 12]
    octave = midi // 12 - 1
    alter_line = f"{indent}  <alter>{alter}</alter>\n" if alter else ""
    return (
        f"{indent}<pitch>\n"
        f"{indent}  <step>{step}</step>\n"
        f"{alter_line}"
        f"{indent}  <octave>{octave}</octave>\n"
        f"{indent}</pitch>\n"
    )


def make_musicxml(
    right: list[tuple[int, float]],
    left: list[tuple[int, float]],
    beats_per_measure: int = 4,
    divisions: int = 4,
) -> str:
    """Render two monophonic hand streams as a two-staff piano score.

    Notes are (midi_pitch, duration_in_quarters) and must tile whole
    measures; shorter hands are padded with measure rests.
    """

    def to_measures(notes):
        capacity = beats_per_measure * divisions
        measures, current, used = [], [], 0
        for midi, dur in notes:
            dur_div = int(round(dur * divisions))
            if dur_div <= 0 or used + dur_div > capacity:
                raise DataError("synthetic notes must tile whole measures")
            current.append((midi, dur_div))
            used += dur_div
            if used == capacity:
                measures.append(current)
                current, used = [], 0
        if current:
            raise DataError("trailing partial measure in synthetic score")
        return measures

    rh, lh = to_measures(right), to_measures(left)
    n_measures = max(len(rh), len(lh), 1)
    capacity = beats_per_measure * divisions

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<score-partwise version="3.1">',
        "  <part-list>",
        '    <score-part id="P1"><part-name>Piano</part-name></score-part>',
        "  </part-list>",
        '  <part id="P1">',
    ]
    for m in range(n_measures):
        lines.append(f'    <measure number="{m + 1}">')
        if m == 0:
            lines.append(
                "      <attributes>\n"
                f"        <divisions>{divisions}</divisions>\n"
                f"        <time><beats>{beats_per_measure}</beats>"
                "<beat-type>4</beat-type></time>\n"
                "        <staves>2</staves>\n"
                '        <clef number="1"><sign>G</sign><line>2</line></clef>\n'
                '        <clef number="2"><sign>F</sign><line>4</line></clef>\n'
                "      </attributes>"
            )
        for staff, hand_measures in ((1, rh), (2, lh)):
            if staff == 2:
                lines.append(
                    f"      <backup><duration>{capacity}</duration></backup>"
                )
            if m < len(hand_measures):
                for midi, dur_div in hand_measures[m]:
                    lines.append(
                        "      <note>\n"
                        + _pitch_xml(midi, "        ")
                        + f"        <duration>{dur_div}</duration>\n"
                        + f"        <voice>{staff}</voice>\n"
                        + f"        <staff>{staff}</staff>\n"
                        + "      </note>"
                    )
            else:
                lines.append(
                    "      <note>\n"
                    "        <rest/>\n"
                    f"        <duration>{capacity}</duration>\n"
                    f"        <voice>{staff}</voice>\n"
                    f"        <staff>{staff}</staff>\n"
                    "      </note>"
                )
        lines.append("    </measure>")
    lines.append("  </part>")
    lines.append("</score-partwise>")
    return "\n".join(lines) + "\n"


def synth_embedding(
    seq: NoteSequence, rep: str, dim: int, seed: int = 0
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Deterministic pseudo-embedding from each note's pitch context.

    Returns one (T, dim) matrix, or (right, left) matrices for the
    two-branch fingering representation.
    """
    if rep == "virtuoso":
        dim = VIRTUOSO_DIM
    tag = _REP_TAGS.get(rep)
    if tag is None:
        raise DataError(f"cannot synthesize embeddings for rep {rep!r}")
    pitches = np.array([n.midi_pitch for n in seq.notes], dtype=np.float64)
    scaled = (pitches - 64.0) / 24.0
    ctx = np.stack(
        [np.roll(scaled, shift) for shift in (-2, -1, 0, 1, 2)], axis=1
    )
    rng = np.random.default_rng(
        np.random.SeedSequence(
            entropy=seed, spawn_key=(tag, zlib.crc32(seq.piece_id.encode()))
        )
    )
    weights = rng.normal(size=(5, dim))
    phases = rng.uniform(-np.pi, np.pi, size=dim)
    matrix = np.sin(ctx @ weights + phases).astype(np.float32)
    if rep != "argnn":
        return matrix
    tags = seq.hand_tags
    right = matrix[[i for i, h in enumerate(tags) if h == "R"]]
    left = matrix[[i for i, h in enumerate(tags) if h == "L"]]
    return right, left


@dataclass
class SynthPiece:
    piece_id: str
    right: list[tuple[int, float]]
    left: list[tuple[int, float]]
    label: int
    composer: str = "synthetic"

    @property
    def xml(self) -> str:
        return make_musicxml(self.right, self.left)


def write_corpus(
    out_dir: str | Path, pieces: list[SynthPiece], k: int
) -> Path:
    """Write scores + labels, ingest them, return the manifest path."""
    out_dir = Path(out_dir)
    scores_dir = out_dir / "scores"
    scores_dir.mkdir(parents=True, exist_ok=True)
    labels_path = out_dir / "labels.jsonl"
    with labels_path.open("w", encoding="utf-8") as fh:
        fh.write('{"k": %d}\n' % k)
        for piece in pieces:
            (scores_dir / f"{piece.piece_id}.musicxml").write_text(
                piece.xml, encoding="utf-8"
            )
            fh.write(
                '{"piece_id": "%s", "label": %d, "composer": "%s"}\n'
                % (piece.piece_id, piece.label, piece.composer)
            )
    manifest, rejects = build_manifest(scores_dir, labels_path, k=k)
    manifest_path = out_dir / "manifest.jsonl"
    manifest.save(manifest_path)
    write_rejects(manifest_path, rejects)
    return manifest_path


def separable_corpus(
    out_dir: str | Path,
    n_per_class: int = 8,
    k: int = 4,
    notes_per_hand: int = 24,
    seed: int = 0,
) -> Path:
    """A small corpus whose label is a pure function of the score.

    Each difficulty level occupies its own octave register and rhythm
    density, so a pitch-token model can fit the training set exactly.
    """
    rng = np.random.default_rng(seed)
    pieces = []
    for label in range(1, k + 1):
        low = 36 + 12 * (label - 1)
        dur = 1.0 if label % 2 else 0.5
        for i in range(n_per_class):
            right = [
                (int(rng.integers(low + 12, low + 24)), dur)
                for _ in range(notes_per_hand)
            ]
            left = [
                (int(rng.integers(low, low + 12)), dur)
                for _ in range(notes_per_hand)
            ]
            pieces.append(
                SynthPiece(
                    piece_id=f"piece_l{label}_{i:02d}",
                    right=right,
                    left=left,
                    label=label,
                )
            )
    return write_corpus(out_dir, pieces, k)


def multiview_corpus(
    out_dir: str | Path,
    n_per_label: int = 4,
    notes_per_hand: int = 8,
    argnn_dim: int = 6,
    seed: int = 0,
) -> Path:
    """Eight-level corpus where each representation sees one label bit.

    label - 1 = 4a + 2b + c: the pitch register encodes a, the virtuoso
    embedding encodes b and the fingering embedding encodes c. No single
    view can resolve the full label; together they determine it exactly.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    k = 8
    arpeggio = (0, 4, 7, 12, 7, 4)
    pieces = []
    bits = {}
    for label in range(1, k + 1):
        a, b, c = (label - 1) >> 2 & 1, (label - 1) >> 1 & 1, (label - 1) & 1
        for i in range(n_per_label):
            # a fixed arpeggio per register keeps the pitch view blind to
            # everything except the register bit
            low = 72 if a else 48
            right = [
                (low + arpeggio[t % len(arpeggio)], 1.0)
                for t in range(notes_per_hand)
            ]
            left = [
                (low - 12 + arpeggio[t % len(arpeggio)], 1.0)
                for t in range(notes_per_hand)
            ]
            pid = f"view_l{label}_{i:02d}"
            pieces.append(SynthPiece(piece_id=pid, right=right, left=left, label=label))
            bits[pid] = (a, b, c)

    manifest_path = write_corpus(out_dir, pieces, k)
    manifest = CorpusManifest.load(manifest_path)
    emb_dir = out_dir / "embeddings"
    emb_dir.mkdir(exist_ok=True)
    for entry in manifest.entries:
        _, b, c = bits[entry.piece_id]
        t = entry.n_notes
        virtuoso = (
            (0.5 if b else -0.5) + 0.1 * rng.standard_normal((t, VIRTUOSO_DIM))
        ).astype(np.float32)
        save_embedding(emb_dir / f"{entry.piece_id}.virtuoso.pemb", virtuoso)
        half = t // 2
        for hand, rows in (("rh", half), ("lh", t - half)):
            mat = (
                (0.5 if c else -0.5) + 0.1 * rng.standard_normal((rows, argnn_dim))
            ).astype(np.float32)
            save_embedding(emb_dir / f"{entry.piece_id}.argnn.{hand}.pemb", mat)
        entry.embedding_paths = {
            "virtuoso": f"embeddings/{entry.piece_id}.virtuoso.pemb",
            "argnn": {
                "rh": f"embeddings/{entry.piece_id}.argnn.rh.pemb",
                "lh": f"embeddings/{entry.piece_id}.argnn.lh.pemb",
            },
        }
    manifest.save(manifest_path)
    return manifest_path
