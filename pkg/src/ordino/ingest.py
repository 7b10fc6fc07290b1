"""MusicXML ingestion: note sequences, corpus manifests, corpus statistics.

Scores are parsed into a canonical, immutable note list: all pitched notes
from both staves, sorted by (onset, pitch) with document order breaking the
remaining ties. Tied notes are merged into one note with the summed
duration; grace notes (which carry no duration) are dropped.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
import zipfile
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    InsufficientData,
    LabelMismatch,
    OrdinoError,
    OutOfRangePitch,
    ParseError,
    UnsupportedScore,
)

log = logging.getLogger(__name__)

PIANO_LOW = 21
PIANO_HIGH = 108

_STEP_SEMITONES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}

SCORE_SUFFIXES = (".xml", ".musicxml", ".mxl")


class Hand(str, Enum):
    RIGHT = "R"
    LEFT = "L"


@dataclass(frozen=True)
class Note:
    """One pitched note in score order.

    ``onset`` and ``duration`` are rational beats (quarter note = 1) from
    the start of the piece.
    """

    midi_pitch: int
    onset: Fraction
    duration: Fraction
    hand: Hand
    measure_index: int

    def __post_init__(self):
        if not (PIANO_LOW <= self.midi_pitch <= PIANO_HIGH):
            raise OutOfRangePitch(
                f"pitch {self.midi_pitch} outside piano range "
                f"(measure {self.measure_index})"
            )
        if self.duration <= 0:
            raise ParseError(f"non-positive duration at measure {self.measure_index}")
        if self.onset < 0:
            raise ParseError(f"negative onset at measure {self.measure_index}")


@dataclass(frozen=True)
class NoteSequence:
    piece_id: str
    notes: tuple[Note, ...]
    n_measures: int

    def __len__(self) -> int:
        return len(self.notes)

    @property
    def hand_tags(self) -> tuple[str, ...]:
        return tuple(n.hand.value for n in self.notes)


@dataclass
class ManifestEntry:
    piece_id: str
    score_path: str
    label: int
    composer: str = ""
    n_notes: int = 0
    n_measures: int = 0
    embedding_paths: dict = field(default_factory=dict)


@dataclass
class CorpusManifest:
    """Corpus index: one entry per labeled, successfully parsed piece."""

    k: int
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path | None = None  # directory to resolve relative paths against

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.piece_id in seen:
                raise LabelMismatch(f"duplicate piece_id {e.piece_id!r} in manifest")
            seen.add(e.piece_id)
            if not (1 <= e.label <= self.k):
                raise LabelMismatch(
                    f"label {e.label} for {e.piece_id!r} outside 1..{self.k}"
                )

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.piece_id: e for e in self.entries}

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"schema": "ordino.manifest.v1", "k": self.k}) + "\n")
            for e in self.entries:
                fh.write(
                    json.dumps(
                        {
                            "piece_id": e.piece_id,
                            "score_path": e.score_path,
                            "label": e.label,
                            "composer": e.composer,
                            "n_notes": e.n_notes,
                            "n_measures": e.n_measures,
                            "embedding_paths": e.embedding_paths,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        entries = []
        k = None
        with path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj.get("schema") == "ordino.manifest.v1":
                    k = int(obj["k"])
                    continue
                entries.append(
                    ManifestEntry(
                        piece_id=obj["piece_id"],
                        score_path=obj["score_path"],
                        label=int(obj["label"]),
                        composer=obj.get("composer", ""),
                        n_notes=int(obj.get("n_notes", 0)),
                        n_measures=int(obj.get("n_measures", 0)),
                        embedding_paths=obj.get("embedding_paths", {}),
                    )
                )
        if k is None:
            raise LabelMismatch(f"{path}: missing manifest header line")
        return cls(k=k, entries=entries, root=path.parent)


def _midi_pitch(pitch_el: ET.Element, measure_index: int) -> int:
    step = pitch_el.findtext("step", "").strip().upper()
    if step not in _STEP_SEMITONES:
        raise ParseError(f"unknown pitch step {step!r} in measure {measure_index}")
    try:
        octave = int(pitch_el.findtext("octave", "").strip())
        alter = int(round(float(pitch_el.findtext("alter", "0").strip() or "0")))
    except ValueError as exc:
        raise ParseError(f"bad pitch fields in measure {measure_index}: {exc}") from exc
    midi = (octave + 1) * 12 + _STEP_SEMITONES[step] + alter
    if not (PIANO_LOW <= midi <= PIANO_HIGH):
        raise OutOfRangePitch(
            f"pitch {midi} outside piano range 21..108 (measure {measure_index})"
        )
    return midi


def _read_musicxml_root(path: Path) -> ET.Element:
    if path.suffix.lower() == ".mxl":
        try:
            with zipfile.ZipFile(path) as zf:
                root_name = None
                if "META-INF/container.xml" in zf.namelist():
                    container = ET.fromstring(zf.read("META-INF/container.xml"))
                    rf = container.find(".//rootfile")
                    if rf is not None:
                        root_name = rf.get("full-path")
                if root_name is None:
                    candidates = [
                        n
                        for n in zf.namelist()
                        if n.lower().endswith((".xml", ".musicxml"))
                        and not n.startswith("META-INF")
                    ]
                    if not candidates:
                        raise ParseError(f"{path}: no score file inside container")
                    root_name = candidates[0]
                data = zf.read(root_name)
        except (zipfile.BadZipFile, KeyError) as exc:
            raise ParseError(f"{path}: bad compressed container: {exc}") from exc
    else:
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    try:
        return ET.fromstring(data)
    except ET.ParseError as exc:
        raise ParseError(f"{path}: malformed XML: {exc}") from exc


@dataclass
class _OpenTie:
    note_index: int
    duration: Fraction


def parse_musicxml(path: str | Path) -> NoteSequence:
    """Parse a MusicXML file (plain or .mxl container) into a NoteSequence.

    Rests, grace notes, cue notes and unpitched elements are excluded.
    Chords share the onset of their first note. Ties are merged into a
    single note with the summed duration. Hands follow the staff layout:
    staff 1 is the right hand, every other staff the left.
    """
    path = Path(path)
    root = _read_musicxml_root(path)
    if root.tag == "score-timewise":
        raise ParseError(f"{path}: timewise MusicXML is not supported")
    parts = root.findall("part")
    if not parts:
        raise UnsupportedScore(f"{path}: no <part> elements")

    open_ties: dict[tuple[int, str], _OpenTie] = {}
    merged: list[Note] = []  # document order, ties consolidated in place
    n_measures = 0

    for part_index, part in enumerate(parts):
        divisions = 1
        position = Fraction(0)
        last_onset = Fraction(0)
        measure_count = 0
        for measure_index, measure in enumerate(part.findall("measure")):
            measure_count += 1
            for el in measure:
                if el.tag == "attributes":
                    div_text = el.findtext("divisions")
                    if div_text:
                        divisions = int(div_text)
                        if divisions <= 0:
                            raise ParseError(
                                f"{path}: non-positive divisions in measure {measure_index}"
                            )
                elif el.tag == "backup":
                    position -= Fraction(int(el.findtext("duration", "0")), divisions)
                elif el.tag == "forward":
                    position += Fraction(int(el.findtext("duration", "0")), divisions)
                elif el.tag == "note":
                    is_chord = el.find("chord") is not None
                    dur_text = el.findtext("duration")
                    duration = (
                        Fraction(int(dur_text), divisions) if dur_text else Fraction(0)
                    )
                    onset = last_onset if is_chord else position
                    if not is_chord:
                        last_onset = position
                        position += duration

                    if el.find("grace") is not None or dur_text is None:
                        continue  # ornaments without playable duration
                    if el.find("rest") is not None or el.find("cue") is not None:
                        continue
                    pitch_el = el.find("pitch")
                    if pitch_el is None:
                        continue  # unpitched
                    if duration <= 0:
                        continue

                    midi = _midi_pitch(pitch_el, measure_index)
                    staff_text = el.findtext("staff")
                    if staff_text is not None:
                        staff = int(staff_text)
                    else:
                        staff = 1 if part_index == 0 else 2
                    hand = Hand.RIGHT if staff == 1 else Hand.LEFT

                    tie_types = {t.get("type") for t in el.findall("tie")}
                    if not tie_types:
                        tie_types = {
                            t.get("type") for t in el.findall("notations/tied")
                        }
                    tie_key = (midi, hand.value)

                    if "stop" in tie_types and tie_key in open_ties:
                        open_tie = open_ties.pop(tie_key)
                        open_tie.duration += duration
                        prev = merged[open_tie.note_index]
                        merged[open_tie.note_index] = Note(
                            midi_pitch=prev.midi_pitch,
                            onset=prev.onset,
                            duration=open_tie.duration,
                            hand=prev.hand,
                            measure_index=prev.measure_index,
                        )
                        if "start" in tie_types:
                            open_ties[tie_key] = open_tie
                        continue

                    note = Note(
                        midi_pitch=midi,
                        onset=onset,
                        duration=duration,
                        hand=hand,
                        measure_index=measure_index,
                    )
                    merged.append(note)
                    if "start" in tie_types:
                        open_ties[tie_key] = _OpenTie(
                            note_index=len(merged) - 1, duration=duration
                        )
        n_measures = max(n_measures, measure_count)

    if open_ties:
        log.debug("%s: %d unterminated ties", path, len(open_ties))
    if not merged:
        raise UnsupportedScore(f"{path}: no pitched notes found")

    # merged[] holds the tie-consolidated notes in document order; sort
    # canonically with document order breaking remaining ties.
    final = sorted(
        ((note.onset, note.midi_pitch, i, note) for i, note in enumerate(merged)),
        key=lambda t: (t[0], t[1], t[2]),
    )
    ordered = tuple(t[3] for t in final)
    return NoteSequence(piece_id=path.stem, notes=ordered, n_measures=n_measures)


def load_labels(path: str | Path) -> tuple[int | None, list[dict]]:
    """Read a JSON Lines label file.

    Each line is an object with at least ``piece_id`` and ``label``; an
    optional leading header object may declare ``k``.
    """
    path = Path(path)
    k = None
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LabelMismatch(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if "piece_id" not in obj and "k" in obj:
                k = int(obj["k"])
                continue
            if "piece_id" not in obj or "label" not in obj:
                raise LabelMismatch(f"{path}:{lineno}: needs piece_id and label")
            rows.append(obj)
    return k, rows


def _index_scores(score_dir: Path) -> dict[str, list[Path]]:
    found: dict[str, list[Path]] = {}
    for p in sorted(score_dir.rglob("*")):
        if p.is_file() and p.suffix.lower() in SCORE_SUFFIXES:
            found.setdefault(p.stem, []).append(p)
    return found


def build_manifest(
    score_dir: str | Path,
    labels_path: str | Path,
    k: int | None = None,
) -> tuple[CorpusManifest, list[dict]]:
    """Match labels against score files and parse every labeled piece.

    Returns the manifest plus a rejects list for pieces whose score could
    not be parsed (never silently dropped). Raises LabelMismatch when a
    label references a missing or ambiguous score file.
    """
    score_dir = Path(score_dir)
    file_k, rows = load_labels(labels_path)
    if k is None:
        k = file_k if file_k is not None else max(int(r["label"]) for r in rows)
    index = _index_scores(score_dir)

    entries = []
    rejects = []
    for row in rows:
        piece_id = str(row["piece_id"])
        candidates = index.get(piece_id, [])
        if not candidates:
            raise LabelMismatch(f"no score file for labeled piece {piece_id!r}")
        if len(candidates) > 1:
            raise LabelMismatch(
                f"piece {piece_id!r} matches {len(candidates)} score files"
            )
        score_path = candidates[0]
        try:
            seq = parse_musicxml(score_path)
        except OrdinoError as exc:
            rejects.append(
                {
                    "piece_id": piece_id,
                    "score_path": str(score_path),
                    "error": exc.code,
                    "detail": str(exc),
                }
            )
            continue
        entries.append(
            ManifestEntry(
                piece_id=piece_id,
                score_path=str(score_path),
                label=int(row["label"]),
                composer=str(row.get("composer", "")),
                n_notes=len(seq),
                n_measures=seq.n_measures,
            )
        )
    return CorpusManifest(k=k, entries=entries), rejects


def write_rejects(manifest_path: str | Path, rejects: list[dict]) -> Path | None:
    if not rejects:
        return None
    manifest_path = Path(manifest_path)
    path = manifest_path.with_suffix(manifest_path.suffix + ".rejects.jsonl")
    with path.open("w", encoding="utf-8") as fh:
        for r in rejects:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path


def stuart_tau_c(xs: Iterable[int], ys: Iterable[int]) -> float:
    """Stuart's tau-c rank correlation between two ordinal variables.

    tau_c = 2m(P - Q) / (n^2 (m - 1)) where P/Q count concordant and
    discordant pairs and m is the smaller number of distinct categories.
    Returns 0.0 when either variable is constant.
    """
    xs = list(xs)
    ys = list(ys)
    n = len(xs)
    if n < 2 or len(ys) != n:
        raise InsufficientData(f"need >= 2 paired observations, got {n}")
    x_levels = sorted(set(xs))
    y_levels = sorted(set(ys))
    m = min(len(x_levels), len(y_levels))
    if m < 2:
        return 0.0

    xi = np.searchsorted(x_levels, xs)
    yi = np.searchsorted(y_levels, ys)
    table = np.zeros((len(x_levels), len(y_levels)), dtype=np.int64)
    np.add.at(table, (xi, yi), 1)

    # cum_br[r, c]: count strictly below row r and strictly right of col c
    below = np.cumsum(table[::-1], axis=0)[::-1]
    below = np.vstack([below[1:], np.zeros((1, table.shape[1]), dtype=np.int64)])
    right = np.cumsum(below[:, ::-1], axis=1)[:, ::-1]
    cum_br = np.hstack([right[:, 1:], np.zeros((table.shape[0], 1), dtype=np.int64)])
    left = np.cumsum(below, axis=1)
    cum_bl = np.hstack([np.zeros((table.shape[0], 1), dtype=np.int64), left[:, :-1]])

    concordant = int(np.sum(table * cum_br))
    discordant = int(np.sum(table * cum_bl))
    return 2.0 * m * (concordant - discordant) / (n * n * (m - 1))


def corpus_tau_c(manifest: CorpusManifest) -> float:
    """Rank correlation between piece length (n_notes) and difficulty label."""
    if len(manifest.entries) < 2:
        raise InsufficientData("manifest needs >= 2 entries for tau-c")
    return stuart_tau_c(
        [e.n_notes for e in manifest.entries],
        [e.label for e in manifest.entries],
    )
