import json
from fractions import Fraction

import numpy as np
import pytest

from ordino.errors import (
    InsufficientData,
    LabelMismatch,
    OutOfRangePitch,
    ParseError,
    UnsupportedScore,
)
from ordino.ingest import (
    CorpusManifest,
    Hand,
    ManifestEntry,
    build_manifest,
    corpus_tau_c,
    parse_musicxml,
    stuart_tau_c,
)


def test_two_staff_fixture_counts(fixture_dir):
    seq = parse_musicxml(fixture_dir / "two_staff_eight_notes.musicxml")
    assert len(seq) == 8
    assert seq.n_measures == 2
    rights = [n for n in seq.notes if n.hand == Hand.RIGHT]
    lefts = [n for n in seq.notes if n.hand == Hand.LEFT]
    assert len(rights) == 4 and len(lefts) == 4
    # canonical order: onset ascending, pitch ascending within an onset
    assert [n.midi_pitch for n in seq.notes] == [60, 72, 62, 74, 64, 76, 65, 77]
    assert [n.onset for n in seq.notes] == [Fraction(t // 2) for t in range(8)]


def test_empty_part_rejected(fixture_dir):
    with pytest.raises(UnsupportedScore):
        parse_musicxml(fixture_dir / "empty_part.musicxml")


def test_tie_merged_into_single_note(fixture_dir):
    seq = parse_musicxml(fixture_dir / "tied_half_half.musicxml")
    assert len(seq) == 1
    note = seq.notes[0]
    assert note.midi_pitch == 60
    assert note.duration == Fraction(4)
    assert note.onset == Fraction(0)


def test_grace_dropped_chord_shares_onset_rest_skipped(fixture_dir):
    seq = parse_musicxml(fixture_dir / "grace_chord_rest.musicxml")
    assert [n.midi_pitch for n in seq.notes] == [60, 64, 67]
    assert [n.onset for n in seq.notes] == [Fraction(0), Fraction(0), Fraction(2)]


def test_out_of_range_pitch(fixture_dir):
    with pytest.raises(OutOfRangePitch) as err:
        parse_musicxml(fixture_dir / "out_of_range.musicxml")
    assert "measure" in str(err.value)


def test_malformed_xml(fixture_dir):
    with pytest.raises(ParseError):
        parse_musicxml(fixture_dir / "malformed.musicxml")


def test_mxl_container(fixture_dir, mxl_fixture):
    plain = parse_musicxml(fixture_dir / "two_staff_eight_notes.musicxml")
    zipped = parse_musicxml(mxl_fixture)
    assert [n.midi_pitch for n in zipped.notes] == [n.midi_pitch for n in plain.notes]
    assert zipped.n_measures == plain.n_measures


def test_parse_deterministic(fixture_dir):
    a = parse_musicxml(fixture_dir / "two_staff_eight_notes.musicxml")
    b = parse_musicxml(fixture_dir / "two_staff_eight_notes.musicxml")
    assert a == b


# ---------------------------------------------------------------------------
# manifests


def _write_labels(path, rows, k=None):
    with path.open("w", encoding="utf-8") as fh:
        if k is not None:
            fh.write(json.dumps({"k": k}) + "\n")
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _copy_fixture(fixture_dir, dest_dir, name, piece_id):
    dest = dest_dir / f"{piece_id}.musicxml"
    dest.write_text(
        (fixture_dir / name).read_text(encoding="utf-8"), encoding="utf-8"
    )
    return dest


def test_build_manifest_three_entries(fixture_dir, tmp_path):
    scores = tmp_path / "scores"
    scores.mkdir()
    for i in range(3):
        _copy_fixture(fixture_dir, scores, "two_staff_eight_notes.musicxml", f"p{i}")
    labels = tmp_path / "labels.jsonl"
    _write_labels(
        labels,
        [{"piece_id": f"p{i}", "label": i + 1, "composer": "x"} for i in range(3)],
        k=9,
    )
    manifest, rejects = build_manifest(scores, labels)
    assert len(manifest.entries) == 3
    assert rejects == []
    assert manifest.k == 9
    assert all(e.n_notes == 8 for e in manifest.entries)


def test_build_manifest_unknown_piece(fixture_dir, tmp_path):
    scores = tmp_path / "scores"
    scores.mkdir()
    _copy_fixture(fixture_dir, scores, "two_staff_eight_notes.musicxml", "known")
    labels = tmp_path / "labels.jsonl"
    _write_labels(labels, [{"piece_id": "ghost", "label": 1}], k=9)
    with pytest.raises(LabelMismatch) as err:
        build_manifest(scores, labels)
    assert "ghost" in str(err.value)


def test_build_manifest_reject_record(fixture_dir, tmp_path):
    scores = tmp_path / "scores"
    scores.mkdir()
    _copy_fixture(fixture_dir, scores, "two_staff_eight_notes.musicxml", "good0")
    _copy_fixture(fixture_dir, scores, "two_staff_eight_notes.musicxml", "good1")
    _copy_fixture(fixture_dir, scores, "malformed.musicxml", "broken")
    labels = tmp_path / "labels.jsonl"
    _write_labels(
        labels,
        [
            {"piece_id": "good0", "label": 1},
            {"piece_id": "good1", "label": 2},
            {"piece_id": "broken", "label": 3},
        ],
        k=9,
    )
    manifest, rejects = build_manifest(scores, labels)
    assert len(manifest.entries) == 2
    assert len(rejects) == 1
    assert rejects[0]["piece_id"] == "broken"
    assert rejects[0]["error"] == "ParseError"


def test_manifest_roundtrip(tmp_path):
    manifest = CorpusManifest(
        k=9,
        entries=[
            ManifestEntry(
                piece_id="a",
                score_path="a.musicxml",
                label=4,
                composer="c",
                n_notes=100,
                embedding_paths={"virtuoso": "a.pemb"},
            )
        ],
    )
    path = tmp_path / "manifest.jsonl"
    manifest.save(path)
    loaded = CorpusManifest.load(path)
    assert loaded.k == 9
    assert loaded.entries[0].piece_id == "a"
    assert loaded.entries[0].embedding_paths == {"virtuoso": "a.pemb"}
    assert loaded.root == tmp_path


# ---------------------------------------------------------------------------
# tau-c


def _tau_c_bruteforce(xs, ys):
    """Independent O(n^2) concordant/discordant pair count."""
    n = len(xs)
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = (xs[i] > xs[j]) - (xs[i] < xs[j])
            dy = (ys[i] > ys[j]) - (ys[i] < ys[j])
            s = dx * dy
            if s > 0:
                concordant += 1
            elif s < 0:
                discordant += 1
    m = min(len(set(xs)), len(set(ys)))
    if m < 2:
        return 0.0
    return 2.0 * m * (concordant - discordant) / (n * n * (m - 1))


def _manifest_from_pairs(pairs, k=9):
    return CorpusManifest(
        k=k,
        entries=[
            ManifestEntry(
                piece_id=f"p{i}", score_path="", label=label, n_notes=n_notes
            )
            for i, (n_notes, label) in enumerate(pairs)
        ],
    )


def test_tau_c_perfect_concordance():
    pairs = [(100 * (i + 1), i + 1) for i in range(5)]
    assert corpus_tau_c(_manifest_from_pairs(pairs, k=5)) == pytest.approx(1.0)


def test_tau_c_perfect_discordance():
    pairs = [(100 * (i + 1), 5 - i) for i in range(5)]
    assert corpus_tau_c(_manifest_from_pairs(pairs, k=5)) == pytest.approx(-1.0)


def test_tau_c_matches_bruteforce_oracle():
    rng = np.random.default_rng(42)
    for trial in range(5):
        n_notes = rng.integers(50, 5000, size=50).tolist()
        labels = rng.integers(1, 10, size=50).tolist()
        ours = corpus_tau_c(_manifest_from_pairs(list(zip(n_notes, labels))))
        oracle = _tau_c_bruteforce(n_notes, labels)
        assert abs(ours - oracle) <= 1e-12


def test_tau_c_reversal_antisymmetry():
    rng = np.random.default_rng(7)
    n_notes = rng.integers(50, 5000, size=40).tolist()
    labels = rng.integers(1, 10, size=40).tolist()
    forward = stuart_tau_c(n_notes, labels)
    backward = stuart_tau_c(n_notes, [10 - y for y in labels])
    assert forward == pytest.approx(-backward, abs=1e-12)


def test_tau_c_insufficient_data():
    with pytest.raises(InsufficientData):
        corpus_tau_c(_manifest_from_pairs([(100, 1)]))
