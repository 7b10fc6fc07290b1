"""Acceptance gate: one test per release criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -s` to see the PASS/FAIL lines.
"""

import math
import time

import numpy as np
import pytest

from ordino.cli import main
from ordino.data import load_corpus
from ordino.ingest import CorpusManifest, corpus_tau_c
from ordino.losses import (
    coral_loss,
    msmooth_target,
    nll_loss,
    ordinal_decode,
    ordinal_encode,
    ordinal_loss,
    regclass_loss,
)
from ordino.metrics import compute_metrics
from ordino.model import ensemble_predict
from ordino.representations import fragment_spans
from ordino.splits import make_splits, stratum_key
from ordino.synthetic import multiview_corpus, separable_corpus
from ordino.training import ExperimentConfig, predict_units, run_training
from ordino.verification import run_all_checks

from test_ingest import _manifest_from_pairs, _tau_c_bruteforce
from test_metrics import metrics_bruteforce
from test_splits import corpus_shaped_manifest


def _report(number: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"ACCEPTANCE {number:2d} {name}: {status}{suffix}")
    assert ok, f"criterion {number} {name} failed{suffix}"


def test_01_gradient_integrity():
    start = time.time()
    checks = run_all_checks(tolerance=1e-4, eps=1e-4)
    elapsed = time.time() - start
    worst = max(c.report.max_rel_err for c in checks)
    all_pass = all(c.report.passed for c in checks)
    _report(
        1,
        "gradient integrity",
        all_pass and elapsed <= 120.0,
        f"{len(checks)} configs, worst rel err {worst:.2e}, {elapsed:.0f}s",
    )


def test_02_loss_unit_suite():
    checks = []
    log_probs = np.log([[0.5, 0.25, 0.25]])
    checks.append(abs(nll_loss(log_probs, [1]) - 0.693147) <= 1e-6)
    checks.append(
        abs(regclass_loss(log_probs, np.array([1.5]), [1], 1.0) - 0.943147) <= 1e-6
    )
    checks.append(abs(coral_loss(np.array([0.0]), np.zeros(2), [2]) - 1.386294) <= 1e-6)
    checks.append(abs(ordinal_loss(np.array([[1.0, 0.0]]), [2]) - 0.5) <= 1e-6)
    checks.append(abs(msmooth_target(5, 9)[3] - math.exp(-2.0)) <= 1e-6)
    checks.append(abs(msmooth_target(5, 9)[3] - 0.1353) <= 1e-4)
    _report(2, "loss unit suite", all(checks), f"{sum(checks)}/{len(checks)} values")


def test_03_encoding_decoding():
    ok = True
    for k in range(2, 13):
        for label in range(1, k + 1):
            ok = ok and ordinal_decode(ordinal_encode(label, k)) == label
    undefined = ordinal_decode(np.array([1, 0, 0, 0, 1, 0, 0, 0, 0])) is None
    _report(3, "ordinal encode/decode", ok and undefined, "K in 2..12 plus undefined")


def test_04_metric_oracle():
    ok = True
    rng = np.random.default_rng(101)
    for k in (3, 9):
        truth = rng.integers(1, k + 1, size=1000).tolist()
        preds = [
            None if rng.random() < 0.05 else int(rng.integers(1, k + 1))
            for _ in range(1000)
        ]
        ours = compute_metrics(truth, preds, k)
        oracle = metrics_bruteforce(truth, preds, k)
        for field in ("acc_k", "acc_3", "acc_pm1", "mse"):
            ok = ok and abs(getattr(ours, field) - oracle[field]) <= 1e-12
    perfect = compute_metrics([1, 5, 9], [1, 5, 9], 9)
    ok = ok and (
        perfect.acc_k == 100.0
        and perfect.acc_3 == 100.0
        and perfect.acc_pm1 == 100.0
        and perfect.mse == 0.0
    )
    _report(4, "metric oracle", ok, "1000 random pairs, K in {3, 9}")


def test_05_split_protocol():
    manifest = corpus_shaped_manifest()
    assert len(manifest.entries) == 652
    all_ids = {e.piece_id for e in manifest.entries}
    strata: dict = {}
    for e in manifest.entries:
        strata.setdefault(stratum_key(e, "length_level"), []).append(e.piece_id)
    plans = make_splits(manifest, seed=33)
    ok = len(plans) == 5
    for plan in plans:
        ok = ok and set(plan.assignment) == all_ids
        for subset, p in (("train", 0.6), ("val", 0.2), ("test", 0.2)):
            frac = len(plan.subset(subset)) / len(all_ids)
            ok = ok and abs(frac - p) <= 0.02
        for members in strata.values():
            if len(members) < 5:
                continue
            for subset, p in (("train", 0.6), ("val", 0.2), ("test", 0.2)):
                got = sum(1 for m in members if plan.assignment[m] == subset)
                ok = ok and abs(got - p * len(members)) <= 1.0
    again = make_splits(manifest, seed=33)
    ok = ok and [p.assignment for p in plans] == [p.assignment for p in again]
    _report(5, "split protocol", ok, "652 pieces, 5 folds")


def test_06_fragmenter():
    spans = fragment_spans(640, window=256, overlap_fraction=0.25)
    ok = spans == [(0, 256), (192, 256), (384, 256)]
    ok = ok and all(b - a == 192 for (a, _), (b, _) in zip(spans, spans[1:]))
    ok = ok and all(
        (a + 256) - b == 64 for (a, _), (b, _) in zip(spans, spans[1:])
    )
    rng = np.random.default_rng(55)
    for _ in range(1000):
        seq_len = int(rng.integers(1, 5000))
        covered = np.zeros(seq_len, dtype=bool)
        for start, length in fragment_spans(seq_len):
            covered[start : start + length] = True
        ok = ok and covered.all()
    _report(6, "fragmenter", bool(ok), "hop 192, overlap 64, full coverage")


@pytest.fixture(scope="module")
def overfit_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    manifest_path = separable_corpus(root, n_per_class=8, k=4, seed=5)
    return manifest_path, CorpusManifest.load(manifest_path)


def test_07_synthetic_overfit(overfit_corpus):
    manifest_path, manifest = overfit_corpus
    assignment = {e.piece_id: "train" for e in manifest.entries}
    exp = ExperimentConfig(
        manifest=str(manifest_path),
        rep="pitch",
        loss="ordinal",
        seed=3,
        lr=3e-3,
        clip=1.0,
        hidden=64,
        layers=2,
        max_epochs=500,
        patience=500,
    )
    start = time.time()
    result = run_training(
        exp, manifest=manifest, assignment=assignment, stop_train_acc=100.0
    )
    elapsed = time.time() - start
    reached = result.history[-1]["train_acc_k"] == 100.0
    ok = reached and len(result.history) <= 500 and elapsed <= 60.0
    _report(
        7,
        "synthetic overfit",
        ok,
        f"32 pieces, {len(result.history)} epochs, {elapsed:.1f}s",
    )


def test_08_ensemble_complementarity(tmp_path):
    manifest_path = multiview_corpus(tmp_path, n_per_label=4, seed=11)
    manifest = CorpusManifest.load(manifest_path)
    assignment = {
        e.piece_id: ("test" if e.piece_id.endswith("_03") else "train")
        for e in manifest.entries
    }
    test_ids = sorted(p for p, s in assignment.items() if s == "test")
    labels = {e.piece_id: e.label for e in manifest.entries}
    member_records, member_acc = [], []
    for rep in ("pitch", "virtuoso", "argnn"):
        exp = ExperimentConfig(
            manifest=str(manifest_path),
            rep=rep,
            loss="nll",
            seed=17,
            lr=3e-3,
            clip=1.0,
            hidden=16,
            layers=2,
            batch_size=32,
            max_epochs=120,
            patience=120,
        )
        result = run_training(exp, manifest=manifest, assignment=assignment)
        pieces = load_corpus(manifest, test_ids, rep)
        units = [(p, pieces[p].streams, labels[p]) for p in test_ids]
        records = predict_units(result.model, units)
        metrics = compute_metrics(
            [u[2] for u in units], [r.decoded for r in records], 8
        )
        member_records.append(records)
        member_acc.append(metrics.acc_k)
    combined = ensemble_predict(member_records)
    ens = compute_metrics(
        [labels[r.piece_id] for r in combined], [r.decoded for r in combined], 8
    )
    ok = ens.acc_k >= max(member_acc)
    _report(
        8,
        "ensemble complementarity",
        ok,
        f"members {[round(a, 1) for a in member_acc]} vs ensemble {ens.acc_k:.1f}",
    )


def test_09_tau_c():
    pairs = [(100 * (i + 1), i + 1) for i in range(5)]
    ok = corpus_tau_c(_manifest_from_pairs(pairs, k=5)) == 1.0
    rng = np.random.default_rng(77)
    for _ in range(5):
        n_notes = rng.integers(50, 5000, size=50).tolist()
        labels = rng.integers(1, 10, size=50).tolist()
        ours = corpus_tau_c(_manifest_from_pairs(list(zip(n_notes, labels))))
        oracle = _tau_c_bruteforce(n_notes, labels)
        ok = ok and abs(ours - oracle) <= 1e-12
    _report(9, "tau-c", ok, "pair-count oracle, 50-entry manifests")


def test_10_determinism(tmp_path):
    manifest_path = separable_corpus(tmp_path / "corpus", n_per_class=5, k=3, seed=6)
    train_args = [
        "--single-thread",
        "train",
        "--manifest", str(manifest_path),
        "--rep", "pitch",
        "--loss", "ordinal",
        "--seed", "5",
        "--lr", "3e-3",
        "--clip", "1.0",
        "--hidden", "16",
        "--max-epochs", "8",
        "--patience", "8",
        "--quiet",
    ]
    blobs = []
    for run in range(2):
        out = tmp_path / f"bundle{run}"
        assert main(train_args + ["--out", str(out)]) == 0
        blobs.append((out / "checkpoint.bin").read_bytes())
    train_identical = blobs[0] == blobs[1]

    reports = []
    for name in ("d1.json", "d2.json"):
        path = tmp_path / name
        assert main(
            ["evaluate", "--bundle", str(tmp_path / "bundle0"),
             "--subset", "test", "--out", str(path), "--no-figures"]
        ) == 0
        reports.append(path.read_bytes())
    eval_identical = reports[0] == reports[1]
    _report(
        10,
        "determinism",
        train_identical and eval_identical,
        "identical checkpoints and byte-identical reports",
    )
