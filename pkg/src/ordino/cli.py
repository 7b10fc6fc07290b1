"""Command-line entry point.

Subcommands: ingest, split, train, evaluate, ensemble, predict, gradcheck,
synth-embed. Domain errors print a machine-readable JSON object on stderr
({"error": code, "detail": ...}); bad inputs and configuration exit 2,
runtime failures exit 1. ORDINO_SEED provides the master seed when no
--seed flag or config value is given.

Heavy imports happen inside the command handlers so --single-thread can
pin the BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _fail(exc, exit_code: int) -> int:
    code = getattr(exc, "code", type(exc).__name__)
    sys.stderr.write(json.dumps({"error": code, "detail": str(exc)}) + "\n")
    return exit_code


def _seed_fallback(seed):
    if seed is not None:
        return seed
    env = os.environ.get("ORDINO_SEED")
    return int(env) if env else None


def cmd_ingest(args) -> int:
    from .ingest import build_manifest, corpus_tau_c, write_rejects

    manifest, rejects = build_manifest(args.scores, args.labels, k=args.k)
    manifest.save(args.out)
    rejects_path = write_rejects(args.out, rejects)
    if rejects_path:
        sys.stderr.write(
            f"warning: {len(rejects)} score(s) rejected, see {rejects_path}\n"
        )
    summary = {
        "manifest": str(args.out),
        "entries": len(manifest.entries),
        "rejects": len(rejects),
        "k": manifest.k,
    }
    if len(manifest.entries) >= 2:
        # rank correlation between piece length and difficulty level
        summary["length_level_tau_c"] = round(corpus_tau_c(manifest), 6)
    print(json.dumps(summary))
    return 0


def cmd_split(args) -> int:
    from pathlib import Path

    from .ingest import CorpusManifest
    from .splits import make_splits

    manifest = CorpusManifest.load(args.manifest)
    seed = _seed_fallback(args.seed) or 0
    plans = make_splits(
        manifest, strategy=args.strategy, seed=seed, n_folds=args.folds
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for plan in plans:
        plan.save(out_dir / f"fold{plan.fold_id}.json")
    print(json.dumps({"folds": len(plans), "out_dir": str(out_dir), "seed": seed}))
    return 0


def _experiment_from_args(args):
    from .training import ExperimentConfig

    if args.config:
        exp = ExperimentConfig.from_json(args.config)
    else:
        exp = ExperimentConfig()
    overrides = dict(
        manifest=args.manifest,
        rep=args.rep,
        loss=args.loss,
        fusion=args.fusion,
        k=args.k,
        fold=args.fold,
        split_strategy=args.split_strategy,
        seed=_seed_fallback(args.seed),
        lr=args.lr,
        clip=args.clip,
        batch_size=args.batch_size,
        dropout=args.dropout,
        hidden=args.hidden,
        layers=args.layers,
        alpha=args.alpha,
        patience=args.patience,
        max_epochs=args.max_epochs,
        length_cap=args.length_cap,
        pitch_embed_dim=args.pitch_embed_dim,
    )
    if args.bidirectional:
        overrides["bidirectional"] = True
    if args.fragment:
        overrides["fragment"] = True
    if args.fragment_window is not None:
        overrides["fragment_window"] = args.fragment_window
    if args.fragment_overlap is not None:
        overrides["fragment_overlap"] = args.fragment_overlap
    if args.group3:
        overrides["group3_training"] = True
    return exp.with_overrides(**overrides)


def _train_all_folds(args, exp) -> int:
    """Run one training subprocess per fold, at most --jobs at a time."""
    import subprocess
    from pathlib import Path

    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    pending = []
    for fold in range(5):
        cfg_path = out_root / f"fold{fold}.config.json"
        cfg_path.write_text(
            json.dumps(exp.with_overrides(fold=fold).to_dict(), indent=2) + "\n",
            encoding="utf-8",
        )
        cmd = [sys.executable, "-m", "ordino.cli"]
        if args.single_thread:
            cmd.append("--single-thread")
        cmd += ["train", "--config", str(cfg_path),
                "--out", str(out_root / f"fold{fold}"), "--quiet"]
        pending.append((fold, cmd))
    jobs = max(1, args.jobs)
    failures = 0
    while pending:
        batch, pending = pending[:jobs], pending[jobs:]
        procs = [(fold, subprocess.Popen(cmd)) for fold, cmd in batch]
        for fold, proc in procs:
            if proc.wait() != 0:
                sys.stderr.write(
                    json.dumps({"error": "TrainFailed", "detail": f"fold {fold}"})
                    + "\n"
                )
                failures += 1
    print(json.dumps({"bundles": str(out_root), "folds": 5, "failed": failures}))
    return 1 if failures else 0


def cmd_train(args) -> int:
    from .errors import ConfigError
    from .report import plot_training_curves
    from .training import run_training

    exp = _experiment_from_args(args)
    if not exp.manifest:
        raise ConfigError("train needs a manifest (flag or config file)")
    if args.all_folds:
        return _train_all_folds(args, exp)
    result = run_training(exp, out_dir=args.out, quiet=args.quiet)
    if result.history and result.bundle_dir is not None:
        plot_training_curves(result.history, result.bundle_dir / "training_curves.png")
    last = result.history[-1] if result.history else {}
    print(
        json.dumps(
            {
                "bundle": str(args.out),
                "train_units": result.n_train_units,
                "epochs": len(result.history),
                "best_epoch": result.best_epoch,
                "train_acc_k": last.get("train_acc_k"),
                "val_acc_k": last.get("val_acc_k"),
            }
        )
    )
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_bundle
    from .report import render_report

    payload, report, _ = evaluate_bundle(
        args.bundle, manifest_path=args.manifest, fold=args.fold, subset=args.subset
    )
    written = render_report(payload, report, args.out, figures=not args.no_figures)
    print(
        json.dumps(
            {
                "report": str(written[0]),
                "acc_k": report.acc_k,
                "acc_3": report.acc_3,
                "acc_pm1": report.acc_pm1,
                "mse": report.mse,
                "undefined": report.undefined_count,
            }
        )
    )
    return 0


def cmd_ensemble(args) -> int:
    from .errors import ConfigError
    from .evaluation import ensemble_evaluate
    from .report import render_report

    bundles = [b for spec in args.bundles or [] for b in spec.split(",") if b]
    if args.spec:
        from pathlib import Path

        spec_path = Path(args.spec)
        obj = json.loads(spec_path.read_text(encoding="utf-8"))
        listed = obj.get("bundles")
        if not isinstance(listed, list) or not listed:
            raise ConfigError(f"{args.spec}: expected a non-empty 'bundles' list")
        # relative member paths resolve against the spec file
        for b in listed:
            p = Path(b)
            bundles.append(str(p if p.is_absolute() else spec_path.parent / p))
    if not bundles:
        raise ConfigError("ensemble needs --bundles or --spec")
    payload, report, _ = ensemble_evaluate(
        bundles, manifest_path=args.manifest, fold=args.fold, subset=args.subset
    )
    written = render_report(payload, report, args.out, figures=not args.no_figures)
    print(
        json.dumps(
            {
                "report": str(written[0]),
                "members": len(bundles),
                "acc_k": report.acc_k,
                "acc_pm1": report.acc_pm1,
                "mse": report.mse,
            }
        )
    )
    return 0


def _parse_embedding_args(specs):
    """--embedding virtuoso=f.pemb --embedding argnn.rh=r.pemb ..."""
    out: dict = {}
    for spec in specs or []:
        if "=" not in spec:
            raise ValueError(f"bad --embedding {spec!r}, expected name=path")
        name, path = spec.split("=", 1)
        if "." in name:
            rep, hand = name.split(".", 1)
            out.setdefault(rep, {})[hand] = path
        else:
            out[name] = path
    return out


def cmd_predict(args) -> int:
    from .evaluation import predict_score

    embeddings = _parse_embedding_args(args.embeddings)
    result = predict_score(
        args.bundle, args.score, embedding_paths=embeddings, top_attention=args.top
    )
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    from .verification import run_all_checks

    checks = run_all_checks(
        tolerance=args.tolerance, eps=args.eps, max_entries=args.max_entries
    )
    failed = 0
    for check in checks:
        print(check.line())
        if not check.report.passed:
            failed += 1
    print(f"{len(checks) - failed}/{len(checks)} configurations passed")
    return 1 if failed else 0


def cmd_synth_embed(args) -> int:
    from pathlib import Path

    from .ingest import CorpusManifest, parse_musicxml
    from .representations import save_embedding
    from .synthetic import synth_embedding

    manifest = CorpusManifest.load(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = _seed_fallback(args.seed) or 0
    manifest_dir = Path(args.manifest).resolve().parent
    for entry in manifest.entries:
        score = Path(entry.score_path)
        if not score.is_absolute():
            score = manifest_dir / score
        seq = parse_musicxml(score)
        made = synth_embedding(seq, args.rep, dim=args.dim, seed=seed)
        if args.rep == "argnn":
            right, left = made
            paths = {}
            for hand, matrix in (("rh", right), ("lh", left)):
                path = out_dir / f"{entry.piece_id}.argnn.{hand}.pemb"
                save_embedding(path, matrix)
                paths[hand] = os.path.relpath(path, manifest_dir)
            entry.embedding_paths["argnn"] = paths
        else:
            path = out_dir / f"{entry.piece_id}.{args.rep}.pemb"
            save_embedding(path, made)
            entry.embedding_paths[args.rep] = os.path.relpath(path, manifest_dir)
    target = args.update_manifest or args.manifest
    manifest.save(target)
    print(
        json.dumps(
            {"pieces": len(manifest.entries), "rep": args.rep, "manifest": str(target)}
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordino",
        description="Ordinal difficulty classification for symbolic piano scores",
    )
    parser.add_argument(
        "--single-thread",
        action="store_true",
        help="pin numeric libraries to one thread for bit-reproducible runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a score directory into a manifest")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write the five stratified fold plans")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--strategy", default="length_level",
                   choices=["length_level", "composer_level"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one classifier bundle")
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--out", required=True, help="bundle output directory")
    p.add_argument("--manifest", default=None)
    p.add_argument("--rep", default=None,
                   choices=["pitch", "argnn", "virtuoso", "virtuoso_enc", "fused"])
    p.add_argument("--loss", default=None,
                   choices=["nll", "regclass", "msmooth", "ordinal", "coral"])
    p.add_argument("--fusion", default=None,
                   choices=["none", "sync", "concat", "sum", "att", "int"])
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--split-strategy", dest="split_strategy", default=None,
                   choices=["length_level", "composer_level"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--clip", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--bidirectional", action="store_true",
                   help="run each GRU stack in both directions")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=None)
    p.add_argument("--fragment", action="store_true")
    p.add_argument("--fragment-window", dest="fragment_window", type=int, default=None)
    p.add_argument("--fragment-overlap", dest="fragment_overlap", type=float,
                   default=None)
    p.add_argument("--length-cap", dest="length_cap", type=int, default=None)
    p.add_argument("--group3", action="store_true",
                   help="train on three grouped levels instead of nine")
    p.add_argument("--pitch-embed-dim", dest="pitch_embed_dim", type=int, default=None)
    p.add_argument("--all-folds", dest="all_folds", action="store_true",
                   help="train every fold, one subprocess each")
    p.add_argument("--jobs", type=int, default=1,
                   help="concurrent fold processes with --all-folds")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a bundle on a split subset")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--subset", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ensemble", help="average multiple bundles' predictions")
    p.add_argument("--bundles", nargs="+", default=None,
                   help="bundle dirs (space or comma separated)")
    p.add_argument("--spec", default=None,
                   help="JSON file with a 'bundles' list of member paths")
    p.add_argument("--manifest", default=None)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--subset", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("predict", help="classify a single score file")
    p.add_argument("--bundle", required=True)
    p.add_argument("--score", required=True)
    p.add_argument("--embeddings", "--embedding", action="append", default=None,
                   help="name=path, e.g. virtuoso=x.pemb or argnn.rh=r.pemb")
    p.add_argument("--top", type=int, default=5, help="attention indices to report")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every configuration")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--max-entries", dest="max_entries", type=int, default=1000)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth-embed",
                       help="generate deterministic pseudo-embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rep", required=True,
                   choices=["argnn", "virtuoso", "virtuoso_enc"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--update-manifest", default=None,
                   help="write the updated manifest here instead of in place")
    p.set_defaults(func=cmd_synth_embed)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--single-thread" in argv:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ[var] = "1"
    parser = build_parser()
    args = parser.parse_args(argv)

    from .errors import ConfigError, DataError, OrdinoError

    try:
        return args.func(args)
    except (ConfigError, DataError, ValueError) as exc:
        return _fail(exc, 2)
    except FileNotFoundError as exc:
        return _fail(exc, 2)
    except OrdinoError as exc:
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
