"""Command-line interface: seeded, manifest-backed runs of every pipeline.

Each subcommand writes its outputs into a run directory (--out, or an
auto-named directory under $CHIMP_RUN_ROOT, default ./runs) together with a
manifest.json recording the exact arguments, seeds, input hashes, and library
versions, so a run can be re-executed from its manifest alone.

Exit codes: 0 success, 2 usage or input errors, 3 numeric failures (diverged
fit, gradient check over tolerance).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import NoiseSpec, generate, load_dataset_csv, save_dataset_csv
from .experiment import run_experiment1, target_measures
from .fusion import ingest_posteriors, run_fusion
from .integral import chi_sort_batch
from .measure import FuzzyMeasure, load_measure, make_special, save_measure
from .network import (
    ChimpParams,
    count_integrand_ops,
    flop_count,
    materialize,
    save_params,
)
from .training import NumericError, TrainConfig, grad_check, mse, sgd_fit
from .xai import build_report, render_report, report_to_json_dict, shapley_svg

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _run_dir(args, subcommand: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        root = Path(os.environ.get("CHIMP_RUN_ROOT", "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = root / f"{subcommand}-{stamp}"
        k = 0
        while path.exists():
            k += 1
            path = root / f"{subcommand}-{stamp}-{k}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


class _Manifest:
    """Run-directory writer; the directory appears on first output or close."""

    def __init__(self, args, subcommand: str):
        self._args = args
        self._subcommand = subcommand
        self._dir = None
        self.data = {
            "subcommand": subcommand,
            "argv": [str(a) for a in (args._argv or [])],
            "params": {k: v for k, v in vars(args).items()
                       if k not in ("func", "_argv") and not callable(v)},
            "versions": {
                "chimp": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "inputs": {},
            "outputs": [],
        }
        self._t0 = time.perf_counter()

    @property
    def dir(self) -> Path:
        if self._dir is None:
            self._dir = _run_dir(self._args, self._subcommand)
        return self._dir

    def add_input(self, path) -> None:
        self.data["inputs"][str(path)] = _sha256(Path(path))

    def out_path(self, name: str) -> Path:
        self.data["outputs"].append(name)
        return self.dir / name

    def close(self) -> None:
        self.data["duration_s"] = round(time.perf_counter() - self._t0, 6)
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(self.data, fh, indent=2, default=str)
            fh.write("\n")


def _parse_target(text: str) -> FuzzyMeasure:
    """Target measures: fm1..fm4 presets, kind:n specials, or a JSON path."""
    presets = {k.lower(): v for k, v in target_measures().items()}
    if text.lower() in presets:
        return presets[text.lower()]
    if ":" in text:
        kind, _, rest = text.partition(":")
        if kind == "los":
            weights = [float(x) for x in rest.split(",")]
            return make_special("los", len(weights), weights)
        return make_special(kind, int(rest))
    measure = load_measure(text)
    if not isinstance(measure, FuzzyMeasure):
        raise ValueError(f"{text} holds Mobius coefficients, not measure values")
    return measure


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_mode=args.batch_mode,
        momentum=args.momentum,
        init_low=args.init_low,
        init_high=args.init_high,
        seed=args.seed,
        trials=getattr(args, "trials", 1) or 1,
    )


def _add_train_flags(sub, epochs=1000, trials=None):
    sub.add_argument("--epochs", type=int, default=epochs)
    sub.add_argument("--lr", type=float, default=0.001)
    sub.add_argument("--batch-mode", choices=["per-sample", "full-batch"], default="per-sample")
    sub.add_argument("--momentum", type=float, default=0.9)
    sub.add_argument("--init-low", type=float, default=0.1)
    sub.add_argument("--init-high", type=float, default=0.2)
    if trials is not None:
        sub.add_argument("--trials", type=int, default=trials)


def cmd_generate(args) -> int:
    manifest = _Manifest(args, "generate")
    target = _parse_target(args.target)
    data = generate(target, args.m, NoiseSpec((args.noise_mult,), seed=args.noise_seed),
                    args.seed)
    save_dataset_csv(data, manifest.out_path("data.csv"))
    save_measure(target, manifest.out_path("target_measure.json"))
    manifest.close()
    print(f"wrote {len(data)} rows to {manifest.dir / 'data.csv'}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = _Manifest(args, "train")
    manifest.add_input(args.data)
    data = load_dataset_csv(args.data)
    cfg = _train_config(args)
    params, history = sgd_fit(data, cfg)
    learned = materialize(params).g
    save_params(params, manifest.out_path("params.json"))
    save_measure(learned, manifest.out_path("measure.json"))
    with open(manifest.out_path("history.csv"), "w") as fh:
        fh.write("epoch,train_mse\n")
        for epoch, value in enumerate(history):
            fh.write(f"{epoch},{value:.17e}\n")
    metrics = {
        "train_mse": history[-1],
        "test_mse": None,
        "fm_mse": None,
        "trial_seed": cfg.seed,
    }
    if args.test_data:
        manifest.add_input(args.test_data)
        test = load_dataset_csv(args.test_data)
        metrics["test_mse"] = _measure_mse(learned, test)
    if args.target_measure:
        manifest.add_input(args.target_measure)
        target = load_measure(args.target_measure)
        metrics["fm_mse"] = float(np.mean((learned.values[1:] - target.values[1:]) ** 2))
    with open(manifest.out_path("metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=2)
        fh.write("\n")
    manifest.close()
    print(f"final train MSE {history[-1]:.6e}; outputs in {manifest.dir}")
    return EXIT_OK


def _measure_mse(g: FuzzyMeasure, data) -> float:
    return mse(data.labels, chi_sort_batch(g, data.rows))


def cmd_eval(args) -> int:
    manifest = _Manifest(args, "eval")
    manifest.add_input(args.measure)
    manifest.add_input(args.data)
    g = load_measure(args.measure)
    if not isinstance(g, FuzzyMeasure):
        raise ValueError("eval needs a measure JSON with 'values'")
    data = load_dataset_csv(args.data)
    pred = chi_sort_batch(g, data.rows)
    with open(manifest.out_path("predictions.csv"), "w") as fh:
        fh.write("index,prediction,label\n")
        for i, (p, l) in enumerate(zip(pred, data.labels)):
            fh.write(f"{i},{p:.17e},{l:.17e}\n")
    with open(manifest.out_path("metrics.json"), "w") as fh:
        json.dump({"mse": mse(data.labels, pred), "m": len(data)}, fh, indent=2)
        fh.write("\n")
    manifest.close()
    print(f"MSE {mse(data.labels, pred):.6e} over {len(data)} rows; outputs in {manifest.dir}")
    return EXIT_OK


def cmd_explain(args) -> int:
    manifest = _Manifest(args, "explain")
    manifest.add_input(args.measure)
    manifest.add_input(args.data)
    g = load_measure(args.measure)
    if not isinstance(g, FuzzyMeasure):
        raise ValueError("explain needs a measure JSON with 'values'")
    data = load_dataset_csv(args.data)
    query = None
    if args.query_data:
        manifest.add_input(args.query_data)
        query = load_dataset_csv(args.query_data).rows
    report = build_report(g, data, query_rows=query,
                          dominant_threshold=args.dominant_threshold)
    with open(manifest.out_path("xai_report.json"), "w") as fh:
        json.dump(report_to_json_dict(report), fh, indent=2)
        fh.write("\n")
    if args.svg:
        manifest.out_path("shapley.svg").write_text(shapley_svg(report) + "\n")
    manifest.close()
    print(render_report(report))
    print(f"outputs in {manifest.dir}")
    return EXIT_OK


def cmd_exp1(args) -> int:
    manifest = _Manifest(args, "exp1")
    cfg = _train_config(args)
    noise = NoiseSpec(tuple(float(x) for x in args.noise_multipliers.split(",")),
                      seed=args.noise_seed)
    result = run_experiment1(cfg, noise, m_samples=args.m)
    result.to_csv(manifest.out_path("exp1_table.csv"))
    if result.failures:
        with open(manifest.out_path("failures.json"), "w") as fh:
            json.dump([list(f) for f in result.failures], fh)
            fh.write("\n")
    manifest.close()
    print(f"{len(result.fm_names)} measures x {len(result.multipliers)} noise levels x "
          f"{result.trials} trials; {len(result.failures)} failed fits; "
          f"table in {manifest.dir / 'exp1_table.csv'}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    manifest = _Manifest(args, "fuse")
    path = Path(args.posteriors)
    if path.is_file():
        manifest.add_input(path)
    task = ingest_posteriors(path)
    if args.mode != task.mode:
        task = dataclasses.replace(task, mode=args.mode)
    cfg = _train_config(args)
    result = run_fusion(task, cfg, n_folds=args.folds)
    with open(manifest.out_path("fusion_metrics.json"), "w") as fh:
        json.dump(result.to_json_dict(), fh, indent=2)
        fh.write("\n")
    reports = result.reports
    flat_reports = []
    for fold_report in reports:
        if isinstance(fold_report, list):
            flat_reports.append([report_to_json_dict(r) for r in fold_report])
        else:
            flat_reports.append(report_to_json_dict(fold_report))
    with open(manifest.out_path("xai_reports.json"), "w") as fh:
        json.dump(flat_reports, fh, indent=2)
        fh.write("\n")
    manifest.close()
    singles = ", ".join(f"{name} {a:.4f}"
                        for name, a in zip(result.model_names, result.single_accuracies))
    print(f"fused accuracy {result.mean_accuracy:.4f} +/- {result.sd_accuracy:.4f} "
          f"over {len(result.fold_accuracies)} folds; singles: {singles}")
    print(f"outputs in {manifest.dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(40,)))
    worst = 0.0
    worst_detail = None
    for case in range(args.cases):
        params = ChimpParams.random(args.n, 0.05, 0.5, rng)
        h = rng.uniform(-1.0, 1.0, args.n)
        label = rng.uniform(-1.0, 1.0)
        res = grad_check(params, h, label, eps=args.eps)
        if res.max_rel_err > worst:
            worst = res.max_rel_err
            worst_detail = (case, res.worst)
    ok = worst < args.tol
    print(f"max relative error {worst:.3e} over {args.cases} cases at n={args.n} "
          f"(worst: {worst_detail}); tolerance {args.tol:g}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_flops(args) -> int:
    counts = flop_count(args.n)
    rng = np.random.default_rng(args.seed)
    measured = count_integrand_ops(rng.uniform(-1, 1, args.n))
    print(f"n={args.n}: integrand ops formula {counts.o_cost}, measured {measured}; "
          f"measure-network bound {counts.g_cost}; combine {counts.dot_cost}")
    if measured != counts.o_cost:
        print("measured integrand cost disagrees with the closed form", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chimp",
                                     description="Choquet-integral fusion networks")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", help="synthetic dataset from a target measure")
    p.add_argument("--target", required=True,
                   help="fm1..fm4, kind:n (max/min/mean), los:w1,w2,..., or measure JSON path")
    p.add_argument("--m", type=int, default=300)
    p.add_argument("--noise-mult", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit the network to a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", default=None)
    p.add_argument("--target-measure", default=None)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a measure on a dataset CSV")
    p.add_argument("--measure", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)  # recorded in the manifest
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="introspection report for a measure + data")
    p.add_argument("--measure", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query-data", default=None)
    p.add_argument("--dominant-threshold", type=float, default=0.5)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--seed", type=int, default=0)  # recorded in the manifest
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("exp1", help="synthetic learning study over noise levels")
    _add_train_flags(p, trials=20)
    p.add_argument("--m", type=int, default=300)
    p.add_argument("--noise-multipliers", default="0,0.01,0.05,0.1,0.3,0.5")
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_exp1)

    p = sub.add_parser("fuse", help="decision-level fusion of model posteriors")
    p.add_argument("--posteriors", required=True,
                   help="directory of per-model CSVs or a JSON bundle")
    p.add_argument("--mode", choices=["shared", "per-class"], default="shared")
    p.add_argument("--folds", type=int, default=3)
    _add_train_flags(p, epochs=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("flops", help="elementary-operation counts of the network")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_flops)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return int(exc.code or 0)
    args._argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
