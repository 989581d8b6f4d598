"""Command-line entry point: ``correct``, ``synth``, ``eval`` and ``verify-theory``.

Exit codes: 0 success, 2 bad input (validation or unreadable files),
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from contextlib import nullcontext
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import (
    HyperParams,
    dense_to_bala1,
    read_profile_csv,
    write_bytes,
    write_matrix_csv,
    write_profile_csv,
)
from .errors import NumericError, ValidationError
from .metrics import MetricConfig, evaluate
from .pipeline import correct
from .preprocess import ControlMask, PreprocessConfig
from .synthetic import BlockModelSpec, GmmSpec, generate_block_affinity, generate_gmm
from . import theory

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

# resolved-config keys for ``correct`` and their defaults
CORRECT_DEFAULTS = {
    "batch_col": None,
    "label_col": None,
    "k": 5,
    "tau": 50,
    "block_len": 50,
    "pca": None,
    "seed": 0,
    "delta_against": "cumulative",
    "var_filter": None,
    "mad_normalize": False,
    "int": False,
    "corr_filter": None,
    "control_col": None,
    "control_value": "1",
    "group_col": None,
    "threads": None,
}


class CliError(ValidationError):
    pass


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _threads(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """CLI flags override the JSON ``--config`` file, which overrides defaults."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        try:
            from_file = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"--config: invalid JSON ({exc})") from None
        unknown = set(from_file) - set(defaults)
        if unknown:
            raise CliError(f"--config: unknown keys {sorted(unknown)}")
        resolved.update(from_file)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


# ---------------------------------------------------------------------------
# correct
# ---------------------------------------------------------------------------


def cmd_correct(args) -> int:
    cfg = resolve_config(args, CORRECT_DEFAULTS)
    if not cfg["batch_col"]:
        raise CliError("--batch-col is required (flag or config file)")
    extra = [c for c in (cfg["control_col"], cfg["group_col"]) if c]
    try:
        table = read_profile_csv(args.input, cfg["batch_col"], cfg["label_col"], extra)
    except ValidationError as exc:
        if cfg["batch_col"] in str(exc) and "not found" in str(exc):
            raise CliError(f"--batch-col {cfg['batch_col']!r}: column not found in {args.input}") from None
        raise
    params = HyperParams(
        k=cfg["k"],
        tau=cfg["tau"],
        block_len=cfg["block_len"],
        pca_dims=cfg["pca"],
        seed=cfg["seed"],
        delta_against=cfg["delta_against"],
    )
    prep = PreprocessConfig(
        var_filter=cfg["var_filter"],
        mad_normalize=bool(cfg["mad_normalize"]),
        int_transform=bool(cfg["int"]),
        corr_filter=cfg["corr_filter"],
    )
    controls = None
    if cfg["control_col"]:
        flags = np.array([v == str(cfg["control_value"]) for v in table.annotations[cfg["control_col"]]])
        groups = (
            np.array(table.annotations[cfg["group_col"]])
            if cfg["group_col"]
            else np.zeros(flags.size, dtype=np.int64)
        )
        controls = ControlMask(flags, groups)

    on_step = None
    if args.trace:
        def on_step(event):
            sys.stderr.write(json.dumps(event, sort_keys=True) + "\n")

    start = time.perf_counter()
    with _threads(cfg["threads"]):
        result = correct(table.features, table.batches, params, prep, controls, on_step)
    wall = time.perf_counter() - start

    write_profile_csv(args.output, table, result.corrected.data, keep=result.kept)
    if args.dump_rows:
        write_bytes(args.dump_rows, result.rows.to_bytes())
    metadata = {
        "n": table.features.n,
        "m": result.m,
        "uncovered": result.uncovered,
        "wall_time": wall,
        "timing": result.timing,
        "seed": params.seed,
        "config": cfg,
        "features_kept": [table.feature_names[j] for j in result.kept],
    }
    _write_json(args.metadata or f"{args.output}.json", metadata)
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.block_model:
        if not args.sizes or not args.affinities:
            raise CliError("--block-model needs --sizes and --affinities")
        spec = BlockModelSpec(tuple(_ints(args.sizes)), tuple(_floats(args.affinities)), args.lam, args.seed, args.shuffle)
        model = generate_block_affinity(spec)
        if args.format == "bala1":
            write_bytes(args.output, dense_to_bala1(model.matrix))
        else:
            write_matrix_csv(args.output, model.matrix)
        if args.labels_out:
            Path(args.labels_out).write_text("\n".join(str(c + 1) for c in model.labels) + "\n")
        return EXIT_OK
    spec = GmmSpec(
        L=args.L,
        B=args.B,
        d=args.d,
        n_per=args.n_per,
        sigma_label=args.sigma_label,
        sigma_batch=args.sigma_batch,
        sigma_noise=args.sigma_noise,
        seed=args.seed,
        shuffle=args.shuffle,
    )
    data = generate_gmm(spec)
    header = [f"f{j}" for j in range(spec.d)] + ["batch", "label"]
    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row, b, l in zip(data.profiles.data, data.batches.labels, data.labels.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(b), int(l)])
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    table = read_profile_csv(args.input, args.batch_col, args.label_col)
    config = MetricConfig(args.neighborhood, args.alpha, args.seed)
    with _threads(args.threads):
        report = evaluate(table.features, table.batches, table.labels, config)
    payload = report.to_dict()
    payload["config"] = asdict(config)
    _write_json(args.output, payload)
    if args.csv_row:
        scores = report.scores()
        path = Path(args.csv_row)
        fresh = not path.exists() or path.stat().st_size == 0
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(["name", *scores])
            writer.writerow([args.name or Path(args.input).stem, *(repr(v) for v in scores.values())])
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-theory
# ---------------------------------------------------------------------------


def cmd_verify_theory(args) -> int:
    if args.experiment == "runtime":
        template = GmmSpec(L=args.L, B=args.B, d=args.d, seed=args.seed)
        table = theory.run_runtime_experiment(_ints(args.n_values), template, repeats=args.repeats)
        rows = theory.runtime_to_dicts(table)
        payload = {"experiment": "runtime", "rows": rows, "ratios": theory.runtime_ratios(table)}
        csv_header = ["n", "wall_time", "m"]
        csv_rows = [[r["n"], repr(r["wall_time"]), repr(r["m"])] for r in rows]
    else:
        sizes = tuple(_ints(args.sizes))
        spec = BlockModelSpec(sizes, tuple(_floats(args.affinities)), args.lam, args.seed)
        if args.experiment == "coverage":
            result = theory.run_coverage_experiment(spec, args.t, args.m, args.trials, args.sampler)
            payload = {"experiment": "coverage", **result.to_dict()}
            csv_header = ["trial", *(f"T{k + 1}" for k in range(spec.K)), "success"]
            csv_rows = [[i, *row, int(ok)] for i, (row, ok) in enumerate(zip(result.counts.tolist(), result.success))]
        else:
            rank = None if args.full_rank else -1
            result = theory.run_spectral_experiment(
                spec, _ints(args.t_values), args.trials, rank=rank, mode=args.mode, C=args.C
            )
            payload = {"experiment": "spectral", "lam": spec.lam, **result.to_dict()}
            csv_header = ["t", "median_error", "median_centered_error", "median_m"]
            d = result.to_dict()
            csv_rows = [
                [t, repr(e), repr(c), repr(m)]
                for t, e, c, m in zip(d["t_values"], d["median_error"], d["median_centered_error"], d["median_m"])
            ]
    _write_json(args.output, payload)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(csv_header)
            writer.writerows(csv_rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="batchsmooth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("correct", help="batch-correct a profile CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--metadata", help="run metadata JSON (default: OUTPUT.json)")
    p.add_argument("--config", help="JSON file of defaults; flags take precedence")
    p.add_argument("--batch-col", dest="batch_col")
    p.add_argument("--label-col", dest="label_col", help="carried through untouched")
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--block-len", dest="block_len", type=int)
    p.add_argument("--pca", type=int, help="compute affinities on this many principal components")
    p.add_argument("--seed", type=int)
    p.add_argument("--delta-against", dest="delta_against", choices=("cumulative", "block"))
    p.add_argument("--var-filter", dest="var_filter", type=float, help="control MAD/|median| threshold")
    p.add_argument("--mad-normalize", dest="mad_normalize", action="store_true", default=None)
    p.add_argument("--int", action="store_true", default=None, help="rank-based inverse normal transform")
    p.add_argument("--corr-filter", dest="corr_filter", type=float, help="|r| threshold")
    p.add_argument("--control-col", dest="control_col")
    p.add_argument("--control-value", dest="control_value")
    p.add_argument("--group-col", dest="group_col", help="per-group control statistics (e.g. plate)")
    p.add_argument("--threads", type=int)
    p.add_argument("--trace", action="store_true", help="JSON lines per sampling step on stderr")
    p.add_argument("--dump-rows", dest="dump_rows", help="write sampled rows in BALA1 format")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("synth", help="generate synthetic data")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffle", action="store_true")
    p.add_argument("--L", type=int, default=10)
    p.add_argument("--B", type=int, default=5)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--n-per", dest="n_per", type=int, default=20)
    p.add_argument("--sigma-label", dest="sigma_label", type=float, default=1.0)
    p.add_argument("--sigma-batch", dest="sigma_batch", type=float, default=0.5)
    p.add_argument("--sigma-noise", dest="sigma_noise", type=float, default=0.1)
    p.add_argument("--block-model", dest="block_model", action="store_true")
    p.add_argument("--sizes", help="comma-separated cluster sizes")
    p.add_argument("--affinities", help="comma-separated block affinities")
    p.add_argument("--lam", type=float, default=0.0, help="noise rate (0 = noiseless)")
    p.add_argument("--format", choices=("csv", "bala1"), default="csv")
    p.add_argument("--labels-out", dest="labels_out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a profile CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--batch-col", dest="batch_col", required=True)
    p.add_argument("--label-col", dest="label_col", required=True)
    p.add_argument("--neighborhood", type=int, default=30)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.add_argument("--csv-row", dest="csv_row", help="append a score row to this CSV")
    p.add_argument("--name", help="row name for --csv-row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify-theory", help="Monte Carlo theory checks on synthetic models")
    p.add_argument("--experiment", choices=("coverage", "spectral", "runtime"), required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--csv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="910,10,10,10,10,10,10,10,10,10")
    p.add_argument("--affinities", default="1,1,1,1,1,1,1,1,1,1")
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--t", type=int, default=3)
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--sampler", choices=("adaptive", "uniform"), default="adaptive")
    p.add_argument("--t-values", dest="t_values", default="4,8,16,32,64")
    p.add_argument("--mode", choices=("stopped", "draws"), default="stopped")
    p.add_argument("--C", type=float, default=2.0)
    p.add_argument("--full-rank", dest="full_rank", action="store_true", help="keep every core singular value above the cutoff")
    p.add_argument("--n-values", dest="n_values", default="5000,10000,20000,40000")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--L", type=int, default=10)
    p.add_argument("--B", type=int, default=5)
    p.add_argument("--d", type=int, default=10)
    p.set_defaults(func=cmd_verify_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
