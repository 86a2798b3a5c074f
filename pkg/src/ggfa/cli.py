"""Command-line interface: ``ggfa <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .biplot import biplot_data, write_biplot_csv, write_biplot_svg
from .canon import canonicalize, communalities_from_norms
from .core import CapacityError, Dataset, DegenerateCorrelationError, factor_scores, sample
from .fit import FitConfig, FitError, bic_scan, fit
from .io import DataError, ModelFile, load_csv, load_model, save_model, write_csv, write_schema, write_table
from .synth import (
    MODELS,
    SamplingDistSpec,
    SynthSpec,
    iter_mixed_datasets,
    run_reproducibility_experiment,
    run_sampling_distribution,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError(f"values must be >= 1, got {text!r}")
    return vals


def _axes(text: str) -> tuple[int, int]:
    vals = _int_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("--axes takes two indices, e.g. 1,2")
    return vals


def _arrow_scale(text: str):
    if text == "auto":
        return text
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--arrow-scale is 'auto' or a positive number") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("--arrow-scale must be positive")
    return v


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _add_data(p, schema_required=True):
    p.add_argument("--data", required=True, help="data CSV (header row, empty cell = missing)")
    p.add_argument("--schema", required=schema_required, help="schema CSV with header name,kind")
    p.add_argument("--log-columns", type=_names, default=(), help="continuous columns to log-transform")


def _add_fit_opts(p, restarts=100):
    p.add_argument("--restarts", type=_positive_int, default=restarts)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=_positive_int, default=2000)


def _add_synth_opts(p):
    d = SynthSpec()
    p.add_argument("--p-cont", type=int, default=d.p_cont)
    p.add_argument("--p-bin", type=int, default=d.p_bin)
    p.add_argument("--n", type=_positive_int, default=d.n)
    p.add_argument("--n-datasets", type=_positive_int, default=d.n_datasets)
    p.add_argument("--gamma-shape", type=float, default=d.gamma_shape)
    p.add_argument("--gamma-rate", type=float, default=d.gamma_rate)
    p.add_argument("--min-xy-corr", type=float, default=d.min_xy_corr)
    p.add_argument("--min-yy-corr", type=float, default=d.min_yy_corr)
    p.add_argument("--seed", type=int, default=d.seed)


def _synth_spec(a) -> SynthSpec:
    try:
        return SynthSpec(
            a.p_cont, a.p_bin, a.n, a.n_datasets, a.gamma_shape, a.gamma_rate, a.seed, a.min_xy_corr, a.min_yy_corr
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config(a) -> FitConfig:
    return FitConfig(n_restarts=a.restarts, seed=a.seed, max_iters=a.max_iters)


def _load_data(a) -> Dataset:
    return load_csv(a.data, a.schema, a.log_columns)


def _check_schema(mf: ModelFile, data: Dataset) -> None:
    if mf.schema.columns != data.schema.columns:
        raise DataError("data schema does not match the model's schema")


def _say(*args):
    print(*args, flush=True)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_fit(a) -> int:
    data = _load_data(a)
    res = fit(data, a.latent_dims, _config(a))
    cm = canonicalize(res.params)
    params = cm.params if a.canonical else res.params
    meta = {
        "log_lik": res.log_lik,
        "bic": res.bic,
        "n_params": res.n_params,
        "n_obs": res.n_obs,
        "seed": a.seed,
        "restarts": a.restarts,
        "best_restart": res.best_restart,
        "converged": res.converged,
    }
    save_model(ModelFile(data.schema, params, a.canonical, meta), a.out)
    h = float(communalities_from_norms([params.c])[0])
    _say(f"log_lik {res.log_lik:.6f}")
    _say(f"bic {res.bic:.6f}")
    _say(f"n_params {res.n_params}")
    _say(f"c {params.c:.6f}")
    _say(f"communality {h:.6f}")
    _say("contribution_ratios " + " ".join(f"{v:.6f}" for v in cm.P))
    _say("cumulative_ratios " + " ".join(f"{v:.6f}" for v in cm.C))
    if res.floor_active:
        _say("warning: unique-variance floor active")
    _say(f"model written to {a.out}")
    return EXIT_OK


def cmd_bic_scan(a) -> int:
    if a.min_dims > a.max_dims:
        raise UsageError("--min-dims must not exceed --max-dims")
    data = _load_data(a)
    scan = bic_scan(data, range(a.min_dims, a.max_dims + 1), _config(a))
    rows = [
        {"p_z": r.p_z, "log_lik": r.log_lik, "bic": r.bic, "n_params": r.n_params, "error": r.error}
        for r in scan.rows
    ]
    write_table(rows, a.out, ["p_z", "log_lik", "bic", "n_params", "error"])
    for r in scan.rows:
        _say(f"p_z {r.p_z}: bic {r.bic:.6f}" + (f" ({r.error})" if r.error else ""))
    if scan.best_p_z is None:
        raise FitError("every latent dimension failed to fit")
    _say(f"chosen p_z {scan.best_p_z}")
    return EXIT_OK


def cmd_score(a) -> int:
    mf = load_model(a.model)
    data = _load_data(a)
    _check_schema(mf, data)
    if not data.is_complete:
        raise DataError("scoring needs complete rows; drop or impute rows with missing cells")
    params = mf.params
    m = factor_scores(params, data.x, data.y)
    cols = [f"z{k + 1}" for k in range(params.p_z)]
    write_table([{"row": i, **dict(zip(cols, r))} for i, r in enumerate(m)], a.out, ["row"] + cols)
    cov_out = a.cov_out or str(Path(a.out).with_suffix("")) + "_cov.csv"
    write_table([dict(zip(cols, r)) for r in params.posterior_cov], cov_out, cols)
    _say(f"{len(m)} scores written to {a.out}; posterior covariance to {cov_out}")
    return EXIT_OK


def cmd_simulate(a) -> int:
    mf = load_model(a.model)
    data = sample(mf.params, a.n, a.seed, mf.schema)
    write_csv(data, a.out)
    schema_out = a.schema_out or str(Path(a.out).with_suffix("")) + "_schema.csv"
    write_schema(data.schema, schema_out)
    _say(f"{a.n} rows written to {a.out}; schema to {schema_out}")
    return EXIT_OK


def cmd_synth(a) -> int:
    spec = _synth_spec(a)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    schema_written = False
    for d, (data, truth) in iter_mixed_datasets(spec):
        if not schema_written:
            write_schema(data.schema, out / "schema.csv")
            schema_written = True
        name = f"dataset_{d:04d}.csv"
        write_csv(data, out / name)
        row = {"dataset": d, "file": name, "attempts": truth.attempts}
        for k, (u, t) in enumerate(zip(truth.quantiles, truth.thresholds)):
            row[f"u{k + 1}"] = u
            row[f"threshold{k + 1}"] = t
        rows.append(row)
    write_table(rows, out / "manifest.csv")
    _say(f"{len(rows)} datasets written to {out}")
    return EXIT_OK


def cmd_compare_quant(a) -> int:
    spec = _synth_spec(a)
    cfg = _config(a)
    report = run_reproducibility_experiment(
        spec, a.latent_dims, cfg, full_dims=a.full_dims, keep_pairs=a.pairs_out is not None
    )
    write_table(report.summary, a.out, ["dataset", "model", "p_z", "r2"])
    if a.pairs_out:
        write_table(report.pairs, a.pairs_out)
    if report.failures:
        fail_out = str(Path(a.out).with_suffix("")) + "_failures.csv"
        write_table(report.failures, fail_out, ["dataset", "model", "p_z", "error"])
        _say(f"{len(report.failures)} failures recorded in {fail_out}")
    for p_z in a.latent_dims:
        _say(f"p_z {p_z}: " + "  ".join(f"{m} {report.mean_r2(m, p_z):.4f}" for m in MODELS))
    return EXIT_OK


def cmd_sampling_dist(a) -> int:
    mf = load_model(a.model)
    spec = SamplingDistSpec(
        mf.params, a.sizes, a.replicates, a.seed, FitConfig(n_restarts=a.restarts, max_iters=a.max_iters)
    )
    res = run_sampling_distribution(spec)
    rows = []
    for n in res.sizes:
        for rep, est in enumerate(res.estimates[n]):
            rows.append({"size": n, "replicate": rep, **dict(zip(res.names, est))})
    write_table(rows, a.out, ["size", "replicate"] + res.names)
    mae = res.median_abs_error()
    summary = [
        {"parameter": name, "truth": t, **{f"median_abs_error_{n}": mae[i, j] for i, n in enumerate(res.sizes)}}
        for j, (name, t) in enumerate(zip(res.names, res.truth))
    ]
    summary_out = a.summary_out or str(Path(a.out).with_suffix("")) + "_summary.csv"
    write_table(summary, summary_out)
    dec = np.all(np.diff(mae, axis=0) < 0, axis=0)
    _say(f"estimates written to {a.out}; summary to {summary_out}")
    _say(f"median abs error decreasing for {dec.sum()}/{dec.size} parameters")
    if res.failures:
        _say(f"{len(res.failures)} replicate fits failed")
    return EXIT_OK


def cmd_biplot(a) -> int:
    if not (a.svg or a.csv):
        raise UsageError("give --svg and/or --csv")
    mf = load_model(a.model)
    data = _load_data(a)
    _check_schema(mf, data)
    cm = canonicalize(mf.params)
    if not mf.canonical:
        _say("note: model was not stored in canonical form; canonicalizing first")
    p_z = mf.params.p_z
    if max(a.axes) > p_z or a.axes[0] == a.axes[1]:
        raise UsageError(f"--axes must be two distinct indices in 1..{p_z}")
    if a.color_by is not None and a.color_by not in data.schema.continuous_names:
        raise UsageError(f"--color-by {a.color_by!r} is not a continuous column")
    bp = biplot_data(cm, data, a.axes, a.color_by, a.arrow_scale)
    if a.csv:
        write_biplot_csv(bp, a.csv)
    if a.svg:
        write_biplot_svg(bp, a.svg)
    _say(f"axes {bp.labels[0]}, {bp.labels[1]}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser and entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ggfa", description="Factor analysis for mixed continuous and binary data.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write a model file")
    _add_data(p)
    p.add_argument("--latent-dims", type=_positive_int, required=True)
    _add_fit_opts(p)
    p.add_argument("--out", required=True)
    p.add_argument("--canonical", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bic-scan", help="BIC over a range of latent dimensions")
    _add_data(p)
    p.add_argument("--min-dims", type=_positive_int, default=1)
    p.add_argument("--max-dims", type=_positive_int, required=True)
    _add_fit_opts(p)
    p.add_argument("--out", required=True, help="CSV table: p_z,log_lik,bic,n_params,error")
    p.set_defaults(func=cmd_bic_scan)

    p = sub.add_parser("score", help="factor scores for each row")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--out", required=True, help="CSV: row,z1..zK")
    p.add_argument("--cov-out", help="posterior covariance CSV (default <out>_cov.csv)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("simulate", help="sample a dataset from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", help="schema sidecar path (default <out>_schema.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth", help="write synthetic dichotomized-normal datasets")
    _add_synth_opts(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compare-quant", help="correlation reproducibility against the quantification baseline")
    _add_synth_opts(p)
    p.add_argument("--latent-dims", type=_int_list, default=(1, 2, 3))
    p.add_argument("--full-dims", type=_positive_int, default=None)
    p.add_argument("--restarts", type=_positive_int, default=5)
    p.add_argument("--max-iters", type=_positive_int, default=2000)
    p.add_argument("--out", required=True, help="CSV: dataset,model,p_z,r2")
    p.add_argument("--pairs-out", help="per-pair CSV of empirical vs model correlations")
    p.set_defaults(func=cmd_compare_quant)

    p = sub.add_parser("sampling-dist", help="sampling distribution of estimates from a truth model")
    p.add_argument("--model", required=True, help="truth model file")
    p.add_argument("--sizes", type=_int_list, default=(1000, 3000, 9000))
    p.add_argument("--replicates", type=_positive_int, default=1000)
    p.add_argument("--restarts", type=_positive_int, default=5)
    p.add_argument("--max-iters", type=_positive_int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--summary-out")
    p.set_defaults(func=cmd_sampling_dist)

    p = sub.add_parser("biplot", help="static SVG and CSV biplot")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--axes", type=_axes, default=(1, 2))
    p.add_argument("--color-by")
    p.add_argument("--arrow-scale", type=_arrow_scale, default="auto")
    p.add_argument("--svg")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_biplot)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ggfa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, FloatingPointError, np.linalg.LinAlgError, DegenerateCorrelationError) as exc:
        print(f"ggfa {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CapacityError, OSError, ValueError) as exc:
        print(f"ggfa {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
