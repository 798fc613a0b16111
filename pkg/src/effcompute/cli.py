"""Command-line entry point: ``effcompute {validate,fit,loocv,analyze,synth}``.

Reports are JSON with sorted keys and no timestamps, so a rerun with the same
input and seed reproduces the same bytes. Timing goes to stderr only.

Exit codes: 0 ok, 2 input error, 3 fit failure, 4 analysis error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .analysis import (
    QUANTILE_PROBS,
    AnalysisError,
    LawConstants,
    bootstrap_doubling_times,
    cutoff_analysis,
    default_laws,
    doubling_times_closed_form,
    doubling_times_optimal_scaling,
    effective_gain,
    kaplan_chinchilla_ceg,
    shapley_attribution,
    transformer_ceg,
)
from .cluster_mle import fit_clustered
from .dataset import DATA_MODES, Dataset, DatasetError, IngestOptions, cap_per_paper, load_dataset, read_records, write_csv, generate_synthetic
from .fit import DEFAULT_STARTS, FitResult, bootstrap, bootstrap_sd, evaluable_subset, quantiles
from .model_select import FOLD_STARTS, loocv
from .zoo import DELTA_GRID, MODEL_IDS, ModelSpec, param_template

logger = logging.getLogger("effcompute")

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_ANALYSIS = 0, 2, 3, 4

# Point estimates of the main model (model 7) on the public dataset; used as
# the default truth for `synth`.
REFERENCE_THETA = {
    "alpha_const": 0.913,
    "alpha_const_PTB": 0.0,
    "alpha_const_WT2": 0.055,
    "alpha_year": 0.004,
    "alpha_param": 0.068,
    "beta_const": 0.771,
    "beta_const_PTB": 0.176,
    "beta_const_WT2": 0.095,
    "beta_year": 0.036,
    "beta_data": 0.040,
}


class CliError(Exception):
    def __init__(self, message: str, code: int, report: dict | None = None):
        super().__init__(message)
        self.code = code
        self.report = report


# --------------------------------------------------------------------------
# Report plumbing
# --------------------------------------------------------------------------


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _sanitize(obj: Any, path: str, bad: list[str]) -> Any:
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        bad.append(path)
        return None
    if isinstance(obj, dict):
        return {str(k): _sanitize(v, f"{path}.{k}" if path else str(k), bad) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v, f"{path}[{i}]", bad) for i, v in enumerate(obj)]
    if hasattr(obj, "item"):  # numpy scalar
        return _sanitize(obj.item(), path, bad)
    return obj


def render_json(report: dict) -> str:
    """Canonical JSON; non-finite numbers become null and are listed."""
    bad: list[str] = []
    clean = _sanitize(report, "", bad)
    if bad:
        clean["non_finite_fields"] = sorted(set(bad))
    return json.dumps(clean, sort_keys=True, indent=2, allow_nan=False) + "\n"


def base_report(command: str, args: argparse.Namespace) -> dict:
    report: dict[str, Any] = {"tool": "effcompute", "version": __version__, "command": command, "warnings": []}
    if hasattr(args, "seed"):
        report["seed"] = args.seed
    inp = getattr(args, "input", None)
    if inp:
        report["input"] = {"path": Path(inp).name, "sha256": file_digest(inp)}
    return report


def _table(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


def _num(x: Any, fmt: str = ".4g") -> str:
    if x is None:
        return "-"
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("nan" if math.isnan(x) else "-inf")
    return format(x, fmt)


def render_text(report: dict) -> str:
    """Aligned plain-text rendering of the main report sections."""
    out = [f"effcompute {report['version']}  {report['command']}  seed={report.get('seed', '-')}"]
    if "counts" in report:
        out.append(_table([[k, str(v)] for k, v in sorted(report["counts"].items())]))
        for d in report.get("diagnostics", []):
            out.append(f"line {d['line']} ({d['model_name']}): {d['reason']}")
    fit = report.get("fit")
    if fit:
        out.append(f"\nmodel {fit['model']}  delta={fit['delta']}  n={fit['n_used']}  mse={_num(fit['mse'])}")
        boot = report.get("bootstrap", {})
        sd = boot.get("sd", {})
        qs = boot.get("quantiles", {})
        rows = [["Parameter", "Estimate", "SE", "2.5%", "97.5%"]]
        for name, value in fit["theta"].items():
            q = qs.get(name, [None, None, None])
            rows.append([name, _num(value, ".3f"), _num(sd.get(name), ".3f"), _num(q[0], ".3f"), _num(q[-1], ".3f")])
        out.append(_table(rows))
    dt = report.get("doubling_times")
    if dt:
        rows = [["Doubling time (months)", "Point", "2.5%", "50%", "97.5%"]]
        for key in ("t_n", "t_d", "t_c"):
            q = dt.get("quantiles", {}).get(key, [None, None, None])
            rows.append([key, _num(dt.get(key), ".2f")] + [_num(v, ".2f") for v in q])
        out.append("\n" + _table(rows))
    if "loocv_text" in report:
        out.append("\n" + report["loocv_text"])
    for key in ("shapley", "ceg_transformer", "ceg_chinchilla", "cutoff", "gain"):
        if key in report:
            out.append(f"\n{key}: " + json.dumps(_sanitize(report[key], "", []), sort_keys=True))
    for w in report.get("warnings", []):
        out.append(f"warning: {w}")
    return "\n".join(out) + "\n"


def emit(report: dict, args: argparse.Namespace) -> None:
    text = render_text(report) if getattr(args, "text", False) else render_json(report)
    out = getattr(args, "output", None)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# Shared steps
# --------------------------------------------------------------------------


def _load(args: argparse.Namespace) -> Dataset:
    try:
        ds = load_dataset(args.input, IngestOptions(reference_year=getattr(args, "reference_year", None)))
    except DatasetError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    cap = getattr(args, "cap_per_paper", None)
    if cap:
        ds = cap_per_paper(ds, cap)
    return ds


def _spec(args: argparse.Namespace, model: int | str | None = None, **extra) -> ModelSpec:
    try:
        return ModelSpec(
            args.model if model is None else model,
            args.delta,
            data_mode=getattr(args, "data_mode", None),
            **extra,
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc


def _fit_point(spec: ModelSpec, ds: Dataset, args: argparse.Namespace, report: dict) -> tuple[Dataset, FitResult]:
    try:
        sub = evaluable_subset(spec, ds)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    if len(sub) < len(ds):
        report["warnings"].append(f"{len(ds) - len(sub)} records not evaluable under model {spec.label} were dropped")
    try:
        if getattr(args, "cluster", False):
            res = fit_clustered(spec, sub, args.seed, n_starts=args.starts)
        else:
            from .fit import fit

            res = fit(spec, sub, args.seed, n_starts=args.starts)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_FIT, report) from exc
    report["fit"] = {
        "model": spec.model,
        "delta": spec.delta,
        "data_mode": spec.effective_data_mode,
        "method": "clustered_mle" if getattr(args, "cluster", False) else "least_squares",
        "theta": res.theta,
        "objective": res.objective,
        "mse": res.mse,
        "mse_unit": "nats^2",
        "n_used": res.n_used,
        "converged": res.converged,
        "n_starts": res.n_restarts_used,
        "norms": {"n0_params": sub.n0, "d0_tokens": sub.d0, "y0_year": sub.y0},
    }
    if not res.converged:
        raise CliError("optimizer did not converge from any start", EXIT_FIT, report)
    return sub, res


def _bootstrap(spec: ModelSpec, ds: Dataset, point: FitResult, args: argparse.Namespace, report: dict):
    b = args.bootstrap
    if not b:
        return None
    ens = bootstrap(
        spec,
        ds,
        b,
        args.seed,
        cluster_by_paper=args.cluster,
        method="mle" if args.cluster else "ls",
        n_starts=args.boot_starts,
        initial=[point.theta],
        threads=args.threads,
    )
    section: dict[str, Any] = {"b": ens.b, "n_failed": ens.n_failed, "resampling": "paper" if args.cluster else "record"}
    if ens.n_failed:
        report["warnings"].append(f"{ens.n_failed} of {ens.b} bootstrap replicates failed")
    if ens.converged:
        section["quantile_probs"] = list(QUANTILE_PROBS)
        section["quantiles"] = {k: quantiles(ens, lambda t, k=k: t[k], QUANTILE_PROBS) for k in point.theta}
        section["sd"] = bootstrap_sd(ens)
    report["bootstrap"] = section
    return ens if ens.converged else None


def _doubling_section(spec: ModelSpec, ds: Dataset, point: FitResult, ens, args, report: dict) -> None:
    if not spec.has_progress:
        report["warnings"].append(f"model {spec.label} has no algorithmic progress; no doubling times")
        return
    theta = point.theta
    try:
        if ens is not None:
            dt = bootstrap_doubling_times(theta, ens, spec=spec, benchmark=args.benchmark)
        else:
            dt = doubling_times_closed_form(theta, spec=spec, benchmark=args.benchmark)
        section = dt.to_dict()
        section["method"] = "closed_form"
    except AnalysisError:
        section = {"method": "optimal_scaling", "unit": "months"}
        try:
            section["c_budget_flop"] = args.budget
            section["t_c"] = doubling_times_optimal_scaling(spec, theta, args.benchmark, args.budget, norms=ds.norms)
        except (AnalysisError, ValueError) as exc:
            report["warnings"].append(f"doubling times unavailable: {exc}")
            return
    section["benchmark"] = args.benchmark
    report["doubling_times"] = section


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        records, diagnostics, n_excluded = read_records(args.input)
    except DatasetError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    report = base_report("validate", args)
    report["counts"] = {
        "valid": len(records),
        "invalid": len(diagnostics),
        "excluded_by_flag": n_excluded,
        "papers": len({r.paper_id for r in records}),
    }
    report["diagnostics"] = [{"line": d.line, "model_name": d.model_name, "reason": d.reason} for d in diagnostics]
    emit(report, args)
    return EXIT_OK if records else EXIT_INPUT


def cmd_fit(args: argparse.Namespace) -> int:
    report = base_report("fit", args)
    ds = _load(args)
    spec = _spec(args)
    sub, point = _fit_point(spec, ds, args, report)
    ens = _bootstrap(spec, sub, point, args, report)
    _doubling_section(spec, sub, point, ens, args, report)
    emit(report, args)
    return EXIT_OK


def _parse_list(text: str, conv) -> list:
    return [conv(t) for t in text.split(",") if t.strip()]


def cmd_loocv(args: argparse.Namespace) -> int:
    report = base_report("loocv", args)
    ds = _load(args)
    if args.grid == "default":
        models, deltas = list(MODEL_IDS), list(DELTA_GRID)
    else:
        if not args.models:
            raise CliError("--grid custom needs --models", EXIT_INPUT)
        models = _parse_list(args.models, lambda t: int(t) if t.strip().isdigit() else t.strip())
        deltas = _parse_list(args.deltas, float) if args.deltas else [0.0]
    try:
        specs = [ModelSpec(m, d, data_mode=args.data_mode) for m in models for d in deltas]
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    # Every cell is scored on the records all cells can evaluate.
    keep = [r for r in ds.records if all(_usable(s, r) for s in specs)]
    if len(keep) < len(ds):
        report["warnings"].append(f"{len(ds) - len(keep)} records not evaluable by every cell were dropped")
    if not keep:
        raise CliError("no records evaluable by every cell", EXIT_INPUT)
    ds = ds.with_records(keep, keep_norms=True)
    table = loocv(specs, ds, args.seed, n_starts=args.starts, kfold=args.kfold, threads=args.threads)
    report["loocv"] = table.to_dict()
    report["loocv"]["scheme"] = f"{args.kfold}-fold" if args.kfold else "leave-one-out"
    report["loocv"]["n_records"] = len(ds)
    report["loocv_text"] = table.to_text()
    failed = sum(table.failures.values())
    if failed:
        report["warnings"].append(f"{failed} folds failed to converge and were left out")
    emit(report, args)
    return EXIT_OK


def _usable(spec: ModelSpec, rec) -> bool:
    from .zoo import usable

    return usable(spec, rec)


def _parse_shapley(tokens: Sequence[str]) -> tuple[str, str]:
    named = dict(t.split("=", 1) for t in tokens if "=" in t)
    if set(named) == {"old", "new"}:
        return named["old"], named["new"]
    if len(tokens) == 2 and not named:
        return tokens[0], tokens[1]
    raise CliError("--shapley expects old=NAME new=NAME", EXIT_INPUT)


def _find(ds: Dataset, name: str):
    hits = [r for r in ds.records if r.model_name == name]
    if not hits:
        raise CliError(f"no record named {name!r}", EXIT_INPUT)
    if len(hits) > 1:
        raise CliError(f"{len(hits)} records are named {name!r}; names must be unique for attribution", EXIT_INPUT)
    return hits[0]


def _load_laws(path: str | None) -> dict[str, LawConstants]:
    laws = default_laws()
    if path is None:
        return laws
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        fields = ("E", "A", "B", "alpha", "beta", "kind")
        for name in ("kaplan", "chinchilla"):
            if name in raw:
                laws[name] = LawConstants(**{k: raw[name][k] for k in fields if k in raw[name]})
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot read laws from {path}: {exc}", EXIT_INPUT) from exc
    return laws


def cmd_analyze(args: argparse.Namespace) -> int:
    report = base_report("analyze", args)
    wanted = [args.shapley, args.ceg_transformer, args.ceg_chinchilla is not None, args.cutoff is not None, args.gain is not None]
    if not any(wanted):
        raise CliError("choose at least one of --shapley, --ceg-transformer, --ceg-chinchilla, --cutoff, --gain", EXIT_INPUT)
    needs_input = bool(args.shapley or args.ceg_transformer or args.cutoff is not None or (args.gain is not None and args.t_c is None))
    if needs_input and not args.input:
        raise CliError("this analysis needs an input CSV", EXIT_INPUT)
    ds = _load(args) if args.input else None

    try:
        if args.gain is not None:
            t_c = args.t_c
            if t_c is None:
                spec = _spec(args)
                _, point = _fit_point(spec, ds, args, report)
                t_c = doubling_times_closed_form(point.theta, spec=spec, benchmark=args.benchmark).t_c
            report["gain"] = {
                "years": args.gain,
                "t_c_months": t_c,
                "effective_compute_multiplier": effective_gain(args.gain, t_c) if math.isfinite(t_c) else 1.0,
            }

        if args.ceg_chinchilla is not None:
            laws = _load_laws(args.laws)
            report["ceg_chinchilla"] = {
                "c_budget_flop": args.ceg_chinchilla,
                "ceg": kaplan_chinchilla_ceg(args.ceg_chinchilla, laws["kaplan"], laws["chinchilla"]),
                "unit": "compute multiplier",
                "laws": {k: vars(v) for k, v in laws.items()},
            }

        if args.shapley:
            old_name, new_name = _parse_shapley(args.shapley)
            spec = _spec(args)
            sub, point = _fit_point(spec, ds, args, report)
            old, new = _find(sub, old_name), _find(sub, new_name)
            attr = shapley_attribution(spec, point.theta, old, new, sub.norms, space=args.shapley_space)
            report["shapley"] = attr.to_dict()
            report["shapley"]["model"] = spec.model

        if args.ceg_transformer:
            spec = _spec(args, "transformer_ceg")
            sub, point = _fit_point(spec, ds, args, report)
            kw = dict(norms=sub.norms, mode=args.ceg_mode)
            section = {
                "c_budget_flop": args.budget,
                "mode": args.ceg_mode,
                "benchmark": args.benchmark,
                "unit": "compute multiplier",
                "ceg": transformer_ceg(point.theta, args.benchmark, args.budget, **kw),
            }
            ens = _bootstrap(spec, sub, point, args, report)
            if ens is not None:
                section["quantile_probs"] = list(QUANTILE_PROBS)
                section["quantiles"] = quantiles(
                    ens, lambda t: _safe_ceg(t, args.benchmark, args.budget, kw), QUANTILE_PROBS
                )
            report["ceg_transformer"] = section

        if args.cutoff is not None:
            res = cutoff_analysis(
                ds, args.cutoff, args.seed, max(args.bootstrap, 1), delta=args.delta, n_starts=args.starts,
                boot_starts=args.boot_starts, threads=args.threads,
            )
            report["cutoff"] = res.to_dict()
    except AnalysisError as exc:
        raise CliError(str(exc), EXIT_ANALYSIS, report) from exc
    emit(report, args)
    return EXIT_OK


def _safe_ceg(theta, benchmark, budget, kw) -> float:
    try:
        return transformer_ceg(theta, benchmark, budget, **kw)
    except (AnalysisError, ValueError):
        return math.nan


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        spec = ModelSpec(args.model, data_mode=None)
        if args.theta:
            theta = json.loads(Path(args.theta).read_text(encoding="utf-8"))
        elif spec.model == 7:
            theta = dict(REFERENCE_THETA)
        else:
            raise CliError("--theta is required for models other than 7", EXIT_INPUT)
        theta = {k: float(theta[k]) for k in param_template(spec)}
        ds = generate_synthetic(
            spec, theta, args.n, args.noise, args.seed, n_papers=args.papers, paper_rho=args.rho,
        )
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(f"cannot generate data: {exc}", EXIT_INPUT) from exc
    write_csv(ds, args.out)
    report = base_report("synth", args)
    report["synth"] = {
        "model": spec.model,
        "theta": theta,
        "n_records": len(ds),
        "noise_sigma": args.noise,
        "papers": args.papers,
        "rho": args.rho,
        "output": {"path": Path(args.out).name, "sha256": file_digest(args.out)},
    }
    emit(report, args)
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="effcompute", description="Fit augmented scaling laws and measure algorithmic progress.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress to stderr.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Random seed (default 0).")
    common.add_argument("--threads", type=_positive_int, default=None, help="Worker processes (env EFFCOMPUTE_THREADS).")
    common.add_argument("-o", "--output", help="Write the report here instead of stdout.")
    common.add_argument("--text", action="store_true", help="Render aligned text tables instead of JSON.")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--model", default="7", help="Model id 1-20 or a named variant (default 7).")
    fitting.add_argument("--delta", type=float, default=0.0, help="L1 regularisation strength.")
    fitting.add_argument("--data-mode", choices=DATA_MODES, default=None, help="Training-data definition.")
    fitting.add_argument("--cap-per-paper", type=_positive_int, default=None, help="Keep the best K records per paper.")
    fitting.add_argument("--reference-year", type=float, default=None, help="Year Y0 (default: earliest record).")
    fitting.add_argument("--starts", type=_positive_int, default=DEFAULT_STARTS, help="Random starts for the point fit.")
    fitting.add_argument("--bootstrap", type=int, default=0, metavar="B", help="Bootstrap replicates (0 = none).")
    fitting.add_argument("--boot-starts", type=int, default=2, help="Random starts per replicate (plus the point fit).")
    fitting.add_argument("--cluster", action="store_true", help="Clustered likelihood and paper-level resampling.")
    fitting.add_argument("--benchmark", choices=("WT103", "PTB", "WT2"), default="WT103")
    fitting.add_argument("--budget", type=float, default=1e25, help="Compute budget in FLOP for budget-dependent results.")

    p = sub.add_parser("validate", parents=[common], help="Parse a CSV and report row diagnostics.")
    p.add_argument("input")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fit", parents=[common, fitting], help="Fit one specification, optionally with a bootstrap.")
    p.add_argument("input")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("loocv", parents=[common], help="Cross-validate a grid of specifications.")
    p.add_argument("input")
    p.add_argument("--grid", choices=("default", "custom"), default="default")
    p.add_argument("--models", help="Comma-separated model ids for --grid custom.")
    p.add_argument("--deltas", help="Comma-separated deltas for --grid custom (default 0).")
    p.add_argument("--kfold", type=int, default=None, help="Use k-fold instead of leave-one-out.")
    p.add_argument("--starts", type=_positive_int, default=FOLD_STARTS, help="Random starts per fold.")
    p.add_argument("--data-mode", choices=DATA_MODES, default=None)
    p.add_argument("--cap-per-paper", type=_positive_int, default=None)
    p.add_argument("--reference-year", type=float, default=None)
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("analyze", parents=[common, fitting], help="Shapley attribution, CEGs, cutoff, gains.")
    p.add_argument("input", nargs="?")
    p.add_argument("--shapley", nargs=2, metavar=("old=NAME", "new=NAME"))
    p.add_argument("--shapley-space", choices=("perplexity", "loss"), default="perplexity")
    p.add_argument("--ceg-transformer", action="store_true")
    p.add_argument("--ceg-mode", choices=("common", "reoptimized"), default="common")
    p.add_argument("--ceg-chinchilla", type=float, metavar="C", help="Compute budget in FLOP.")
    p.add_argument("--laws", help="JSON file overriding the Kaplan/Chinchilla constants.")
    p.add_argument("--cutoff", type=float, metavar="YEAR")
    p.add_argument("--gain", type=float, metavar="YEARS")
    p.add_argument("--t-c", type=float, default=None, help="Doubling time in months for --gain (default: fit it).")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", parents=[common], help="Write a synthetic CSV drawn from a specification.")
    p.add_argument("out", help="Output CSV path.")
    p.add_argument("--model", default="7")
    p.add_argument("--theta", help="JSON file of parameter values (default: reference values for model 7).")
    p.add_argument("--n", type=_positive_int, default=300)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--papers", type=_positive_int, default=None)
    p.add_argument("--rho", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        code = args.func(args)
    except CliError as exc:
        if exc.report is not None:
            exc.report.setdefault("warnings", []).append(str(exc))
            exc.report["error"] = str(exc)
            emit(exc.report, args)
        print(f"effcompute: error: {exc}", file=sys.stderr)
        code = exc.code
    except (OSError, DatasetError) as exc:
        print(f"effcompute: error: {exc}", file=sys.stderr)
        code = EXIT_INPUT
    logger.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
