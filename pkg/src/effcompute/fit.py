"""Regularised least-squares fitting and bootstrap uncertainty.

The objective is the mean squared residual in cross-entropy (nats) plus
``delta * sum(|theta_i|)`` over every free parameter. It is minimised with
Nelder-Mead from several random starting points; each local run is restarted
from its own optimum until it stops improving, which guards against the
simplex collapsing early.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .dataset import Dataset, EvalRecord
from .zoo import ModelSpec, build_features, compile_predictor, pack, param_template, unpack, usable

logger = logging.getLogger(__name__)

DEFAULT_STARTS = 10
MAX_EVALS = 50_000
SPREAD_TOL = 1e-10
_MAX_POLISH = 8


class UnderdeterminedError(ValueError):
    pass


@dataclass(frozen=True)
class FitResult:
    spec: ModelSpec
    theta: dict[str, float]
    objective: float
    mse: float
    n_used: int
    converged: bool
    n_restarts_used: int
    n_evals: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.spec.model,
            "delta": self.spec.delta,
            "theta": dict(self.theta),
            "objective": self.objective,
            "mse": self.mse,
            "n_used": self.n_used,
            "converged": self.converged,
            "n_restarts_used": self.n_restarts_used,
        }


@dataclass(frozen=True)
class BootstrapEnsemble:
    replicates: tuple[FitResult, ...]
    seed: int
    b: int = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "b", len(self.replicates))

    @property
    def converged(self) -> tuple[FitResult, ...]:
        return tuple(r for r in self.replicates if r.converged)

    @property
    def n_failed(self) -> int:
        return self.b - len(self.converged)


def init_range(name: str) -> tuple[float, float]:
    """Uniform range that random starting points for ``name`` are drawn from."""
    if name.endswith(("_PTB", "_WT2")):
        return (-0.2, 0.2)
    if name in ("alpha_const", "beta_const", "gamma"):
        return (0.0, 1.5)
    if name.endswith(("_year", "_year_post", "_rate")):
        return (-0.05, 0.1)
    if name == "gamma_T":
        return (0.0, 4.0)
    if name == "gamma_vocab":
        return (-0.05, 0.05)
    # scaling exponents: alpha_param*, beta_data*, alpha_compute
    return (0.01, 0.4)


def random_start(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    lows, highs = zip(*(init_range(n) for n in param_template(spec)))
    return rng.uniform(lows, highs)


def nelder_mead(
    fun: Callable[[np.ndarray], float],
    x0: np.ndarray,
    *,
    max_evals: int = MAX_EVALS,
    spread_tol: float = SPREAD_TOL,
) -> tuple[np.ndarray, float, bool, int]:
    """Minimise ``fun`` from ``x0``; returns ``(x, f, converged, n_evals)``.

    A run stops once the objective spread across the simplex falls below
    ``spread_tol`` (no tolerance on the simplex size). The search is then
    restarted from the incumbent with a fresh simplex, repeating until a
    restart yields no improvement or the evaluation budget is spent.
    """
    x = np.asarray(x0, dtype=float)
    fx = float(fun(x))
    used = 1
    converged = False
    for _ in range(_MAX_POLISH):
        budget = max_evals - used
        if budget <= len(x) + 1:
            break
        res = minimize(
            fun,
            x,
            method="Nelder-Mead",
            options={
                "maxfev": budget,
                "xatol": math.inf,
                "fatol": spread_tol,
                "adaptive": len(x) > 6,
            },
        )
        used += int(res.nfev)
        converged = res.status == 0
        improved = fx - float(res.fun)
        if res.fun <= fx:
            x, fx = np.asarray(res.x, dtype=float), float(res.fun)
        if not converged or improved <= spread_tol:
            break
    return x, fx, converged, used


def evaluable_subset(spec: ModelSpec, ds: Dataset) -> Dataset:
    """Records of ``ds`` that ``spec`` can evaluate, on the parent's norms."""
    keep = [r for r in ds.records if usable(spec, r)]
    if not keep:
        raise ValueError(f"no records usable under model {spec.label}")
    return ds.with_records(keep, keep_norms=True)


def make_objective(spec: ModelSpec, records: Sequence[EvalRecord], norms) -> Callable[[np.ndarray], float]:
    predict = compile_predictor(spec, build_features(spec, records, norms))
    observed = np.array([r.loss for r in records])
    delta = spec.delta

    def objective(p: np.ndarray) -> float:
        r = observed - predict(p)
        value = float(r @ r) / len(r)
        if delta:
            value += delta * float(np.abs(p).sum())
        return value if math.isfinite(value) else math.inf

    return objective


def fit(
    spec: ModelSpec,
    ds: Dataset,
    seed: int = 0,
    *,
    n_starts: int = DEFAULT_STARTS,
    initial: Iterable[Mapping[str, float]] = (),
    max_evals: int = MAX_EVALS,
    spread_tol: float = SPREAD_TOL,
) -> FitResult:
    """Fit ``spec`` to every record of ``ds`` by multi-start Nelder-Mead.

    Args:
        spec: specification and regularisation strength.
        ds: records; all must be evaluable under ``spec``.
        seed: seeds the random starting points.
        n_starts: number of random starting points.
        initial: extra starting points tried before the random ones (for
            example a full-data estimate when fitting a resample).
        max_evals: objective evaluation budget per start.
        spread_tol: stop once the objective spread across the simplex is
            below this.

    Returns the best start. ``converged`` is False only if no start met the
    spread criterion.
    """
    names = param_template(spec)
    n = len(ds)
    if n < len(names):
        raise UnderdeterminedError(f"underdetermined: {n} records for {len(names)} parameters of model {spec.label}")
    for rec in ds.records:
        if not usable(spec, rec):
            raise ValueError(f"{rec.model_name} is not evaluable under model {spec.label}")
    objective = make_objective(spec, ds.records, ds.norms)
    rng = np.random.default_rng(seed)
    starts = [pack(spec, {k: t[k] for k in names}) for t in initial]
    starts += [random_start(spec, rng) for _ in range(n_starts)]
    if not starts:
        raise ValueError("need at least one starting point")

    best_x, best_f, any_conv, total_evals = None, math.inf, False, 0
    for x0 in starts:
        x, fx, conv, used = nelder_mead(objective, x0, max_evals=max_evals, spread_tol=spread_tol)
        total_evals += used
        any_conv = any_conv or conv
        if fx < best_f or best_x is None:
            best_x, best_f = x, fx
    theta = unpack(spec, best_x)
    mse = best_f - spec.delta * float(np.abs(best_x).sum())
    if not math.isfinite(best_f):
        any_conv = False
    return FitResult(
        spec=spec,
        theta=theta,
        objective=best_f,
        mse=max(mse, 0.0),
        n_used=n,
        converged=any_conv and math.isfinite(best_f),
        n_restarts_used=len(starts),
        n_evals=total_evals,
    )


def replicate_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index])


def resample(ds: Dataset, rng: np.random.Generator, cluster_by_paper: bool = False) -> Dataset:
    """Bootstrap resample of ``ds`` keeping its norms.

    With ``cluster_by_paper`` whole papers are drawn with replacement; a paper
    drawn more than once gets a suffixed id per copy so that each copy forms
    its own block.
    """
    recs = ds.records
    if not cluster_by_paper:
        idx = rng.integers(0, len(recs), len(recs))
        return ds.with_records((recs[i] for i in idx), keep_norms=True)
    papers: dict[str, list[EvalRecord]] = {}
    for r in recs:
        papers.setdefault(r.paper_id, []).append(r)
    ids = list(papers)
    draws = rng.integers(0, len(ids), len(ids))
    seen: dict[str, int] = {}
    out: list[EvalRecord] = []
    for k in draws:
        pid = ids[k]
        copy = seen.get(pid, 0)
        seen[pid] = copy + 1
        for r in papers[pid]:
            out.append(r if copy == 0 else _relabel(r, f"{pid}#{copy}"))
    return ds.with_records(out, keep_norms=True)


def _relabel(rec: EvalRecord, paper_id: str) -> EvalRecord:
    from dataclasses import replace

    return replace(rec, paper_id=paper_id)


def _fit_replicate(args) -> FitResult:
    spec, ds, seed, index, cluster, method, n_starts, initial = args
    ss = replicate_seed(seed, index)
    rng = np.random.default_rng(ss)
    sample = resample(ds, rng, cluster)
    fit_seed = int(ss.generate_state(1)[0])
    try:
        if method == "mle":
            from .cluster_mle import fit_clustered

            return fit_clustered(spec, sample, fit_seed, n_starts=n_starts, initial=initial)
        return fit(spec, sample, fit_seed, n_starts=n_starts, initial=initial)
    except (ValueError, FloatingPointError) as exc:
        logger.warning("bootstrap replicate %d failed: %s", index, exc)
        names = param_template(spec)
        return FitResult(spec, {n: math.nan for n in names}, math.inf, math.inf, len(sample), False, 0)


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("EFFCOMPUTE_THREADS", "1") or 1)
    return max(1, threads)


def bootstrap(
    spec: ModelSpec,
    ds: Dataset,
    b: int,
    seed: int = 0,
    cluster_by_paper: bool = False,
    *,
    method: str = "ls",
    n_starts: int = DEFAULT_STARTS,
    initial: Sequence[Mapping[str, float]] = (),
    threads: int | None = None,
) -> BootstrapEnsemble:
    """Refit ``spec`` on ``b`` resamples of ``ds``.

    Replicate ``i`` draws its resample and starting points from
    ``SeedSequence([seed, i])``, so results do not depend on ``threads``.
    ``method`` is ``"ls"`` (least squares) or ``"mle"`` (clustered
    likelihood).
    """
    if b < 1:
        raise ValueError("b must be at least 1")
    if method not in ("ls", "mle"):
        raise ValueError(f"unknown method {method!r}")
    initial = tuple(dict(t) for t in initial)
    jobs = [(spec, ds, seed, i, cluster_by_paper, method, n_starts, initial) for i in range(b)]
    workers = resolve_threads(threads)
    if workers == 1:
        reps = [_fit_replicate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_fit_replicate, jobs))
    return BootstrapEnsemble(tuple(reps), seed)


def _quantile(sorted_vals: np.ndarray, q: float) -> float:
    # Linear interpolation that tolerates infinite values.
    pos = q * (len(sorted_vals) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(sorted_vals) - 1)
    frac = pos - lo
    a, b = float(sorted_vals[lo]), float(sorted_vals[hi])
    if frac == 0.0 or a == b:
        return a
    return a + (b - a) * frac


def quantiles(
    ens: BootstrapEnsemble, f: Callable[[Mapping[str, float]], float], probs: Sequence[float]
) -> list[float]:
    """Empirical quantiles of ``f(theta)`` over the converged replicates."""
    if any(not 0.0 <= p <= 1.0 for p in probs):
        raise ValueError("probabilities must lie in [0, 1]")
    reps = ens.converged
    if not reps:
        raise ValueError("no converged bootstrap replicates")
    vals = np.array([f(r.theta) for r in reps], dtype=float)
    vals = np.sort(vals[~np.isnan(vals)])
    if len(vals) == 0:
        raise ValueError("the statistic is undefined on every replicate")
    return [_quantile(vals, p) for p in probs]


def bootstrap_sd(ens: BootstrapEnsemble) -> dict[str, float]:
    reps = ens.converged
    if not reps:
        raise ValueError("no converged bootstrap replicates")
    names = list(reps[0].theta)
    return {n: float(np.std([r.theta[n] for r in reps], ddof=1)) if len(reps) > 1 else 0.0 for n in names}
