"""Headline quantities derived from fitted parameters.

Doubling times are reported in months. A growth rate that is zero or
negative gives an infinite doubling time for that resource.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .dataset import DEFAULT_VOCAB, Dataset, EvalRecord, Norms
from .fit import FitResult, bootstrap, fit, quantiles
from .zoo import NO_PROGRESS_MODELS, Features, ModelSpec, compile_predictor, pack, record_data

LN2 = math.log(2.0)
QUANTILE_PROBS = (0.025, 0.5, 0.975)
_ALLOC_MARGIN = 50.0  # nats of log N beyond [0, log(C/6)] searched for the optimum
SHAPLEY_PLAYERS = ("parameter_scaling", "data_scaling", "parameter_efficiency", "data_efficiency")


class AnalysisError(ValueError):
    pass


# --------------------------------------------------------------------------
# Doubling times
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DoublingTimes:
    """Doubling times (months) of effective parameters, data and compute."""

    t_n: float
    t_d: float
    t_c: float
    quantiles: dict[str, tuple[float, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def enc(x: float):
            return None if not math.isfinite(x) else x

        out = {"unit": "months", "t_n": enc(self.t_n), "t_d": enc(self.t_d), "t_c": enc(self.t_c)}
        infinite = [k for k in ("t_n", "t_d", "t_c") if math.isinf(getattr(self, k))]
        if infinite:
            out["infinite"] = infinite
        if self.quantiles:
            out["quantile_probs"] = list(QUANTILE_PROBS)
            out["quantiles"] = {k: [enc(v) for v in vals] for k, vals in self.quantiles.items()}
        return out


def _primed(theta: Mapping[str, float], name: str, benchmark: str) -> float:
    value = theta[name]
    if benchmark in ("PTB", "WT2"):
        value += theta.get(f"{name}_{benchmark}", 0.0)
    return value


def _exponent(theta: Mapping[str, float], name: str, benchmark: str, is_transformer: bool) -> float:
    if name in theta:
        return _primed(theta, name, benchmark)
    key = f"{name}_T" if is_transformer else f"{name}_NT"
    if key in theta:
        return theta[key]
    raise AnalysisError(f"parameters have no {name}")


def doubling_times_closed_form(
    theta: Mapping[str, float],
    *,
    spec: ModelSpec | None = None,
    benchmark: str = "WT103",
    is_transformer: bool = False,
    period: str | None = None,
) -> DoublingTimes:
    """Doubling times from the ratio of scaling exponent to yearly rate.

    ``T_N = ln2 * alpha_param / alpha_year`` and
    ``T_D = ln2 * beta_data / beta_year`` (years, reported in months).
    Effective compute grows at the sum of the two growth rates, so
    ``1/T_C = 1/T_N + 1/T_D``. A zero or negative rate gives an infinite
    doubling time for that resource and ``T_C`` comes from the other one
    alone; ``T_C`` is infinite when neither rate is positive.

    ``period="post"`` adds the cutoff variant's post-period rate offsets.
    """
    if spec is not None:
        if spec.model in NO_PROGRESS_MODELS:
            raise AnalysisError(f"model {spec.model} has no algorithmic progress terms")
        if spec.structure.alpha[2] == "time" or (spec.structure.beta and spec.structure.beta[2] == "time"):
            raise AnalysisError(f"model {spec.model} has time-varying exponents; use the optimal-scaling method")
    if "alpha_compute" in theta:
        rate = _primed(theta, "alpha_year", benchmark)
        if period == "post":
            rate += theta.get("alpha_year_post", 0.0)
        t_c = _doubling(theta["alpha_compute"], rate)
        return DoublingTimes(math.nan, math.nan, t_c)

    a_rate = _primed(theta, "alpha_year", benchmark) if "alpha_year" in theta else 0.0
    if "beta_year" in theta:
        b_rate = _primed(theta, "beta_year", benchmark)
    elif spec is not None and spec.structure.form == "hicks":
        b_rate = a_rate
    else:
        b_rate = 0.0
    if period == "post":
        a_rate += theta.get("alpha_year_post", 0.0)
        b_rate += theta.get("beta_year_post", 0.0)
    a_exp = _exponent(theta, "alpha_param", benchmark, is_transformer)
    b_exp = _exponent(theta, "beta_data", benchmark, is_transformer)

    # doublings per year; a non-positive rate contributes nothing
    g_n = max(a_rate, 0.0) / (a_exp * LN2) if a_exp > 0 else 0.0
    g_d = max(b_rate, 0.0) / (b_exp * LN2) if b_exp > 0 else 0.0
    g_c = g_n + g_d
    return DoublingTimes(
        t_n=12.0 / g_n if g_n > 0 else math.inf,
        t_d=12.0 / g_d if g_d > 0 else math.inf,
        t_c=12.0 / g_c if g_c > 0 else math.inf,
    )


def _doubling(exponent: float, rate: float) -> float:
    if exponent <= 0 or rate <= 0:
        return math.inf
    return 12.0 * LN2 * exponent / rate


def bootstrap_doubling_times(
    point: Mapping[str, float], replicates, probs: Sequence[float] = QUANTILE_PROBS, **kwargs
) -> DoublingTimes:
    """Point doubling times of ``point`` with quantiles over a bootstrap ensemble."""
    base = doubling_times_closed_form(point, **kwargs)
    qs = {}
    for key in ("t_n", "t_d", "t_c"):
        qs[key] = tuple(quantiles(replicates, lambda th, k=key: getattr(doubling_times_closed_form(th, **kwargs), k), probs))
    return DoublingTimes(base.t_n, base.t_d, base.t_c, qs)


# --------------------------------------------------------------------------
# Compute-optimal evaluation helpers
# --------------------------------------------------------------------------


def _point_features(
    benchmark: str,
    is_transformer: bool,
    log_n: np.ndarray,
    log_d: np.ndarray,
    year_alpha: np.ndarray,
    norms: Norms,
    year_beta: np.ndarray | None = None,
) -> Features:
    """Features for hypothetical points given absolute ``log N`` and ``log D``."""
    log_n = np.atleast_1d(np.asarray(log_n, dtype=float))
    k = len(log_n)
    ya = np.broadcast_to(np.asarray(year_alpha, dtype=float), (k,)).copy()
    yb = ya if year_beta is None else np.broadcast_to(np.asarray(year_beta, dtype=float), (k,)).copy()
    return Features(
        x_ptb=np.full(k, float(benchmark == "PTB")),
        x_wt2=np.full(k, float(benchmark == "WT2")),
        x_t=np.full(k, float(is_transformer)),
        log_n=log_n - math.log(norms.n0),
        log_d=np.broadcast_to(np.asarray(log_d, dtype=float), (k,)) - math.log(norms.d0),
        year_alpha=ya,
        year_beta=yb,
        y0=norms.y0,
        log_vocab=np.full(k, math.log(DEFAULT_VOCAB[benchmark])),
    )


class _Evaluator:
    """Loss of one specification at arbitrary (log N, log D, year) points."""

    def __init__(self, spec: ModelSpec, theta: Mapping[str, float], benchmark: str, norms: Norms):
        self.spec = spec
        core = {k: v for k, v in theta.items() if k not in ("rho", "sigma2")}
        self.vec = pack(spec, core)
        self.benchmark = benchmark
        self.norms = norms

    def loss(self, log_n, log_d, year, is_transformer: bool = False) -> np.ndarray:
        feats = _point_features(self.benchmark, is_transformer, log_n, log_d, year, self.norms)
        return compile_predictor(self.spec, feats)(self.vec)

    def optimal(self, log_c: float, year: float, is_transformer: bool = False) -> tuple[float, float]:
        """Compute-optimal ``(log N, loss)`` under ``C = 6 N D`` at budget ``exp(log_c)``."""
        log_c6 = log_c - math.log(6.0)

        def f(u: float) -> float:
            return float(self.loss(u, log_c6 - u, year, is_transformer)[0])

        # The loss is convex in log N along the budget line, so a wide bracket
        # is safe; it also admits allocations with N or D below one.
        lo, hi = -_ALLOC_MARGIN, log_c6 + _ALLOC_MARGIN
        res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        u = float(res.x)
        if min(u - lo, hi - u) < 1e-3:
            raise AnalysisError("compute-optimal allocation sits on a boundary; scaling exponents must be positive")
        return u, float(res.fun)


def _default_norms(norms: Norms | None, year: float | None) -> Norms:
    if norms is not None:
        return norms
    return Norms(1.0, 1.0, 0.0 if year is None else year)


def doubling_times_optimal_scaling(
    spec: ModelSpec,
    theta: Mapping[str, float],
    benchmark: str = "WT103",
    c_budget: float = 1e21,
    *,
    norms: Norms | None = None,
    year: float | None = None,
    is_transformer: bool = False,
) -> float:
    """Effective-compute doubling time (months) under compute-optimal scaling.

    Stage one finds the compute-optimal losses ``L1`` at ``c_budget`` and
    ``L2`` at twice that. Stage two holds the ``C`` optimum ``(N1, D1)`` fixed
    and finds the year shift that lowers the loss from ``L1`` to ``L2``.
    ``year`` defaults to the reference year of ``norms``.
    """
    if spec.model in NO_PROGRESS_MODELS:
        raise AnalysisError(f"model {spec.model} has no algorithmic progress terms")
    if c_budget <= 0:
        raise ValueError("c_budget must be positive")
    norms = _default_norms(norms, year)
    year = norms.y0 if year is None else year
    ev = _Evaluator(spec, theta, benchmark, norms)
    log_c = math.log(c_budget)
    u1, l1 = ev.optimal(log_c, year, is_transformer)
    _, l2 = ev.optimal(log_c + LN2, year, is_transformer)
    if not l2 < l1:
        raise AnalysisError("doubling compute does not lower the optimal loss")
    log_d1 = log_c - math.log(6.0) - u1

    def gap(shift: float) -> float:
        return float(ev.loss(u1, log_d1, year + shift, is_transformer)[0]) - l2

    hi = 1.0
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e4:
            sample = {f"{s:g}y": gap(s) + l2 for s in (0.0, 1.0, 10.0, 100.0, 1000.0)}
            raise AnalysisError(f"no year shift reaches the doubled-compute loss; loss by shift: {sample}")
    shift = brentq(gap, 0.0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)
    return 12.0 * shift


# --------------------------------------------------------------------------
# Pre/post cutoff
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffResult:
    cutoff_year: float
    pre: DoublingTimes | None
    post: DoublingTimes | None
    fit: FitResult
    n_pre: int
    n_post: int
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "cutoff_year": self.cutoff_year,
            "n_pre": self.n_pre,
            "n_post": self.n_post,
            "pre": None if self.pre is None else self.pre.to_dict(),
            "post": None if self.post is None else self.post.to_dict(),
            "model": self.fit.spec.model,
            "theta": self.fit.theta,
            "note": self.note,
        }


def cutoff_analysis(
    ds: Dataset,
    cutoff_year: float,
    seed: int = 0,
    b: int = 100,
    *,
    delta: float = 0.0,
    min_side: int = 15,
    n_starts: int = 10,
    boot_starts: int = 2,
    threads: int | None = None,
) -> CutoffResult:
    """Doubling times before and after ``cutoff_year`` from one joint fit.

    The fit is model 7 with extra yearly rates that apply to records published
    at or after the cutoff. If every record falls on one side, the plain
    model 7 is fitted and the empty side is reported as ``None``.
    """
    n_post = sum(r.publication_year >= cutoff_year for r in ds.records)
    n_pre = len(ds) - n_post
    if n_pre == 0 or n_post == 0:
        spec = ModelSpec(7, delta)
        side = "post" if n_pre == 0 else "pre"
        note = f"all records fall {'after' if side == 'post' else 'before'} the cutoff; plain model 7 fitted"
        period = None
    else:
        if min(n_pre, n_post) < min_side:
            raise AnalysisError(f"cutoff {cutoff_year}: {n_pre} records before and {n_post} after; need {min_side} each")
        spec = ModelSpec("cutoff", delta, cutoff_year=cutoff_year)
        side, note = None, ""
    point = fit(spec, ds, seed, n_starts=n_starts)
    ens = bootstrap(spec, ds, b, seed, n_starts=boot_starts, initial=[point.theta], threads=threads)

    def times(period):
        return bootstrap_doubling_times(point.theta, ens, period=period)

    if side is None:
        pre, post = times(None), times("post")
    elif side == "post":
        pre, post = None, times(None)
    else:
        pre, post = times(None), None
    return CutoffResult(cutoff_year, pre, post, point, n_pre, n_post, note)


# --------------------------------------------------------------------------
# Shapley attribution
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapleyAttribution:
    shares: dict[str, float]
    contributions: dict[str, float]
    total: float
    old: str
    new: str
    space: str

    def to_dict(self) -> dict:
        return {
            "old": self.old,
            "new": self.new,
            "space": self.space,
            "total_improvement": self.total,
            "shares": dict(self.shares),
            "contributions": dict(self.contributions),
        }


def shapley_values(players: Sequence[str], value) -> dict[str, float]:
    """Exact Shapley values of ``value(frozenset)`` by enumerating coalitions."""
    n = len(players)
    weights = [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    cache: dict[frozenset, float] = {}

    def v(coal: frozenset) -> float:
        if coal not in cache:
            cache[coal] = float(value(coal))
        return cache[coal]

    out = {}
    for p in players:
        others = [q for q in players if q != p]
        total = 0.0
        for size in range(n):
            for coal in itertools.combinations(others, size):
                s = frozenset(coal)
                total += weights[size] * (v(s | {p}) - v(s))
        out[p] = total
    return out


def shapley_attribution(
    spec: ModelSpec,
    theta: Mapping[str, float],
    old: EvalRecord,
    new: EvalRecord,
    norms: Norms,
    *,
    space: str = "perplexity",
) -> ShapleyAttribution:
    """Attribute the predicted improvement from ``old`` to ``new`` to four factors.

    The factors are parameter count, training data, and the year as it enters
    the parameter term and the data term. A coalition switches its factors to
    ``new``'s values and keeps the rest at ``old``'s; its worth is the drop in
    predicted perplexity (``space="perplexity"``) or loss (``space="loss"``).
    The architecture flag is held at ``old``'s value.
    """
    if old.benchmark != new.benchmark:
        raise AnalysisError("records must share a benchmark")
    if space not in ("perplexity", "loss"):
        raise ValueError("space must be 'perplexity' or 'loss'")
    d_old, d_new = record_data(spec, old), record_data(spec, new)
    if d_old is None or d_new is None:
        raise AnalysisError("records lack the epoch counts this data mode needs")
    coalitions = [frozenset(c) for k in range(5) for c in itertools.combinations(SHAPLEY_PLAYERS, k)]
    log_n = [math.log(new.params_n if "parameter_scaling" in c else old.params_n) for c in coalitions]
    log_d = [math.log(d_new if "data_scaling" in c else d_old) for c in coalitions]
    ya = [new.publication_year if "parameter_efficiency" in c else old.publication_year for c in coalitions]
    yb = [new.publication_year if "data_efficiency" in c else old.publication_year for c in coalitions]
    feats = _point_features(old.benchmark, old.is_transformer, np.array(log_n), np.array(log_d), np.array(ya), norms, np.array(yb))
    if spec.structure.vocab:
        feats = Features(**{**feats.__dict__, "log_vocab": np.full(len(coalitions), math.log(old.vocab_size or DEFAULT_VOCAB[old.benchmark]))})
    core = {k: v for k, v in theta.items() if k not in ("rho", "sigma2")}
    losses = compile_predictor(spec, feats)(pack(spec, core))
    score = np.exp(losses) if space == "perplexity" else losses
    table = dict(zip(coalitions, score))
    base = table[frozenset()]

    def worth(coal: frozenset) -> float:
        return base - table[coal]

    total = worth(frozenset(SHAPLEY_PLAYERS))
    if total == 0.0:
        raise AnalysisError("no improvement to attribute")
    phi = shapley_values(SHAPLEY_PLAYERS, worth)
    return ShapleyAttribution(
        shares={k: v / total for k, v in phi.items()},
        contributions=phi,
        total=float(total),
        old=old.model_name,
        new=new.model_name,
        space=space,
    )


# --------------------------------------------------------------------------
# Compute-equivalent gains
# --------------------------------------------------------------------------


def transformer_ceg(
    theta: Mapping[str, float],
    benchmark: str = "WT103",
    c_budget: float = 1e25,
    *,
    norms: Norms | None = None,
    year: float | None = None,
    mode: str = "common",
) -> float:
    """Compute-equivalent gain of the transformer multiplier ``sigmoid(gamma_T)``.

    At the compute-optimal ``(N, D)`` for ``c_budget`` the non-transformer
    loss is the target. ``mode="common"`` shrinks the transformer's ``N`` and
    ``D`` by one factor ``s`` until its loss rises to the target and returns
    ``1/s**2`` (compute is ``6 N D``). ``mode="reoptimized"`` instead finds
    the smaller budget at which a compute-optimal transformer matches the
    target and returns the budget ratio.
    """
    if c_budget <= 0:
        raise ValueError("c_budget must be positive")
    if mode not in ("common", "reoptimized"):
        raise ValueError("mode must be 'common' or 'reoptimized'")
    spec = ModelSpec("transformer_ceg")
    norms = _default_norms(norms, year)
    year = norms.y0 if year is None else year
    ev = _Evaluator(spec, theta, benchmark, norms)
    log_c = math.log(c_budget)
    u, target = ev.optimal(log_c, year, is_transformer=False)
    log_d = log_c - math.log(6.0) - u
    lo = math.log(1e-9)

    if mode == "common":
        def gap(log_s: float) -> float:
            return float(ev.loss(u + log_s, log_d + log_s, year, True)[0]) - target
    else:
        def gap(log_s: float) -> float:
            return ev.optimal(log_c + 2 * log_s, year, True)[1] - target

    at_one = gap(0.0)
    if at_one >= 0:
        return 1.0
    if gap(lo) < 0:
        raise AnalysisError("the non-transformer loss is not reached for any s in (1e-9, 1]")
    log_s = brentq(gap, lo, 0.0, xtol=1e-13, maxiter=500)
    return math.exp(-2.0 * log_s)


@dataclass(frozen=True)
class LawConstants:
    """A published scaling law ``L(N, D)``.

    ``kind="additive"``: ``E + A/N**alpha + B/D**beta``.
    ``kind="kaplan"``: ``E + ((A/N)**(alpha/beta) + B/D)**beta``.
    """

    E: float
    A: float
    B: float
    alpha: float
    beta: float
    kind: str = "additive"

    def loss(self, log_n: float, log_d: float) -> float:
        if self.kind == "additive":
            return self.E + self.A * math.exp(-self.alpha * log_n) + self.B * math.exp(-self.beta * log_d)
        if self.kind == "kaplan":
            inner = math.exp(self.alpha / self.beta * (math.log(self.A) - log_n)) + self.B * math.exp(-log_d)
            return self.E + inner**self.beta
        raise ValueError(f"unknown law kind {self.kind!r}")

    def optimal_log_n(self, log_c: float) -> float:
        log_c6 = log_c - math.log(6.0)
        res = minimize_scalar(
            lambda u: self.loss(u, log_c6 - u), bounds=(0.0, log_c6), method="bounded", options={"xatol": 1e-11}
        )
        return float(res.x)

    def optimal_loss(self, log_c: float) -> float:
        u = self.optimal_log_n(log_c)
        return self.loss(u, log_c - math.log(6.0) - u)


def default_laws() -> dict[str, LawConstants]:
    raw = json.loads(resources.files("effcompute").joinpath("data/scaling_laws.json").read_text())
    fields = ("E", "A", "B", "alpha", "beta", "kind")
    return {name: LawConstants(**{k: raw[name][k] for k in fields}) for name in ("kaplan", "chinchilla")}


def kaplan_chinchilla_ceg(
    c_budget: float, kaplan: LawConstants | None = None, chinchilla: LawConstants | None = None
) -> float:
    """Compute-equivalent gain of allocating by the Chinchilla law instead of Kaplan's.

    The Kaplan law picks the allocation at ``c_budget``; the Chinchilla law
    scores it. The gain is ``c_budget`` over the smaller budget at which the
    Chinchilla-optimal allocation reaches the same loss.
    """
    if c_budget <= 0:
        raise ValueError("c_budget must be positive")
    laws = default_laws()
    kaplan = kaplan or laws["kaplan"]
    chinchilla = chinchilla or laws["chinchilla"]
    log_c = math.log(c_budget)
    u = kaplan.optimal_log_n(log_c)
    achieved = chinchilla.loss(u, log_c - math.log(6.0) - u)
    best = chinchilla.optimal_loss(log_c)
    if achieved <= best * (1 + 1e-12):
        return 1.0

    def gap(shift: float) -> float:
        return chinchilla.optimal_loss(log_c + shift) - achieved

    lo = -1.0
    while gap(lo) < 0:
        lo *= 2.0
        if lo < -200:
            raise AnalysisError("no smaller budget reaches the Kaplan-allocated loss")
    shift = brentq(gap, lo, 0.0, xtol=1e-12, maxiter=500)
    return math.exp(-shift)


# --------------------------------------------------------------------------
# Simple utilities
# --------------------------------------------------------------------------


def effective_gain(years: float, t_c_months: float) -> float:
    """Effective-compute multiplier after ``years`` at doubling time ``t_c_months``."""
    if t_c_months <= 0:
        raise ValueError("t_c_months must be positive")
    return 2.0 ** (12.0 * years / t_c_months)


def same_performance_halving(
    points: Sequence[Sequence[float]], band: tuple[float, float] | None = None
) -> float:
    """Halving time (months) of compute needed for fixed performance.

    ``points`` are ``(year, compute)`` pairs, or ``(year, compute, loss)``
    triples when ``band`` is given to keep only losses inside it. Fits
    ``log2(compute)`` on year by least squares; the halving time is
    ``-12 / slope``.
    """
    pts = list(points)
    if band is not None:
        lo, hi = band
        if any(len(p) < 3 for p in pts):
            raise ValueError("filtering by loss band needs (year, compute, loss) points")
        pts = [p for p in pts if lo <= p[2] <= hi]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    years = np.array([p[0] for p in pts], dtype=float)
    log2c = np.log2(np.array([p[1] for p in pts], dtype=float))
    slope = np.polyfit(years, log2c, 1)[0]
    if slope == 0:
        return math.inf
    return -12.0 / slope


def effective_parameters(n: float, year: float, theta: Mapping[str, float], y0: float) -> float:
    """``N * exp(alpha_year / alpha_param * (Y - Y0))``."""
    return n * math.exp(theta["alpha_year"] / theta["alpha_param"] * (year - y0))


def effective_data_size(d: float, year: float, theta: Mapping[str, float], y0: float) -> float:
    """``D * exp(beta_year / beta_data * (Y - Y0))``."""
    return d * math.exp(theta["beta_year"] / theta["beta_data"] * (year - y0))
