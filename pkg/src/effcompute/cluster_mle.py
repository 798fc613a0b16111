"""Maximum likelihood with equicorrelated residuals inside each paper.

Residuals of records from the same paper share correlation ``rho``; records
from different papers are independent. Sorting records so that each paper is
a contiguous index range makes the correlation matrix ``P`` block diagonal,
with every block of the form ``(1 - rho) I + rho 1 1^T``. Its log-determinant
and the quadratic form ``eps^T P^-1 eps`` then have closed forms that cost
O(n), so no dense matrix is ever built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .fit import DEFAULT_STARTS, MAX_EVALS, FitResult, UnderdeterminedError, nelder_mead, random_start
from .zoo import ModelSpec, build_features, compile_predictor, pack, param_template, unpack, usable

_EDGE = 1e-6


@dataclass(frozen=True)
class BlockStructure:
    paper_ids: tuple[str, ...]
    sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.paper_ids) != len(self.sizes):
            raise ValueError("one size per block is required")
        if any(s < 1 for s in self.sizes):
            raise ValueError("block sizes must be at least 1")

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def ranges(self) -> list[range]:
        out, start = [], 0
        for s in self.sizes:
            out.append(range(start, start + s))
            start += s
        return out

    @classmethod
    def from_ids(cls, ids: Sequence[str]) -> BlockStructure:
        """Blocks from a sequence of paper ids that is already grouped."""
        pids: list[str] = []
        sizes: list[int] = []
        for pid in ids:
            if pids and pids[-1] == pid:
                sizes[-1] += 1
                continue
            if pid in pids:
                raise ValueError(f"records of paper {pid!r} are not contiguous")
            pids.append(pid)
            sizes.append(1)
        return cls(tuple(pids), tuple(sizes))


def group_by_paper(ds: Dataset) -> tuple[Dataset, BlockStructure]:
    """Stable reordering of ``ds`` so each paper's records are adjacent."""
    order: dict[str, list] = {}
    for r in ds.records:
        order.setdefault(r.paper_id, []).append(r)
    recs = [r for group in order.values() for r in group]
    grouped = ds.with_records(recs, keep_norms=True)
    return grouped, BlockStructure.from_ids([r.paper_id for r in recs])


def rho_bounds(sizes: Iterable[int]) -> tuple[float, float]:
    """Open interval of ``rho`` keeping every block positive definite."""
    m = max(sizes, default=1)
    lower = -1.0 if m <= 1 else -1.0 / (m - 1)
    return lower, 1.0


def _check_rho(sizes: Sequence[int], rho: float) -> None:
    lo, hi = rho_bounds(sizes)
    if not lo < rho < hi:
        raise ValueError(f"rho={rho} outside the positive-definite range ({lo:.6g}, {hi})")


def block_log_det(sizes: Sequence[int], rho: float) -> float:
    """``log det P`` as a sum of ``(m-1) log(1-rho) + log(1+(m-1) rho)`` per block."""
    _check_rho(sizes, rho)
    if rho == 0.0:
        return 0.0
    m = np.asarray(sizes, dtype=float)
    big = m[m > 1]
    return float(np.sum((big - 1) * math.log1p(-rho) + np.log1p((big - 1) * rho)))


def block_quadratic_form(eps: Sequence[float], blocks: BlockStructure | Sequence[int], rho: float) -> float:
    """``eps^T P^-1 eps`` using the Sherman-Morrison inverse of each block.

    For a block of size ``m`` with ``c = 1/rho + m/(1-rho)`` the inverse has
    diagonal ``1/(1-rho) - 1/(c (1-rho)^2)`` and off-diagonal
    ``-1/(c (1-rho)^2)``, so the block contributes
    ``sum(e^2)/(1-rho) - (sum e)^2 / (c (1-rho)^2)``. Singleton blocks and
    ``rho = 0`` reduce to plain sums of squares.
    """
    sizes = blocks.sizes if isinstance(blocks, BlockStructure) else tuple(int(s) for s in blocks)
    e = np.asarray(eps, dtype=float)
    if e.ndim != 1 or len(e) != sum(sizes):
        raise ValueError(f"residual vector has length {e.size}, blocks cover {sum(sizes)}")
    _check_rho(sizes, rho)
    if rho == 0.0:
        return float(e @ e)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    m = np.asarray(sizes, dtype=float)
    sum_sq = np.add.reduceat(e * e, starts)
    sums = np.add.reduceat(e, starts)
    one_m = 1.0 - rho
    c = 1.0 / rho + m / one_m
    shared = sum_sq / one_m - sums * sums / (c * one_m * one_m)
    # singleton blocks are plain squares; the general form only agrees up to rounding
    return float(np.sum(np.where(m > 1, shared, sum_sq)))


def negative_log_likelihood(
    spec: ModelSpec, theta: Mapping[str, float], ds: Dataset, blocks: BlockStructure | None = None
) -> float:
    """``0.5 log det P + (n/2) log sigma2 + eps^T P^-1 eps / (2 sigma2)``.

    ``theta`` holds the specification's parameters plus ``rho`` and
    ``sigma2``. When ``blocks`` is omitted, ``ds`` must already be grouped by
    paper and the blocks are read off its paper ids.
    """
    rho = float(theta["rho"])
    sigma2 = float(theta["sigma2"])
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if blocks is None:
        blocks = BlockStructure.from_ids([r.paper_id for r in ds.records])
    if blocks.n != len(ds):
        raise ValueError("block structure does not cover the dataset")
    core = {k: v for k, v in theta.items() if k not in ("rho", "sigma2")}
    predict = compile_predictor(spec, build_features(spec, ds.records, ds.norms))
    eps = np.array([r.loss for r in ds.records]) - predict(pack(spec, core))
    n = len(eps)
    return (
        0.5 * block_log_det(blocks.sizes, rho)
        + 0.5 * n * math.log(sigma2)
        + block_quadratic_form(eps, blocks, rho) / (2.0 * sigma2)
    )


def _rho_from_z(z: float, lo: float, hi: float) -> float:
    s = 0.5 * (1.0 + math.tanh(0.5 * z))
    return lo + (hi - lo) * s


def _z_from_rho(rho: float, lo: float, hi: float) -> float:
    s = min(max((rho - lo) / (hi - lo), 1e-12), 1 - 1e-12)
    return math.log(s / (1.0 - s))


def fit_clustered(
    spec: ModelSpec,
    ds: Dataset,
    seed: int = 0,
    *,
    n_starts: int = DEFAULT_STARTS,
    initial: Iterable[Mapping[str, float]] = (),
    fix_rho: float | None = None,
    max_evals: int = MAX_EVALS,
) -> FitResult:
    """Maximum-likelihood fit of ``spec`` with one within-paper correlation.

    ``sigma2`` is profiled out (its maximiser given the rest is
    ``eps^T P^-1 eps / n``). ``rho`` is searched through a logistic map onto
    the open positive-definite interval, or held at ``fix_rho``. The returned
    ``theta`` includes ``rho`` and ``sigma2``; ``objective`` is the negative
    log-likelihood and ``mse`` the plain mean squared residual.
    """
    ds, blocks = group_by_paper(ds)
    names = param_template(spec)
    n = len(ds)
    k = len(names) + (fix_rho is None)
    if n < k:
        raise UnderdeterminedError(f"underdetermined: {n} records for {k} parameters of model {spec.label}")
    for rec in ds.records:
        if not usable(spec, rec):
            raise ValueError(f"{rec.model_name} is not evaluable under model {spec.label}")
    lo, hi = rho_bounds(blocks.sizes)
    lo, hi = lo + _EDGE, hi - _EDGE
    if fix_rho is not None:
        _check_rho(blocks.sizes, fix_rho)
    predict = compile_predictor(spec, build_features(spec, ds.records, ds.norms))
    observed = np.array([r.loss for r in ds.records])
    sizes = blocks.sizes
    n_core = len(names)

    def split(p: np.ndarray) -> tuple[np.ndarray, float]:
        if fix_rho is not None:
            return p, fix_rho
        return p[:n_core], _rho_from_z(float(p[n_core]), lo, hi)

    def profile(p: np.ndarray) -> float:
        core, rho = split(p)
        eps = observed - predict(core)
        q = block_quadratic_form(eps, blocks, rho)
        if not (q > 0 and math.isfinite(q)):
            return math.inf
        return 0.5 * block_log_det(sizes, rho) + 0.5 * n * math.log(q / n) + 0.5 * n

    rng = np.random.default_rng(seed)
    starts: list[np.ndarray] = []
    for t in initial:
        core = pack(spec, {k_: v for k_, v in t.items() if k_ in names})
        if fix_rho is None:
            core = np.append(core, _z_from_rho(float(t.get("rho", 0.0)), lo, hi))
        starts.append(core)
    for _ in range(n_starts):
        x0 = random_start(spec, rng)
        if fix_rho is None:
            x0 = np.append(x0, _z_from_rho(rng.uniform(0.0, 0.6), lo, hi))
        starts.append(x0)
    if not starts:
        raise ValueError("need at least one starting point")

    best_x, best_f, any_conv, evals = None, math.inf, False, 0
    for x0 in starts:
        x, fx, conv, used = nelder_mead(profile, x0, max_evals=max_evals)
        evals += used
        any_conv = any_conv or conv
        if best_x is None or fx < best_f:
            best_x, best_f = x, fx
    core, rho = split(best_x)
    eps = observed - predict(core)
    theta = unpack(spec, core)
    theta["rho"] = float(rho)
    theta["sigma2"] = block_quadratic_form(eps, blocks, rho) / n
    return FitResult(
        spec=spec,
        theta=theta,
        objective=best_f,
        mse=float(eps @ eps) / n,
        n_used=n,
        converged=any_conv and math.isfinite(best_f),
        n_restarts_used=len(starts),
        n_evals=evals,
    )
