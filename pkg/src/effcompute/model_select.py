"""Leave-one-out cross-validation over the (model, delta) grid."""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Dataset, EvalRecord
from .fit import FitResult, fit, resolve_threads
from .zoo import DELTA_GRID, ModelSpec, predict_many

logger = logging.getLogger(__name__)

FOLD_STARTS = 4

Cell = tuple[str, float]


def record_key(rec: EvalRecord) -> str:
    """Identity of a record, independent of its position in the file."""
    return "|".join(
        [
            rec.model_name,
            rec.paper_id,
            rec.benchmark,
            repr(rec.publication_year),
            repr(rec.loss),
            repr(rec.params_n),
            repr(rec.dataset_tokens_d),
        ]
    )


def _stable_int(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


@dataclass
class CvTable:
    entries: dict[Cell, float]
    n_params: dict[Cell, int]
    failures: dict[Cell, int] = field(default_factory=dict)
    n_folds: dict[Cell, int] = field(default_factory=dict)

    @property
    def ranking(self) -> list[Cell]:
        """Cells ordered by MSE, then parameter count, then model, then delta."""
        finite = [c for c, v in self.entries.items() if math.isfinite(v)]
        return sorted(finite, key=lambda c: (self.entries[c], self.n_params[c], _model_order(c[0]), c[1]))

    def to_dict(self) -> dict:
        return {
            "unit": "mean squared held-out error, nats^2",
            "cells": [
                {
                    "model": _as_model(m),
                    "delta": d,
                    "mse": None if not math.isfinite(v) else v,
                    "n_params": self.n_params[(m, d)],
                    "n_folds": self.n_folds.get((m, d), 0),
                    "failed_folds": self.failures.get((m, d), 0),
                }
                for (m, d), v in sorted(self.entries.items(), key=lambda kv: (_model_order(kv[0][0]), kv[0][1]))
            ],
            "ranking": [{"model": _as_model(m), "delta": d} for m, d in self.ranking],
        }

    def to_text(self) -> str:
        """Aligned table: one row per model, one column per delta."""
        models = sorted({m for m, _ in self.entries}, key=_model_order)
        deltas = sorted({d for _, d in self.entries})
        head = ["Model/delta"] + [f"{d:g}" for d in deltas]
        rows = [head]
        for m in models:
            row = [m]
            for d in deltas:
                v = self.entries.get((m, d))
                row.append("" if v is None else ("failed" if not math.isfinite(v) else f"{v:.5f}"))
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)


def _model_order(label: str) -> tuple[int, str]:
    return (int(label), "") if label.isdigit() else (10_000, label)


def _as_model(label: str) -> int | str:
    return int(label) if label.isdigit() else label


def _fold_job(args) -> tuple[float | None, bool]:
    spec, train, held_out, seed, n_starts, initial = args
    try:
        res = fit(spec, train, seed, n_starts=n_starts, initial=initial)
    except ValueError as exc:
        logger.warning("fold failed for model %s: %s", spec.label, exc)
        return None, False
    if not res.converged:
        return None, False
    pred = predict_many(spec, res.theta, held_out, train.norms)
    obs = np.array([r.loss for r in held_out])
    return float(np.sum((obs - pred) ** 2)), True


def loocv(
    specs: Sequence[ModelSpec],
    ds: Dataset,
    seed: int = 0,
    *,
    n_starts: int = FOLD_STARTS,
    kfold: int | None = None,
    warm_start: bool = True,
    threads: int | None = None,
) -> CvTable:
    """Held-out mean squared error for every specification.

    Each fold refits with ``n_starts`` random starts, plus the full-data
    estimate of the same cell when ``warm_start`` is set. Fold seeds come from
    the held-out record's identity and the cell, so the table does not depend
    on record order. ``kfold`` switches to k-fold cross-validation, which is
    faster but not leave-one-out.
    """
    if not specs:
        raise ValueError("no specifications to evaluate")
    recs = sorted(ds.records, key=record_key)
    base = ds.with_records(recs)
    n = len(recs)
    if kfold is not None:
        if not 2 <= kfold <= n:
            raise ValueError("kfold must lie in [2, n]")
        order = sorted(range(n), key=lambda i: _stable_int(f"{seed}|{record_key(recs[i])}"))
        folds = [sorted(order[k::kfold]) for k in range(kfold)]
    else:
        folds = [[i] for i in range(n)]

    jobs, owners = [], []
    table = CvTable(entries={}, n_params={})
    for spec in specs:
        cell = (spec.label, spec.delta)
        table.n_params[cell] = spec.n_params
        cell_seed = _stable_int(f"{seed}|{spec.label}|{spec.delta!r}")
        initial: tuple = ()
        if warm_start:
            try:
                full = fit(spec, base, cell_seed, n_starts=n_starts)
                initial = (full.theta,)
            except ValueError as exc:
                logger.warning("model %s: full-data fit failed: %s", spec.label, exc)
        for fold in folds:
            held = set(fold)
            train = base.with_records([r for i, r in enumerate(recs) if i not in held], keep_norms=True)
            held_out = [recs[i] for i in fold]
            fold_seed = _stable_int(f"{cell_seed}|" + "|".join(record_key(r) for r in held_out))
            jobs.append((spec, train, held_out, fold_seed, n_starts, initial))
            owners.append((cell, len(fold)))

    workers = resolve_threads(threads)
    if workers == 1:
        results = [_fold_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fold_job, jobs))

    sums: dict[Cell, float] = {}
    counts: dict[Cell, int] = {}
    for (cell, size), (sse, ok) in zip(owners, results):
        table.n_folds[cell] = table.n_folds.get(cell, 0) + 1
        if not ok:
            table.failures[cell] = table.failures.get(cell, 0) + 1
            continue
        sums[cell] = sums.get(cell, 0.0) + sse
        counts[cell] = counts.get(cell, 0) + size
    for cell in table.n_params:
        table.entries[cell] = sums[cell] / counts[cell] if counts.get(cell) else math.inf
    return table


def top_k(table: CvTable, k: int) -> list[Cell]:
    if k < 1:
        raise ValueError("k must be at least 1")
    return table.ranking[:k]


def default_grid(models: Sequence[int | str] | None = None, deltas: Sequence[float] = DELTA_GRID) -> list[ModelSpec]:
    from .zoo import MODEL_IDS

    return [ModelSpec(m, d) for m in (models or MODEL_IDS) for d in deltas]
