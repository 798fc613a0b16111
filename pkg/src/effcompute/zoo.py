"""Scaling-law specifications and loss prediction.

Every specification is a sum of exponentiated linear predictors in
``log N``, ``log D`` and year. Models 1 to 20 follow the cross-validation
model table; three named variants extend model 7:

* ``"irreducible"``: adds a benchmark-specific floor ``gamma'``.
* ``"transformer_ceg"``: scales the reducible loss of transformer records by
  ``sigmoid(gamma_T)``.
* ``"cutoff"``: adds post-period rate offsets that switch on for records
  published at or after ``cutoff_year``.

Parameters live in plain mappings from name to float (a "parameter vector").
``param_template`` fixes the order used to pack them into optimizer arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataset import DATA_MODES, Dataset, EvalRecord, Norms, effective_data

DELTA_GRID = (0.0, 0.001, 0.0025, 0.005, 0.01, 0.02)
MODEL_IDS = tuple(range(1, 21))
NAMED_VARIANTS = ("irreducible", "transformer_ceg", "cutoff")
NO_PROGRESS_MODELS = frozenset({16, 17})

_LOG_CLIP = 700.0

# Per-term structure. ``const`` is "plain" or "bench"; ``year`` is None,
# "plain" or "bench"; ``exp`` is "plain", "bench", "arch" (transformer vs
# not) or "time" (exponent drifts with log year).
_Term = tuple[str, str | None, str]


@dataclass(frozen=True)
class _Structure:
    alpha: _Term
    beta: _Term | None
    form: str = "additive"  # additive | hicks | compute
    vocab: bool = False
    irreducible: bool = False
    transformer: bool = False
    cutoff: bool = False
    data_mode: str = "dataset_size"


_B = "bench"
_P = "plain"
_STRUCTURES: dict[int | str, _Structure] = {
    1: _Structure((_P, _P, _P), (_P, _P, _P)),
    2: _Structure((_P, None, _P), (_P, _P, _P)),
    3: _Structure((_P, _P, _P), (_P, None, _P)),
    4: _Structure((_P, _B, _P), (_P, _P, _P)),
    5: _Structure((_P, _P, _P), (_P, _B, _P)),
    6: _Structure((_P, _B, _P), (_P, _B, _P)),
    7: _Structure((_B, _P, _P), (_B, _P, _P)),
    8: _Structure((_B, None, _P), (_B, _P, _P)),
    9: _Structure((_B, _P, _P), (_B, None, _P)),
    10: _Structure((_B, _B, _P), (_B, _B, _P)),
    11: _Structure((_B, _B, _B), (_B, _B, _B)),
    12: _Structure((_B, _P, _P), (_B, None, _P), form="hicks"),
    13: _Structure((_B, _P, "arch"), (_B, _P, "arch")),
    14: _Structure((_B, None, "time"), (_B, None, "time")),
    15: _Structure((_B, _P, "time"), (_B, _P, "time")),
    16: _Structure((_B, None, _P), (_B, None, _P)),
    17: _Structure((_B, None, "arch"), (_B, None, "arch")),
    18: _Structure((_B, _P, _P), None, form="compute"),
    19: _Structure((_B, _P, _P), (_B, _P, _P), vocab=True),
    20: _Structure((_B, _P, _P), (_B, _P, _P), data_mode="tokens_seen"),
    "irreducible": _Structure((_B, _P, _P), (_B, _P, _P), irreducible=True),
    "transformer_ceg": _Structure((_B, _P, _P), (_B, _P, _P), transformer=True),
    "cutoff": _Structure((_B, _P, _P), (_B, _P, _P), cutoff=True),
}


class ParameterError(KeyError):
    """A parameter vector does not match its specification."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class ModelSpec:
    """One scaling-law specification plus its L1 regularisation strength.

    ``data_mode`` overrides the training-data definition; by default model 20
    uses tokens seen (missing epochs imputed as 1) and every other model the
    raw dataset size.
    """

    model: int | str
    delta: float = 0.0
    data_mode: str | None = None
    impute_missing_epochs: bool = True
    cutoff_year: float | None = None
    structure: _Structure = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        key = self.model
        if isinstance(key, str) and key.isdigit():
            key = int(key)
            object.__setattr__(self, "model", key)
        if key not in _STRUCTURES:
            raise ValueError(f"unknown model {self.model!r}; expected 1-20 or one of {NAMED_VARIANTS}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.data_mode is not None and self.data_mode not in DATA_MODES:
            raise ValueError(f"unknown data mode {self.data_mode!r}")
        if key == "cutoff" and self.cutoff_year is None:
            raise ValueError("the cutoff variant needs cutoff_year")
        object.__setattr__(self, "structure", _STRUCTURES[key])

    @property
    def effective_data_mode(self) -> str:
        return self.data_mode or self.structure.data_mode

    @property
    def label(self) -> str:
        return str(self.model)

    @property
    def has_progress(self) -> bool:
        s = self.structure
        return s.alpha[1] is not None or (s.beta is not None and s.beta[1] is not None) or "time" in (
            s.alpha[2],
            s.beta[2] if s.beta else None,
        )

    @property
    def n_params(self) -> int:
        return len(param_template(self))


def _expand(base: str, kind: str | None, coef: str) -> list[str]:
    if kind is None:
        return []
    name = f"{base}_{coef}"
    if kind == "plain":
        return [name]
    if kind == "bench":
        return [name, f"{name}_PTB", f"{name}_WT2"]
    if kind == "arch":
        return [f"{name}_NT", f"{name}_T"]
    if kind == "time":
        return [name, f"{base}_rate"]
    raise AssertionError(kind)


def param_template(spec: ModelSpec | int | str) -> tuple[str, ...]:
    """Ordered parameter names for ``spec``."""
    if not isinstance(spec, ModelSpec):
        spec = ModelSpec(spec)
    s = spec.structure
    c, y, e = s.alpha
    names = _expand("alpha", c, "const") + _expand("alpha", y, "year")
    names += _expand("alpha", e, "compute" if s.form == "compute" else "param")
    if s.beta is not None:
        c, y, e = s.beta
        names += _expand("beta", c, "const") + _expand("beta", y, "year") + _expand("beta", e, "data")
    if s.cutoff:
        names += ["alpha_year_post", "beta_year_post"]
    if s.irreducible:
        names += ["gamma", "gamma_PTB", "gamma_WT2"]
    if s.vocab:
        names += ["gamma_vocab"]
    if s.transformer:
        names += ["gamma_T"]
    return tuple(names)


def check_theta(spec: ModelSpec, theta: Mapping[str, float]) -> None:
    names = param_template(spec)
    missing = [n for n in names if n not in theta]
    if missing:
        raise ParameterError(f"model {spec.label} needs parameter(s) {missing}")
    extra = sorted(set(theta) - set(names))
    if extra:
        raise ParameterError(f"model {spec.label} does not use parameter(s) {extra}")


def pack(spec: ModelSpec, theta: Mapping[str, float]) -> np.ndarray:
    check_theta(spec, theta)
    return np.array([float(theta[n]) for n in param_template(spec)])


def unpack(spec: ModelSpec, vec: Sequence[float]) -> dict[str, float]:
    names = param_template(spec)
    if len(vec) != len(names):
        raise ParameterError(f"model {spec.label} has {len(names)} parameters, got {len(vec)}")
    return {n: float(v) for n, v in zip(names, vec)}


@dataclass(frozen=True)
class Features:
    """Covariate arrays for a batch of evaluation points.

    The year enters the parameter term and the data term separately
    (``dy_alpha``/``dy_beta``); they coincide for real records and only differ
    when attributing progress factor by factor.
    """

    x_ptb: np.ndarray
    x_wt2: np.ndarray
    x_t: np.ndarray
    log_n: np.ndarray  # log(N / N0)
    log_d: np.ndarray  # log(D / D0)
    year_alpha: np.ndarray
    year_beta: np.ndarray
    y0: float
    log_vocab: np.ndarray

    def __len__(self) -> int:
        return len(self.log_n)

    @property
    def dy_alpha(self) -> np.ndarray:
        return self.year_alpha - self.y0

    @property
    def dy_beta(self) -> np.ndarray:
        return self.year_beta - self.y0

    @classmethod
    def from_arrays(
        cls,
        benchmark: Sequence[str],
        is_transformer: Sequence[bool],
        n: Sequence[float],
        d: Sequence[float],
        year_alpha: Sequence[float],
        norms: Norms,
        year_beta: Sequence[float] | None = None,
        vocab: Sequence[float | None] | None = None,
    ) -> Features:
        n = np.asarray(n, dtype=float)
        d = np.asarray(d, dtype=float)
        if np.any(~(n > 0)) or np.any(~(d > 0)):
            raise ValueError("parameter counts and data sizes must be positive")
        bench = np.asarray(benchmark)
        ya = np.asarray(year_alpha, dtype=float)
        yb = ya if year_beta is None else np.asarray(year_beta, dtype=float)
        if vocab is None:
            lv = np.full(len(n), np.nan)
        else:
            lv = np.array([np.nan if v is None else math.log(v) for v in vocab])
        return cls(
            x_ptb=(bench == "PTB").astype(float),
            x_wt2=(bench == "WT2").astype(float),
            x_t=np.asarray(is_transformer, dtype=float),
            log_n=np.log(n) - math.log(norms.n0),
            log_d=np.log(d) - math.log(norms.d0),
            year_alpha=ya,
            year_beta=yb,
            y0=norms.y0,
            log_vocab=lv,
        )


def record_data(spec: ModelSpec, rec: EvalRecord) -> float | None:
    return effective_data(rec, spec.effective_data_mode, spec.impute_missing_epochs)


def usable(spec: ModelSpec, rec: EvalRecord) -> bool:
    """Whether ``rec`` carries everything ``spec`` needs."""
    d = record_data(spec, rec)
    if d is None or d <= 0:
        return False
    return not (spec.structure.vocab and rec.vocab_size is None)


def build_features(spec: ModelSpec, records: Sequence[EvalRecord], norms: Norms) -> Features:
    data = []
    for rec in records:
        d = record_data(spec, rec)
        if d is None:
            raise ValueError(f"{rec.model_name}: no epoch count for data mode {spec.effective_data_mode}")
        if spec.structure.vocab and rec.vocab_size is None:
            raise ValueError(f"{rec.model_name}: model {spec.label} needs vocab_size")
        data.append(d)
    return Features.from_arrays(
        [r.benchmark for r in records],
        [r.is_transformer for r in records],
        [r.params_n for r in records],
        data,
        [r.publication_year for r in records],
        norms,
        vocab=[r.vocab_size for r in records],
    )


def compile_predictor(spec: ModelSpec, feats: Features) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``f(vec) -> predicted losses`` for packed parameter arrays.

    All indices and covariates are bound once, so the returned closure is
    cheap enough to sit inside an optimizer loop.
    """
    s = spec.structure
    idx = {n: i for i, n in enumerate(param_template(spec))}
    f = feats
    post_a = post_b = None
    if s.cutoff:
        post_a = (f.year_alpha >= spec.cutoff_year).astype(float)
        post_b = (f.year_beta >= spec.cutoff_year).astype(float)
    log_year_a = np.log(f.year_alpha)
    log_year_b = np.log(f.year_beta)
    dy_a, dy_b = f.dy_alpha, f.dy_beta

    def coef(p, name: str, kind: str | None, log_year):
        if kind is None:
            return 0.0
        if kind == "plain":
            return p[idx[name]]
        if kind == "bench":
            return p[idx[name]] + p[idx[name + "_PTB"]] * f.x_ptb + p[idx[name + "_WT2"]] * f.x_wt2
        if kind == "arch":
            return p[idx[name + "_NT"]] * (1.0 - f.x_t) + p[idx[name + "_T"]] * f.x_t
        base = name.split("_")[0]
        return p[idx[name]] + p[idx[base + "_rate"]] * log_year

    a_const, a_year, a_exp = s.alpha
    exp_name = "alpha_compute" if s.form == "compute" else "alpha_param"
    log_nd = f.log_n + f.log_d

    def predict(p: np.ndarray) -> np.ndarray:
        la = coef(p, "alpha_const", a_const, None)
        rate_a = coef(p, "alpha_year", a_year, None)
        if post_a is not None:
            rate_a = rate_a + p[idx["alpha_year_post"]] * post_a
        if s.form == "compute":
            la = la - rate_a * dy_a - coef(p, exp_name, a_exp, log_year_a) * log_nd
            total = np.exp(np.minimum(la, _LOG_CLIP))
        else:
            b_const, b_year, b_exp = s.beta
            lb = coef(p, "beta_const", b_const, None)
            rate_b = coef(p, "beta_year", b_year, None)
            if post_b is not None:
                rate_b = rate_b + p[idx["beta_year_post"]] * post_b
            la = la - coef(p, exp_name, a_exp, log_year_a) * f.log_n
            lb = lb - coef(p, "beta_data", b_exp, log_year_b) * f.log_d
            if s.form == "hicks":
                # One efficiency rate shared by both terms.
                la = la - rate_a * dy_a
                lb = lb - rate_a * dy_b
            else:
                la = la - rate_a * dy_a
                lb = lb - rate_b * dy_b
            total = np.exp(np.minimum(la, _LOG_CLIP)) + np.exp(np.minimum(lb, _LOG_CLIP))
        if s.transformer:
            total = total * np.where(f.x_t > 0, sigmoid(p[idx["gamma_T"]]), 1.0)
        if s.irreducible:
            total = total + p[idx["gamma"]] + p[idx["gamma_PTB"]] * f.x_ptb + p[idx["gamma_WT2"]] * f.x_wt2
        if s.vocab:
            total = total + p[idx["gamma_vocab"]] * f.log_vocab
        return total

    return predict


def predict_features(spec: ModelSpec, theta: Mapping[str, float], feats: Features) -> np.ndarray:
    return compile_predictor(spec, feats)(pack(spec, theta))


def predict_many(
    spec: ModelSpec, theta: Mapping[str, float], records: Sequence[EvalRecord] | Dataset, norms: Norms | None = None
) -> np.ndarray:
    if isinstance(records, Dataset):
        norms = records.norms if norms is None else norms
        records = records.records
    if norms is None:
        raise ValueError("norms are required when passing bare records")
    return predict_features(spec, theta, build_features(spec, records, norms))


def predict_loss(spec: ModelSpec, theta: Mapping[str, float], rec: EvalRecord, norms: Norms) -> float:
    """Predicted cross-entropy (nats) of ``rec`` under ``spec`` with ``theta``."""
    return float(predict_many(spec, theta, [rec], norms)[0])


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def all_specs(deltas: Sequence[float] = DELTA_GRID, models: Sequence[int | str] = MODEL_IDS) -> list[ModelSpec]:
    """The full (model, delta) grid, model-major."""
    return [ModelSpec(m, d) for m in models for d in deltas]
