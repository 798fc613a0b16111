"""Evaluation records: ingestion, filtering, training-data definitions and
synthetic generation.

A record is one language model evaluated on one benchmark. Losses are
per-token cross-entropies in nats (``loss = ln(perplexity)``).
"""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from .zoo import ModelSpec

logger = logging.getLogger(__name__)

BENCHMARKS = ("WT103", "PTB", "WT2")
EXCLUSION_FLAGS = frozenset(
    {"retrieval", "compression_pruning", "nas", "distillation", "cache"}
)
DATA_MODES = ("dataset_size", "tokens_seen", "tokens_seen_diminishing")

# Vocabulary sizes of the three benchmarks' standard word-level versions.
DEFAULT_VOCAB = {"WT103": 267_735, "PTB": 10_000, "WT2": 33_278}

CSV_COLUMNS = (
    "model_name",
    "paper_id",
    "pub_date",
    "benchmark",
    "perplexity",
    "loss",
    "params",
    "dataset_tokens",
    "epochs",
    "vocab_size",
    "is_transformer",
    "flags",
    "compute_flop",
)
_REQUIRED_COLUMNS = ("model_name", "paper_id", "pub_date", "benchmark", "params", "dataset_tokens")


class DatasetError(ValueError):
    """Raised when a file cannot produce a usable dataset."""


def perplexity_to_loss(perplexity: float) -> float:
    return math.log(perplexity)


def loss_to_perplexity(loss: float) -> float:
    return math.exp(loss)


def fractional_year(date: _dt.date) -> float:
    """Calendar date as a fractional year, ``year + (day_of_year - 1) / 365.25``."""
    return date.year + (date.timetuple().tm_yday - 1) / 365.25


@dataclass(frozen=True)
class EvalRecord:
    model_name: str
    paper_id: str
    publication_year: float
    benchmark: str
    loss: float
    params_n: float
    dataset_tokens_d: float
    epochs: float | None = None
    vocab_size: int | None = None
    is_transformer: bool = False
    exclusion_flags: frozenset[str] = frozenset()
    compute_flop: float | None = None

    def __post_init__(self) -> None:
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {self.benchmark!r}; expected one of {BENCHMARKS}")
        if not (self.loss > 0 and math.isfinite(self.loss)):
            raise ValueError(f"loss must be positive and finite, got {self.loss}")
        if not self.params_n > 0:
            raise ValueError(f"params_n must be positive, got {self.params_n}")
        if not self.dataset_tokens_d > 0:
            raise ValueError(f"dataset_tokens_d must be positive, got {self.dataset_tokens_d}")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.vocab_size is not None and self.vocab_size <= 0:
            raise ValueError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.compute_flop is not None and not self.compute_flop > 0:
            raise ValueError(f"compute_flop must be positive, got {self.compute_flop}")
        unknown = set(self.exclusion_flags) - EXCLUSION_FLAGS
        if unknown:
            raise ValueError(f"unknown exclusion flags: {sorted(unknown)}")

    @property
    def perplexity(self) -> float:
        return loss_to_perplexity(self.loss)

    @property
    def compute(self) -> float:
        """Training compute in FLOP, ``6 N D`` unless given explicitly."""
        if self.compute_flop is not None:
            return self.compute_flop
        return 6.0 * self.params_n * self.dataset_tokens_d


@dataclass(frozen=True)
class Norms:
    """Normalising constants: minimum parameters, minimum data, reference year."""

    n0: float
    d0: float
    y0: float


@dataclass(frozen=True)
class Diagnostic:
    line: int
    model_name: str
    reason: str


@dataclass(frozen=True)
class Dataset:
    """Immutable, ordered collection of records with normalising constants.

    ``n0``, ``d0`` and ``y0`` default to the minima over the records. Explicit
    values are accepted as long as they lower-bound every record, which is
    what bootstrap resamples use to stay on the parent's normalisation.
    """

    records: tuple[EvalRecord, ...]
    n0: float = field(default=math.nan)
    d0: float = field(default=math.nan)
    y0: float = field(default=math.nan)
    diagnostics: tuple[Diagnostic, ...] = ()

    def __post_init__(self) -> None:
        recs = tuple(self.records)
        object.__setattr__(self, "records", recs)
        if not recs:
            raise DatasetError("dataset has no records")
        flagged = [r.model_name for r in recs if r.exclusion_flags]
        if flagged:
            raise DatasetError(f"records carry exclusion flags: {flagged[:5]}")
        mins = {
            "n0": min(r.params_n for r in recs),
            "d0": min(r.dataset_tokens_d for r in recs),
            "y0": min(r.publication_year for r in recs),
        }
        for name, lowest in mins.items():
            value = getattr(self, name)
            if math.isnan(value):
                object.__setattr__(self, name, lowest)
            elif value > lowest:
                raise DatasetError(f"{name}={value} exceeds the dataset minimum {lowest}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def norms(self) -> Norms:
        return Norms(self.n0, self.d0, self.y0)

    def with_records(self, records: Iterable[EvalRecord], *, keep_norms: bool = False) -> Dataset:
        """New dataset over ``records``; norms are recomputed unless ``keep_norms``."""
        if keep_norms:
            return Dataset(tuple(records), self.n0, self.d0, self.y0, self.diagnostics)
        return Dataset(tuple(records), diagnostics=self.diagnostics)


@dataclass(frozen=True)
class IngestOptions:
    exclude_flags: frozenset[str] = EXCLUSION_FLAGS
    reference_year: float | None = None
    loss_mismatch_rtol: float = 1e-6


def _parse_date(text: str) -> float:
    text = text.strip()
    try:
        return fractional_year(_dt.date.fromisoformat(text[:10]))
    except ValueError:
        pass
    # A bare fractional year such as 2019.12 is accepted as a convenience.
    value = float(text)
    if not 1900 < value < 2200:
        raise ValueError(f"unparseable publication date {text!r}")
    return value


def _opt_float(row: Mapping[str, str | None], key: str) -> float | None:
    raw = (row.get(key) or "").strip()
    return float(raw) if raw else None


def _parse_bool(text: str | None) -> bool:
    raw = (text or "").strip().lower()
    if raw in ("", "0", "false", "no"):
        return False
    if raw in ("1", "true", "yes"):
        return True
    raise ValueError(f"is_transformer must be 0/1, got {text!r}")


def parse_row(row: Mapping[str, str | None], options: IngestOptions = IngestOptions()) -> EvalRecord:
    """Convert one CSV row to a record. Raises ``ValueError`` with the reason."""
    for key in _REQUIRED_COLUMNS:
        if not (row.get(key) or "").strip():
            raise ValueError(f"missing {key}")
    loss = _opt_float(row, "loss")
    ppl = _opt_float(row, "perplexity")
    if loss is None and ppl is None:
        raise ValueError("missing loss and perplexity")
    if ppl is not None and ppl <= 1.0 and loss is None:
        raise ValueError(f"perplexity must exceed 1, got {ppl}")
    if loss is None:
        loss = perplexity_to_loss(ppl)
    elif ppl is not None and ppl > 0:
        implied = perplexity_to_loss(ppl)
        if abs(implied - loss) > options.loss_mismatch_rtol * abs(loss):
            raise ValueError(f"loss {loss} disagrees with ln(perplexity) = {implied}")
    flags_raw = (row.get("flags") or "").strip()
    flags = frozenset(f.strip().lower() for f in flags_raw.split(";") if f.strip())
    vocab = _opt_float(row, "vocab_size")
    return EvalRecord(
        model_name=row["model_name"].strip(),
        paper_id=row["paper_id"].strip(),
        publication_year=_parse_date(row["pub_date"]),
        benchmark=row["benchmark"].strip().upper(),
        loss=loss,
        params_n=float(row["params"]),
        dataset_tokens_d=float(row["dataset_tokens"]),
        epochs=_opt_float(row, "epochs"),
        vocab_size=int(vocab) if vocab is not None else None,
        is_transformer=_parse_bool(row.get("is_transformer")),
        exclusion_flags=flags,
        compute_flop=_opt_float(row, "compute_flop"),
    )


def read_records(
    path: str | Path, options: IngestOptions = IngestOptions()
) -> tuple[list[EvalRecord], list[Diagnostic], int]:
    """Parse every row of ``path``.

    Returns the surviving records, per-row diagnostics and the number of rows
    removed by exclusion flags. Raises ``DatasetError`` if the file cannot be
    read or has no header.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(text.splitlines())
    if not reader.fieldnames:
        raise DatasetError(f"{path} has no header row")
    missing = [c for c in _REQUIRED_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise DatasetError(f"{path} is missing required columns {missing}")

    records: list[EvalRecord] = []
    diagnostics: list[Diagnostic] = []
    n_excluded = 0
    for lineno, row in enumerate(reader, start=2):
        name = (row.get("model_name") or "").strip()
        try:
            rec = parse_row(row, options)
        except (ValueError, TypeError) as exc:
            diagnostics.append(Diagnostic(lineno, name, str(exc)))
            logger.info("line %d (%s) skipped: %s", lineno, name, exc)
            continue
        hit = rec.exclusion_flags & options.exclude_flags
        if hit:
            n_excluded += 1
            logger.debug("line %d (%s) excluded: %s", lineno, name, ",".join(sorted(hit)))
            continue
        records.append(replace(rec, exclusion_flags=frozenset()))
    return records, diagnostics, n_excluded


def load_dataset(path: str | Path, options: IngestOptions = IngestOptions()) -> Dataset:
    records, diagnostics, _ = read_records(path, options)
    if not records:
        raise DatasetError(f"no usable records in {path}")
    y0 = options.reference_year if options.reference_year is not None else math.nan
    return Dataset(tuple(records), y0=y0, diagnostics=tuple(diagnostics))


def cap_per_paper(ds: Dataset, cap: int) -> Dataset:
    """Keep at most ``cap`` lowest-loss records per paper (file order breaks ties).

    Surviving records keep their original relative order.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    by_paper: dict[str, list[int]] = {}
    for i, rec in enumerate(ds.records):
        by_paper.setdefault(rec.paper_id, []).append(i)
    keep: set[int] = set()
    for idx in by_paper.values():
        keep.update(sorted(idx, key=lambda i: (ds.records[i].loss, i))[:cap])
    return ds.with_records(r for i, r in enumerate(ds.records) if i in keep)


def effective_data(
    rec: EvalRecord,
    mode: str = "dataset_size",
    impute_missing_epochs: bool = True,
    *,
    decay: float = 0.5,
    full_weight_epochs: int = 4,
) -> float | None:
    """Training-data quantity used in place of ``D``.

    ``None`` means the record must be dropped: the mode needs an epoch count,
    the record has none and imputation is off. Under the diminishing-returns
    mode epoch ``i`` is weighted ``decay ** max(0, i - full_weight_epochs)``
    and a fractional final epoch contributes pro rata.
    """
    if mode not in DATA_MODES:
        raise ValueError(f"unknown data mode {mode!r}")
    d = rec.dataset_tokens_d
    if mode == "dataset_size":
        return d
    epochs = rec.epochs
    if epochs is None:
        if not impute_missing_epochs:
            return None
        epochs = 1.0
    if mode == "tokens_seen":
        return epochs * d
    total = 0.0
    for i in range(1, math.ceil(epochs) + 1):
        weight = decay ** max(0, i - full_weight_epochs)
        total += weight * min(1.0, epochs - (i - 1))
    return d * total


def estimate_epochs(context_tokens: int, batch_size: int, steps: int, pretrain_tokens: float) -> float:
    if pretrain_tokens <= 0:
        raise ValueError("pretrain_tokens must be positive")
    if context_tokens <= 0 or batch_size <= 0 or steps < 0:
        raise ValueError("context_tokens and batch_size must be positive, steps non-negative")
    return context_tokens * batch_size * steps / pretrain_tokens


def generate_synthetic(
    spec: ModelSpec,
    theta: Mapping[str, float],
    n_records: int,
    noise_sigma: float,
    seed: int,
    *,
    log10_n_range: tuple[float, float] = (6.0, 11.0),
    log10_d_range: tuple[float, float] = (6.0, 11.0),
    year_range: tuple[float, float] = (2012.0, 2023.0),
    transformer_share: float = 0.5,
    n_papers: int | None = None,
    paper_rho: float = 0.0,
) -> Dataset:
    """Draw a dataset whose losses follow ``spec`` under ``theta`` plus noise.

    With ``n_papers`` set, records are dealt to papers uniformly at random and
    the noise is equicorrelated within a paper (correlation ``paper_rho``).
    """
    from .zoo import predict_many

    if n_records < 1:
        raise ValueError("n_records must be at least 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if not 0.0 <= paper_rho < 1.0:
        raise ValueError("paper_rho must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    log_n = rng.uniform(*log10_n_range, n_records) * math.log(10)
    log_d = rng.uniform(*log10_d_range, n_records) * math.log(10)
    years = rng.uniform(*year_range, n_records)
    bench = rng.integers(0, len(BENCHMARKS), n_records)
    is_t = rng.random(n_records) < transformer_share
    if n_papers is None:
        papers = np.arange(n_records)
    else:
        papers = rng.integers(0, n_papers, n_records)

    records = [
        EvalRecord(
            model_name=f"synth-{i:05d}",
            paper_id=f"paper-{int(papers[i]):04d}",
            publication_year=float(years[i]),
            benchmark=BENCHMARKS[int(bench[i])],
            loss=1.0,
            params_n=float(math.exp(log_n[i])),
            dataset_tokens_d=float(math.exp(log_d[i])),
            vocab_size=DEFAULT_VOCAB[BENCHMARKS[int(bench[i])]],
            is_transformer=bool(is_t[i]),
        )
        for i in range(n_records)
    ]
    template = Dataset(tuple(records))
    mean = predict_many(spec, theta, records, template.norms)

    noise = np.zeros(n_records)
    if noise_sigma > 0:
        if n_papers is None or paper_rho == 0.0:
            noise = rng.normal(0.0, noise_sigma, n_records)
        else:
            shared = rng.normal(0.0, 1.0, n_papers)[papers]
            own = rng.normal(0.0, 1.0, n_records)
            noise = noise_sigma * (math.sqrt(paper_rho) * shared + math.sqrt(1 - paper_rho) * own)
    losses = mean + noise
    if np.any(losses <= 0) or not np.all(np.isfinite(losses)):
        raise ValueError("synthetic losses are not all positive; lower noise_sigma or change theta")
    out = [replace(r, loss=float(l)) for r, l in zip(records, losses)]
    return template.with_records(out, keep_norms=True)


def write_csv(ds: Dataset | Sequence[EvalRecord], path: str | Path) -> None:
    """Write records in the ingestion schema (``repr`` floats, so reload is exact)."""
    records = ds.records if isinstance(ds, Dataset) else tuple(ds)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.model_name,
                    r.paper_id,
                    repr(r.publication_year),
                    r.benchmark,
                    "",
                    repr(r.loss),
                    repr(r.params_n),
                    repr(r.dataset_tokens_d),
                    "" if r.epochs is None else repr(r.epochs),
                    "" if r.vocab_size is None else str(r.vocab_size),
                    int(r.is_transformer),
                    ";".join(sorted(r.exclusion_flags)),
                    "" if r.compute_flop is None else repr(r.compute_flop),
                ]
            )
