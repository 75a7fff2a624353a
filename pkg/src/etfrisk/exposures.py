"""
ETF exposures to constituent attributes.

Exposures aggregate constituent weights over a membership matrix:
``W[i, A] = sum_a omega[i, a] * Lambda[a, A]``, where constituents without the
attribute are left out of the sum (their weight is not redistributed unless
``renormalize`` is set). The same machinery handles sectors, asset classes,
tranches of scalar attributes, and duration buckets.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import ConfigError, DataError, HoldingsTable, Security

BROAD = "Broad"
TIE_GUARD = 1e-9
DEFAULT_WSTAR = 0.5
DEFAULT_MIN_COVERAGE = 0.5


class Mode(str, Enum):
    BINARY = "binary"
    WEIGHTED = "weighted"


@dataclass(frozen=True, eq=False)
class ExposureMatrix:
    etf_ids: tuple[str, ...]
    category_ids: tuple[str, ...]
    W: np.ndarray
    coverage: np.ndarray

    def row(self, etf_id: str) -> dict[str, float]:
        i = self.etf_ids.index(etf_id)
        return {c: float(self.W[i, k]) for k, c in enumerate(self.category_ids) if self.W[i, k] != 0}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("etf_id", "category", "weight"))
            for i, etf_id in enumerate(self.etf_ids):
                for k, c in enumerate(self.category_ids):
                    if self.W[i, k] != 0:
                        w.writerow((etf_id, c, repr(float(self.W[i, k]))))


@dataclass(frozen=True)
class ThresholdedClassification:
    """Per-ETF outcome: a category id, a ``{category: weight}`` dict, or ``BROAD``."""

    mode: Mode
    threshold: float
    assignments: Mapping[str, str | dict[str, float]]

    def is_broad(self, etf_id: str) -> bool:
        return self.assignments[etf_id] == BROAD

    def label(self, etf_id: str, broad: str = BROAD) -> str:
        a = self.assignments[etf_id]
        if a == BROAD:
            return broad
        if isinstance(a, str):
            return a
        return max(sorted(a), key=a.__getitem__)


@dataclass(frozen=True)
class TrancheSpec:
    boundaries: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.boundaries) + 1:
            raise ConfigError("a tranche spec needs exactly one more label than boundaries")
        if any(b <= a for a, b in zip(self.boundaries, self.boundaries[1:])):
            raise ConfigError("tranche boundaries must be strictly increasing")

    def tranche(self, value: float) -> str:
        # tranche A holds C(A-1) < value <= C(A)
        return self.labels[bisect.bisect_left(self.boundaries, value)]


DURATION_BUCKETS = TrancheSpec((1.0, 3.0, 10.0), ("ultra-short", "short", "intermediate", "long"))
ALL_DURATION = "all-duration"
CAP_TRANCHES = TrancheSpec((3e8, 2e9, 1e10, 2e11), ("micro", "small", "mid", "large", "mega"))


# ---------------------------------------------------------------------------
# membership helpers
# ---------------------------------------------------------------------------


def sector_path(name: str, depth: int) -> str:
    """Truncate a ``Sector/Industry/Sub-industry`` path to ``depth`` components."""
    return "/".join(name.split("/")[:depth])


def sector_membership(securities: Iterable[Security], depth: int = 1,
                      asset_class=None) -> dict[str, dict[str, float]]:
    """Security -> ``{sector path: weight}`` truncated to ``depth`` levels."""
    out = {}
    for s in securities:
        if asset_class is not None and s.asset_class != asset_class:
            continue
        if not s.sector_weights:
            continue
        row: dict[str, float] = {}
        for name, w in s.sector_weights.items():
            key = sector_path(name, depth)
            row[key] = row.get(key, 0.0) + w
        out[s.id] = row
    return out


def attribute_membership(securities: Iterable[Security],
                         getter: Callable[[Security], object]) -> dict[str, dict[str, float]]:
    """Security -> ``{label: 1.0}`` for a single-valued attribute; missing values skipped."""
    out = {}
    for s in securities:
        v = getter(s)
        if v is None:
            continue
        out[s.id] = {str(getattr(v, "value", v)): 1.0}
    return out


# ---------------------------------------------------------------------------
# exposures
# ---------------------------------------------------------------------------


def compute_exposures(holdings: HoldingsTable, membership: Mapping[str, Mapping[str, float]],
                      etf_ids: Sequence[str] | None = None,
                      categories: Sequence[str] | None = None,
                      renormalize: bool = False) -> ExposureMatrix:
    """Exposure of every ETF to every category.

    ``membership`` maps security id to its category weights; securities absent
    from it lack the attribute and drop out of the sum. ETFs without holdings
    (or without any covered holding) get an all-zero row and coverage 0.
    """
    etf_ids = tuple(holdings.etf_ids if etf_ids is None else etf_ids)
    if categories is None:
        categories = sorted({c for row in membership.values() for c in row})
    categories = tuple(categories)
    cidx = {c: k for k, c in enumerate(categories)}
    eidx = {e: k for k, e in enumerate(etf_ids)}
    W = np.zeros((len(etf_ids), len(categories)))
    coverage = np.zeros(len(etf_ids))
    for etf_id, sec_id, w in holdings.entries:
        i = eidx.get(etf_id)
        row = membership.get(sec_id)
        if i is None or not row:
            continue
        coverage[i] += w
        for c, lam in row.items():
            if c in cidx:
                W[i, cidx[c]] += w * lam
    if renormalize:
        nz = coverage > 0
        W[nz] /= coverage[nz, None]
    return ExposureMatrix(etf_ids, categories, W, coverage)


def threshold_exposures(E: ExposureMatrix, wstar: float = DEFAULT_WSTAR, mode: Mode | str = Mode.BINARY,
                        guard: float = 0.0, min_coverage: float = 0.0) -> ThresholdedClassification:
    """Zero exposures below the threshold and classify each ETF.

    An entry survives when ``W >= wstar + guard``. Rows with no survivor, or
    with coverage below ``min_coverage``, are ``BROAD``. Binary mode needs an
    effective threshold above 0.5 so that at most one category can survive;
    weighted mode renormalizes the survivors to sum to 1.
    """
    mode = Mode(mode)
    cut = wstar + guard
    if not 0 < cut <= 1 + guard:
        raise ConfigError(f"threshold must lie in (0, 1], got {wstar}")
    if mode is Mode.BINARY and cut <= 0.5:
        raise ConfigError(f"binary thresholding needs W_* > 0.5 (got {cut}); use the tie guard")
    out: dict[str, str | dict[str, float]] = {}
    for i, etf_id in enumerate(E.etf_ids):
        row = E.W[i]
        keep = np.flatnonzero(row >= cut)
        if keep.size == 0 or E.coverage[i] < min_coverage:
            out[etf_id] = BROAD
        elif mode is Mode.BINARY:
            if keep.size > 1:
                raise DataError(f"{etf_id}: exposures sum above 1, two categories survive")
            out[etf_id] = E.category_ids[int(keep[0])]
        else:
            total = float(row[keep].sum())
            out[etf_id] = {E.category_ids[k]: float(row[k]) / total for k in keep}
    return ThresholdedClassification(mode, cut, out)


def tranche_membership(values: Mapping[str, float | None], spec: TrancheSpec) -> dict[str, dict[str, float]]:
    out = {}
    for sec_id, v in values.items():
        if v is None or (isinstance(v, float) and math.isnan(v)):
            continue
        if v < 0:
            raise DataError(f"security {sec_id}: negative value {v}")
        out[sec_id] = {spec.tranche(v): 1.0}
    return out


def tranche_exposures(holdings: HoldingsTable, values: Mapping[str, float | None], spec: TrancheSpec,
                      etf_ids: Sequence[str] | None = None) -> ExposureMatrix:
    """Exposures to the tranches of a scalar constituent attribute (cap, duration)."""
    return compute_exposures(holdings, tranche_membership(values, spec), etf_ids, spec.labels)


def _weighted_average(holdings: HoldingsTable, values: Mapping[str, float | None],
                      etf_ids: Sequence[str] | None, renormalize: bool):
    etf_ids = tuple(holdings.etf_ids if etf_ids is None else etf_ids)
    eidx = {e: k for k, e in enumerate(etf_ids)}
    total = np.zeros(len(etf_ids))
    coverage = np.zeros(len(etf_ids))
    for etf_id, sec_id, w in holdings.entries:
        i = eidx.get(etf_id)
        v = values.get(sec_id)
        if i is None or v is None:
            continue
        total[i] += w * v
        coverage[i] += w
    if renormalize:
        nz = coverage > 0
        total[nz] /= coverage[nz]
    return etf_ids, total, coverage


@dataclass(frozen=True, eq=False)
class CapFactors:
    etf_ids: tuple[str, ...]
    cap: np.ndarray
    log_cap: np.ndarray
    coverage: np.ndarray


def cap_factor(holdings: HoldingsTable, caps: Mapping[str, float | None],
               etf_ids: Sequence[str] | None = None, renormalize: bool = False) -> CapFactors:
    """Cap-weighted exposure ``sum w * C`` and its log version ``sum w * ln C``."""
    for sec_id, c in caps.items():
        if c is not None and not c > 0:
            raise DataError(f"security {sec_id}: market cap must be positive, got {c}")
    ids, cap, cov = _weighted_average(holdings, caps, etf_ids, renormalize)
    logs = {k: (math.log(v) if v is not None else None) for k, v in caps.items()}
    _, log_cap, _ = _weighted_average(holdings, logs, ids, renormalize)
    return CapFactors(ids, cap, log_cap, cov)


# ---------------------------------------------------------------------------
# credit ratings
# ---------------------------------------------------------------------------

SP_NOTCHES = (
    "AAA", "AA+", "AA", "AA-", "A+", "A", "A-", "BBB+", "BBB", "BBB-",
    "BB+", "BB", "BB-", "B+", "B", "B-", "CCC+", "CCC", "CCC-", "CC", "C",
)
COARSE_NOTCHES = ("AAA", "AA", "A", "BBB", "BB", "B", "CCC")
INVESTMENT_GRADE = "Investment-Grade"
HIGH_YIELD = "High-Yield"


@dataclass(frozen=True)
class RatingScale:
    """Ordered rating labels (best first) with a numeric value per label.

    ``ig_floor`` is the worst label still counted as investment grade.
    """

    labels: tuple[str, ...]
    values: Mapping[str, float]
    ig_floor: str

    def __post_init__(self):
        missing = [r for r in self.labels if r not in self.values]
        if missing:
            raise ConfigError(f"rating table lacks values for {missing}")
        if self.ig_floor not in self.labels:
            raise ConfigError(f"unknown investment-grade floor {self.ig_floor!r}")

    def nearest(self, value: float) -> str:
        # ties go to the better rating, which comes first
        return min(self.labels, key=lambda r: (abs(self.values[r] - value), self.labels.index(r)))

    def group(self, label: str) -> str:
        return INVESTMENT_GRADE if self.labels.index(label) <= self.labels.index(self.ig_floor) else HIGH_YIELD

    def relabel(self, mapping: Mapping[str, str]) -> RatingScale:
        return RatingScale(tuple(mapping[r] for r in self.labels),
                           {mapping[r]: v for r, v in self.values.items()}, mapping[self.ig_floor])


def linear_scale(labels: Sequence[str] = COARSE_NOTCHES, start: int = 1, ig_floor: str = "BBB") -> RatingScale:
    """Linear scoring: best label gets ``start``, each step down adds one."""
    return RatingScale(tuple(labels), {r: float(start + k) for k, r in enumerate(labels)}, ig_floor)


LINEAR_SCORES = linear_scale()
LINEAR_SCORES_NOTCHED = linear_scale(SP_NOTCHES, ig_floor="BBB-")

# Illustrative default rates in percent for tests and demos. Not authoritative:
# production use must supply a table from a published default study.
SAMPLE_DEFAULT_RATES = RatingScale(
    COARSE_NOTCHES,
    {"AAA": 0.01, "AA": 0.02, "A": 0.06, "BBB": 0.20, "BB": 0.80, "B": 4.0, "CCC": 25.0},
    "BBB",
)


class RatingMethod(str, Enum):
    LINEAR = "linear"
    DEFAULT_RATE = "default_rate"


@dataclass(frozen=True, eq=False)
class CreditRatingResult:
    etf_ids: tuple[str, ...]
    value: np.ndarray
    labels: tuple[str | None, ...]
    groups: tuple[str | None, ...]
    coverage: np.ndarray


def average_credit_rating(holdings: HoldingsTable, ratings: Mapping[str, str | None],
                          method: RatingMethod | str = RatingMethod.LINEAR,
                          scores: RatingScale = LINEAR_SCORES,
                          default_rates: RatingScale | None = None,
                          etf_ids: Sequence[str] | None = None,
                          renormalize: bool = False) -> CreditRatingResult:
    """Weight-averaged credit rating per ETF, mapped back to the nearest label."""
    method = RatingMethod(method)
    table = scores if method is RatingMethod.LINEAR else default_rates
    if table is None:
        raise ConfigError("the default-rate method needs a default-rate table")
    numeric = {}
    for sec_id, r in ratings.items():
        if r is None:
            continue
        if r not in table.values:
            raise ConfigError(f"rating {r!r} of {sec_id} is not in the {method.value} table")
        numeric[sec_id] = table.values[r]
    ids, value, cov = _weighted_average(holdings, numeric, etf_ids, renormalize)
    labels = tuple(table.nearest(v) if c > 0 else None for v, c in zip(value, cov))
    groups = tuple(table.group(lb) if lb is not None else None for lb in labels)
    return CreditRatingResult(ids, value, labels, groups, cov)


# ---------------------------------------------------------------------------
# duration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DurationResult:
    etf_ids: tuple[str, ...]
    average: np.ndarray
    average_bucket: tuple[str | None, ...]
    exposures: ExposureMatrix
    classification: ThresholdedClassification

    def bucket(self, etf_id: str) -> str:
        return self.classification.label(etf_id, broad=ALL_DURATION)


def average_duration(holdings: HoldingsTable, durations: Mapping[str, float | None],
                     buckets: TrancheSpec = DURATION_BUCKETS, wstar: float = DEFAULT_WSTAR,
                     guard: float = TIE_GUARD, mode: Mode | str = Mode.BINARY,
                     etf_ids: Sequence[str] | None = None) -> DurationResult:
    """Average duration, bucket exposures and thresholded bucket per ETF.

    ETFs not concentrated in any bucket are labelled ``all-duration``.
    """
    for sec_id, d in durations.items():
        if d is not None and d < 0:
            raise DataError(f"security {sec_id}: negative duration {d}")
    ids, avg, cov = _weighted_average(holdings, durations, etf_ids, False)
    by_avg = tuple(buckets.tranche(a) if c > 0 else None for a, c in zip(avg, cov))
    E = tranche_exposures(holdings, durations, buckets, ids)
    cls = threshold_exposures(E, wstar, mode, guard)
    return DurationResult(ids, avg, by_avg, E, cls)


def read_value_table(path: str | Path) -> dict[str, float]:
    """Read a ``label,value`` CSV (rating or duration tables)."""
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["label"]: float(row["value"]) for row in csv.DictReader(fh)}


def write_value_table(table: Mapping[str, float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "value"))
        for k, v in table.items():
            w.writerow((k, repr(float(v))))
