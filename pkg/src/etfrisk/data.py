"""
Domain types, CSV ingestion and taxonomy persistence.

A universe arrives as four files keyed by id (``etfs.csv``, ``securities.csv``,
``holdings.csv``, ``returns.csv``). Missing values are written as ``NA`` in
every file. Taxonomies are stored in a tab-separated, line-oriented text
format described in :func:`save_taxonomy`.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

NA = "NA"
MULTI_ASSET = "MultiAsset"
OTHER_SUFFIX = " – Other"

ETF_COLUMNS = (
    "id", "name", "asset_class", "addv", "thirdparty_category",
    "cap_tranche", "style", "region", "duration_bucket",
)
SECURITY_COLUMNS = (
    "id", "asset_class", "sector", "market_cap", "credit_rating",
    "duration_years", "style", "region",
)
HOLDINGS_COLUMNS = ("etf_id", "security_id", "weight")
RETURNS_COLUMNS = ("etf_id", "date", "return")
ETF_ATTRIBUTES = ("cap_tranche", "style", "region", "duration_bucket")


class AssetClass(str, Enum):
    EQUITY = "Equity"
    BOND = "Bond"
    COMMODITY = "Commodity"
    CURRENCY = "Currency"
    REAL_ESTATE = "RealEstate"
    VOLATILITY = "Volatility"
    OTHER = "Other"


class Style(str, Enum):
    VALUE = "Value"
    GROWTH = "Growth"
    BLEND = "Blend"


ETF_ASSET_CLASSES = frozenset([a.value for a in AssetClass] + [MULTI_ASSET])


def other_category(asset_class: str | None) -> str:
    """Catch-all category name for an asset class, e.g. ``"Volatility – Other"``."""
    return f"{asset_class or AssetClass.OTHER.value}{OTHER_SUFFIX}"


class DataError(Exception):
    """Base class for input problems."""


class ConfigError(DataError):
    """A parameter or lookup table is unusable."""


@dataclass(frozen=True)
class Issue:
    file: str
    line: int
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.file}:{self.line}: {self.field}: {self.message}"


class ValidationError(DataError):
    """One or more ingestion problems, each tied to a file, line and field."""

    def __init__(self, issues: list[Issue]):
        self.issues = list(issues)
        head = str(self.issues[0]) if self.issues else "validation failed"
        more = f" (+{len(self.issues) - 1} more)" if len(self.issues) > 1 else ""
        super().__init__(head + more)


class TaxonomyError(DataError):
    """A taxonomy violates its invariants or its file is malformed."""


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Security:
    id: str
    asset_class: AssetClass
    sector_weights: Mapping[str, float] = field(default_factory=dict)
    market_cap: float | None = None
    credit_rating: str | None = None
    duration_years: float | None = None
    style: Style | None = None
    region: str | None = None

    def __post_init__(self):
        if self.sector_weights:
            total = sum(self.sector_weights.values())
            if abs(total - 1.0) > 1e-9:
                raise DataError(f"security {self.id}: sector weights sum to {total!r}")
            if any(w < 0 or w > 1 for w in self.sector_weights.values()):
                raise DataError(f"security {self.id}: sector weight outside [0, 1]")
        if self.market_cap is not None and not self.market_cap > 0:
            raise DataError(f"security {self.id}: market cap must be positive")
        if self.duration_years is not None and self.duration_years < 0:
            raise DataError(f"security {self.id}: negative duration")


@dataclass(frozen=True)
class Etf:
    id: str
    name: str = ""
    asset_class: str | None = None
    addv: float | None = None
    thirdparty_category: str | None = None
    attributes: Mapping[str, str | None] = field(default_factory=dict)


@dataclass(frozen=True)
class HoldingsTable:
    """Sparse ETF -> constituent weights, sorted by (etf_id, security_id)."""

    entries: tuple[tuple[str, str, float], ...]

    def __post_init__(self):
        seen = set()
        for etf_id, sec_id, _ in self.entries:
            if (etf_id, sec_id) in seen:
                raise DataError(f"duplicate holding ({etf_id}, {sec_id})")
            seen.add((etf_id, sec_id))

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, float]]) -> HoldingsTable:
        return cls(tuple(sorted((e, s, float(w)) for e, s, w in rows)))

    @property
    def etf_ids(self) -> list[str]:
        return sorted({e for e, _, _ in self.entries})

    @property
    def security_ids(self) -> list[str]:
        return sorted({s for _, s, _ in self.entries})

    def rows(self) -> dict[str, list[tuple[str, float]]]:
        out: dict[str, list[tuple[str, float]]] = defaultdict(list)
        for etf_id, sec_id, w in self.entries:
            out[etf_id].append((sec_id, w))
        return dict(out)

    def row_sums(self) -> dict[str, float]:
        out: dict[str, float] = defaultdict(float)
        for etf_id, _, w in self.entries:
            out[etf_id] += w
        return dict(out)

    def matrix(self, etf_ids: list[str] | None = None,
               security_ids: list[str] | None = None) -> np.ndarray:
        """Dense ``len(etf_ids) x len(security_ids)`` weight matrix."""
        etf_ids = self.etf_ids if etf_ids is None else etf_ids
        security_ids = self.security_ids if security_ids is None else security_ids
        ei = {e: k for k, e in enumerate(etf_ids)}
        si = {s: k for k, s in enumerate(security_ids)}
        out = np.zeros((len(etf_ids), len(security_ids)))
        for etf_id, sec_id, w in self.entries:
            if etf_id in ei and sec_id in si:
                out[ei[etf_id], si[sec_id]] = w
        return out


@dataclass(frozen=True, eq=False)
class ReturnsPanel:
    """N x T returns; missing cells hold NaN and are flagged in ``missing_mask``."""

    etf_ids: tuple[str, ...]
    dates: tuple[dt.date, ...]
    values: np.ndarray
    missing_mask: np.ndarray

    def __post_init__(self):
        n, t = len(self.etf_ids), len(self.dates)
        if self.values.shape != (n, t) or self.missing_mask.shape != (n, t):
            raise DataError(f"panel shape {self.values.shape} does not match {n} ids x {t} dates")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("panel dates must be strictly increasing")
        if len(set(self.etf_ids)) != n:
            raise DataError("duplicate ETF id in panel")

    @classmethod
    def from_array(cls, etf_ids, dates, values) -> ReturnsPanel:
        values = np.array(values, dtype=float)
        mask = np.isnan(values)
        return cls(tuple(etf_ids), tuple(dates), values, mask)

    def __eq__(self, other):
        if not isinstance(other, ReturnsPanel):
            return NotImplemented
        return (self.etf_ids == other.etf_ids and self.dates == other.dates
                and np.array_equal(self.missing_mask, other.missing_mask)
                and np.array_equal(self.values, other.values, equal_nan=True))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def index(self) -> dict[str, int]:
        return {e: k for k, e in enumerate(self.etf_ids)}

    def tail(self, lookback: int) -> ReturnsPanel:
        if lookback > len(self.dates):
            raise DataError(f"lookback {lookback} exceeds panel length {len(self.dates)}")
        return ReturnsPanel(self.etf_ids, self.dates[-lookback:],
                            self.values[:, -lookback:].copy(),
                            self.missing_mask[:, -lookback:].copy())

    def subset(self, etf_ids: Iterable[str]) -> ReturnsPanel:
        idx = self.index()
        ids = tuple(etf_ids)
        rows = [idx[e] for e in ids]
        return ReturnsPanel(ids, self.dates, self.values[rows].copy(),
                            self.missing_mask[rows].copy())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RETURNS_COLUMNS)
            for i, etf_id in enumerate(self.etf_ids):
                for s, day in enumerate(self.dates):
                    v = NA if self.missing_mask[i, s] else repr(float(self.values[i, s]))
                    w.writerow((etf_id, day.isoformat(), v))


class LevelKind(str, Enum):
    BINARY = "binary"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class TaxonomyLevel:
    """One level of a taxonomy.

    ``assignment`` maps ETF id to a category id (binary) or to a
    ``{category: weight}`` dict (weighted). ``parent_map`` sends every category
    of this level to one category of the next level and is ``None`` at the top.
    """

    name: str
    kind: LevelKind
    categories: tuple[str, ...]
    assignment: Mapping
    parent_map: Mapping[str, str] | None = None

    @property
    def etf_ids(self) -> list[str]:
        return sorted(self.assignment)

    def members(self, category: str) -> list[str]:
        if self.kind is LevelKind.BINARY:
            return sorted(e for e, c in self.assignment.items() if c == category)
        return sorted(e for e, ws in self.assignment.items() if ws.get(category, 0.0) > 0)

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {c: [] for c in self.categories}
        for etf_id in self.etf_ids:
            if self.kind is LevelKind.BINARY:
                out[self.assignment[etf_id]].append(etf_id)
            else:
                for c, w in self.assignment[etf_id].items():
                    if w > 0:
                        out[c].append(etf_id)
        return out

    def sizes(self) -> dict[str, int]:
        return {c: len(m) for c, m in self.groups().items()}

    def weight_matrix(self, etf_ids: Iterable[str]) -> np.ndarray:
        cidx = {c: k for k, c in enumerate(self.categories)}
        etf_ids = list(etf_ids)
        out = np.zeros((len(etf_ids), len(self.categories)))
        for i, e in enumerate(etf_ids):
            a = self.assignment[e]
            if self.kind is LevelKind.BINARY:
                out[i, cidx[a]] = 1.0
            else:
                for c, w in a.items():
                    out[i, cidx[c]] = w
        return out

    def validate(self) -> None:
        cats = set(self.categories)
        if len(cats) != len(self.categories):
            raise TaxonomyError(f"level {self.name}: duplicate category id")
        for etf_id, a in self.assignment.items():
            if self.kind is LevelKind.BINARY:
                if a not in cats:
                    raise TaxonomyError(f"level {self.name}: {etf_id} assigned to unknown category {a!r}")
                continue
            if not a:
                raise TaxonomyError(f"level {self.name}: {etf_id} has no weights")
            for c, w in a.items():
                if c not in cats:
                    raise TaxonomyError(f"level {self.name}: {etf_id} weighted on unknown category {c!r}")
                if w < 0:
                    raise TaxonomyError(f"level {self.name}: {etf_id} has a negative weight")
            total = sum(a.values())
            if abs(total - 1.0) > 1e-9:
                raise TaxonomyError(f"level {self.name}: weights of {etf_id} sum to {total!r}")


@dataclass(frozen=True)
class Taxonomy:
    levels: tuple[TaxonomyLevel, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def level(self, name_or_index: str | int) -> TaxonomyLevel:
        if isinstance(name_or_index, int):
            return self.levels[name_or_index]
        for lv in self.levels:
            if lv.name == name_or_index:
                return lv
        raise KeyError(name_or_index)

    def validate(self) -> None:
        if not self.levels:
            raise TaxonomyError("taxonomy has no levels")
        names = [lv.name for lv in self.levels]
        if len(set(names)) != len(names):
            raise TaxonomyError("duplicate level name")
        for k, lv in enumerate(self.levels):
            lv.validate()
            top = k == len(self.levels) - 1
            if top:
                if lv.parent_map is not None:
                    raise TaxonomyError(f"top level {lv.name} must not have a parent map")
                continue
            if lv.parent_map is None or set(lv.parent_map) != set(lv.categories):
                raise TaxonomyError(f"level {lv.name}: parent map must cover every category")
            upper = self.levels[k + 1]
            bad = [c for c, p in lv.parent_map.items() if p not in set(upper.categories)]
            if bad:
                raise TaxonomyError(f"level {lv.name}: {bad[0]!r} maps to an unknown parent")
            if lv.kind is LevelKind.BINARY and upper.kind is LevelKind.BINARY:
                for etf_id, c in lv.assignment.items():
                    p = upper.assignment.get(etf_id)
                    if p is not None and p != lv.parent_map[c]:
                        raise TaxonomyError(
                            f"level {lv.name}: {etf_id} in {c!r} whose parent is "
                            f"{lv.parent_map[c]!r} but is assigned {p!r} at level {upper.name}")


def binary_level(name: str, assignment: Mapping[str, str],
                 parent_map: Mapping[str, str] | None = None,
                 categories: Iterable[str] | None = None) -> TaxonomyLevel:
    """Binary level with categories in sorted order unless given."""
    cats = tuple(categories) if categories is not None else tuple(sorted(set(assignment.values())))
    pm = None if parent_map is None else {c: parent_map[c] for c in cats}
    return TaxonomyLevel(name, LevelKind.BINARY, cats, dict(assignment), pm)


def two_level(level1: TaxonomyLevel, name: str = "asset_class",
              metadata: Mapping[str, str] | None = None) -> Taxonomy:
    """Stack a binary level with a parent map under the level its parents form."""
    if level1.parent_map is None:
        raise TaxonomyError("level needs a parent map")
    parents = sorted(set(level1.parent_map.values()))
    if level1.kind is LevelKind.BINARY:
        top_assign = {e: level1.parent_map[c] for e, c in level1.assignment.items()}
    else:
        top_assign = {}
        for e, ws in level1.assignment.items():
            # dominant parent by weight, ties to the first parent id
            acc: dict[str, float] = defaultdict(float)
            for c, w in ws.items():
                acc[level1.parent_map[c]] += w
            top_assign[e] = max(sorted(acc), key=lambda p: acc[p])
    top = TaxonomyLevel(name, LevelKind.BINARY, tuple(parents), top_assign, None)
    return Taxonomy((level1, top), dict(metadata or {}))


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IngestConfig:
    weight_tolerance: float = 1e-6
    renormalize: bool = False


@dataclass
class IngestReport:
    n_etfs: int = 0
    n_securities: int = 0
    n_holdings: int = 0
    n_dates: int = 0
    etfs_without_holdings: list[str] = field(default_factory=list)
    etfs_without_returns: list[str] = field(default_factory=list)
    renormalized: list[str] = field(default_factory=list)
    missing_returns_fraction: float = 0.0
    sector_coverage: dict[str, float] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [
            f"etfs={self.n_etfs}",
            f"securities={self.n_securities}",
            f"holdings={self.n_holdings}",
            f"dates={self.n_dates}",
            f"missing_returns_fraction={self.missing_returns_fraction:.6f}",
            f"etfs_without_holdings={','.join(self.etfs_without_holdings)}",
            f"etfs_without_returns={','.join(self.etfs_without_returns)}",
            f"renormalized={','.join(self.renormalized)}",
        ]
        out += [f"sector_coverage[{k}]={v:.6f}" for k, v in sorted(self.sector_coverage.items())]
        return out


@dataclass(frozen=True, eq=False)
class Universe:
    etfs: tuple[Etf, ...]
    securities: tuple[Security, ...]
    holdings: HoldingsTable
    returns: ReturnsPanel
    report: IngestReport

    def etf_map(self) -> dict[str, Etf]:
        return {e.id: e for e in self.etfs}

    def security_map(self) -> dict[str, Security]:
        return {s.id: s for s in self.securities}


def _na(value: str) -> str | None:
    value = value.strip()
    return None if value == NA or value == "" else value


def _read_csv(path: Path, columns: tuple[str, ...], issues: list[Issue]):
    name = path.name
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            issues.append(Issue(name, 1, "header", "file is empty"))
            return
        missing = [c for c in columns if c not in header]
        extra = [c for c in header if c not in columns]
        for c in missing:
            issues.append(Issue(name, 1, c, "missing column"))
        for c in extra:
            issues.append(Issue(name, 1, c, "unexpected column"))
        if missing or extra:
            return
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                issues.append(Issue(name, lineno, "row", f"expected {len(header)} fields, got {len(row)}"))
                continue
            yield lineno, dict(zip(header, row))


def _float(raw: str, name: str, lineno: int, fld: str, issues: list[Issue]) -> float | None:
    value = _na(raw)
    if value is None:
        return None
    try:
        out = float(value)
    except ValueError:
        issues.append(Issue(name, lineno, fld, f"not a number: {raw!r}"))
        return None
    if not math.isfinite(out):
        issues.append(Issue(name, lineno, fld, f"not finite: {raw!r}"))
        return None
    return out


def parse_sector(raw: str | None) -> dict[str, float]:
    """``"Tech"`` -> ``{"Tech": 1.0}``; ``"Tech:0.7;Health:0.3"`` -> weighted map."""
    if raw is None or raw.strip() in ("", NA):
        return {}
    if ":" not in raw:
        return {raw: 1.0}
    out: dict[str, float] = {}
    for part in raw.split(";"):
        key, _, w = part.rpartition(":")
        out[key.strip()] = float(w)
    return out


def _read_etfs(path: Path, issues: list[Issue]) -> list[Etf]:
    out, seen = [], set()
    for lineno, row in _read_csv(path, ETF_COLUMNS, issues):
        etf_id = row["id"].strip()
        if etf_id in seen:
            issues.append(Issue(path.name, lineno, "id", f"duplicate id {etf_id}"))
            continue
        seen.add(etf_id)
        ac = _na(row["asset_class"])
        if ac is not None and ac not in ETF_ASSET_CLASSES:
            issues.append(Issue(path.name, lineno, "asset_class", f"unknown asset class {ac!r}"))
        addv = _float(row["addv"], path.name, lineno, "addv", issues)
        if addv is not None and addv < 0:
            issues.append(Issue(path.name, lineno, "addv", "negative ADDV"))
        attrs = {k: _na(row[k]) for k in ETF_ATTRIBUTES}
        out.append(Etf(etf_id, row["name"].strip(), ac, addv, _na(row["thirdparty_category"]), attrs))
    return sorted(out, key=lambda e: e.id)


def _read_securities(path: Path, issues: list[Issue]) -> list[Security]:
    out, seen = [], set()
    for lineno, row in _read_csv(path, SECURITY_COLUMNS, issues):
        sec_id = row["id"].strip()
        if sec_id in seen:
            issues.append(Issue(path.name, lineno, "id", f"duplicate id {sec_id}"))
            continue
        seen.add(sec_id)
        try:
            ac = AssetClass(row["asset_class"].strip())
        except ValueError:
            issues.append(Issue(path.name, lineno, "asset_class", f"unknown asset class {row['asset_class']!r}"))
            continue
        try:
            sectors = parse_sector(_na(row["sector"]))
        except ValueError:
            issues.append(Issue(path.name, lineno, "sector", f"bad weighted sector {row['sector']!r}"))
            continue
        cap = _float(row["market_cap"], path.name, lineno, "market_cap", issues)
        dur = _float(row["duration_years"], path.name, lineno, "duration_years", issues)
        style = _na(row["style"])
        try:
            style = Style(style) if style is not None else None
        except ValueError:
            issues.append(Issue(path.name, lineno, "style", f"unknown style {style!r}"))
            style = None
        try:
            out.append(Security(sec_id, ac, sectors, cap, _na(row["credit_rating"]), dur,
                                style, _na(row["region"])))
        except DataError as exc:
            fld = "sector" if "sector" in str(exc) else "market_cap" if "cap" in str(exc) else "duration_years"
            issues.append(Issue(path.name, lineno, fld, str(exc)))
    return sorted(out, key=lambda s: s.id)


def _read_holdings(path: Path, etf_ids: set[str], sec_ids: set[str], config: IngestConfig,
                   issues: list[Issue], report: IngestReport) -> HoldingsTable:
    rows: dict[tuple[str, str], float] = {}
    first_line: dict[str, int] = {}
    for lineno, row in _read_csv(path, HOLDINGS_COLUMNS, issues):
        etf_id, sec_id = row["etf_id"].strip(), row["security_id"].strip()
        if etf_id not in etf_ids:
            issues.append(Issue(path.name, lineno, "etf_id", f"unknown ETF {etf_id}"))
            continue
        if sec_id not in sec_ids:
            issues.append(Issue(path.name, lineno, "security_id", f"unknown security {sec_id}"))
            continue
        if (etf_id, sec_id) in rows:
            issues.append(Issue(path.name, lineno, "security_id", f"duplicate holding ({etf_id}, {sec_id})"))
            continue
        w = _float(row["weight"], path.name, lineno, "weight", issues)
        if w is None:
            continue
        rows[(etf_id, sec_id)] = w
        first_line.setdefault(etf_id, lineno)
    sums: dict[str, float] = defaultdict(float)
    for (etf_id, _), w in rows.items():
        sums[etf_id] += w
    for etf_id in sorted(sums):
        total = sums[etf_id]
        if abs(total - 1.0) <= config.weight_tolerance:
            continue
        if config.renormalize and total > 0:
            for key in [k for k in rows if k[0] == etf_id]:
                rows[key] /= total
            report.renormalized.append(etf_id)
        else:
            issues.append(Issue(path.name, first_line[etf_id], "weight",
                                f"weights of {etf_id} sum to {total!r}, not 1"))
    return HoldingsTable.from_rows((e, s, w) for (e, s), w in rows.items())


def _read_returns(path: Path, etf_ids: set[str], issues: list[Issue]) -> ReturnsPanel:
    cells: dict[tuple[str, dt.date], float] = {}
    for lineno, row in _read_csv(path, RETURNS_COLUMNS, issues):
        etf_id = row["etf_id"].strip()
        if etf_id not in etf_ids:
            issues.append(Issue(path.name, lineno, "etf_id", f"unknown ETF {etf_id}"))
            continue
        try:
            day = dt.date.fromisoformat(row["date"].strip())
        except ValueError:
            issues.append(Issue(path.name, lineno, "date", f"not an ISO-8601 date: {row['date']!r}"))
            continue
        if (etf_id, day) in cells:
            issues.append(Issue(path.name, lineno, "date", f"duplicate return for ({etf_id}, {day})"))
            continue
        v = _float(row["return"], path.name, lineno, "return", issues)
        cells[(etf_id, day)] = math.nan if v is None else v
    ids = sorted({e for e, _ in cells})
    dates = sorted({d for _, d in cells})
    values = np.full((len(ids), len(dates)), np.nan)
    ii = {e: k for k, e in enumerate(ids)}
    di = {d: k for k, d in enumerate(dates)}
    for (e, d), v in cells.items():
        values[ii[e], di[d]] = v
    return ReturnsPanel.from_array(ids, dates, values)


def load_universe(root: str | Path, config: IngestConfig = IngestConfig()) -> Universe:
    """Read and cross-validate the four universe files under ``root``.

    Raises :class:`ValidationError` listing every problem found.
    """
    root = Path(root)
    paths = {n: root / f"{n}.csv" for n in ("etfs", "securities", "holdings", "returns")}
    issues: list[Issue] = []
    for p in paths.values():
        if not p.exists():
            issues.append(Issue(p.name, 0, "file", "missing input file"))
    if issues:
        raise ValidationError(issues)
    report = IngestReport()
    etfs = _read_etfs(paths["etfs"], issues)
    secs = _read_securities(paths["securities"], issues)
    etf_ids = {e.id for e in etfs}
    holdings = _read_holdings(paths["holdings"], etf_ids, {s.id for s in secs}, config, issues, report)
    panel = _read_returns(paths["returns"], etf_ids, issues)
    if issues:
        raise ValidationError(issues)

    report.n_etfs, report.n_securities = len(etfs), len(secs)
    report.n_holdings, report.n_dates = len(holdings.entries), len(panel.dates)
    held = set(holdings.etf_ids)
    report.etfs_without_holdings = sorted(etf_ids - held)
    report.etfs_without_returns = sorted(etf_ids - set(panel.etf_ids))
    report.missing_returns_fraction = float(panel.missing_mask.mean()) if panel.values.size else 0.0
    classified = {s.id for s in secs if s.sector_weights}
    for etf_id, rows in holdings.rows().items():
        report.sector_coverage[etf_id] = sum(w for s, w in rows if s in classified)
    return Universe(tuple(etfs), tuple(secs), holdings, panel, report)


def write_universe(root: str | Path, etfs: Iterable[Etf], securities: Iterable[Security],
                   holdings: HoldingsTable, panel: ReturnsPanel) -> None:
    """Write the four CSV files in the ingestion format."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    def fmt(v) -> str:
        if v is None:
            return NA
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, Enum):
            return str(v.value)
        return str(v)

    with open(root / "etfs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ETF_COLUMNS)
        for e in sorted(etfs, key=lambda x: x.id):
            w.writerow([e.id, e.name, fmt(e.asset_class), fmt(e.addv), fmt(e.thirdparty_category)]
                       + [fmt(e.attributes.get(k)) for k in ETF_ATTRIBUTES])
    with open(root / "securities.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SECURITY_COLUMNS)
        for s in sorted(securities, key=lambda x: x.id):
            if not s.sector_weights:
                sector = NA
            elif len(s.sector_weights) == 1 and next(iter(s.sector_weights.values())) == 1.0:
                sector = next(iter(s.sector_weights))
            else:
                sector = ";".join(f"{k}:{v!r}" for k, v in sorted(s.sector_weights.items()))
            w.writerow([s.id, s.asset_class.value, sector, fmt(s.market_cap), fmt(s.credit_rating),
                        fmt(s.duration_years), fmt(s.style), fmt(s.region)])
    with open(root / "holdings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HOLDINGS_COLUMNS)
        for row in holdings.entries:
            w.writerow([row[0], row[1], repr(row[2])])
    panel.to_csv(root / "returns.csv")


def load_returns(path: str | Path, etf_ids: Iterable[str] | None = None) -> ReturnsPanel:
    """Read a long-format returns file on its own."""
    issues: list[Issue] = []
    path = Path(path)
    if etf_ids is None:
        with open(path, newline="", encoding="utf-8") as fh:
            etf_ids = {row["etf_id"].strip() for row in csv.DictReader(fh)}
    panel = _read_returns(path, set(etf_ids), issues)
    if issues:
        raise ValidationError(issues)
    return panel


# ---------------------------------------------------------------------------
# taxonomy persistence
# ---------------------------------------------------------------------------

_HEADER = "etfrisk-taxonomy\t1"


def dump_taxonomy(t: Taxonomy) -> str:
    """Serialize to the tab-separated taxonomy text format.

    Grammar, one record per line, fields separated by a single TAB::

        etfrisk-taxonomy <TAB> 1
        meta     <key> <value>                 (sorted by key)
        level    <name> binary|weighted        (levels bottom-up)
        category <id>                          (level's category order)
        parent   <category> <parent-category>  (absent on the top level)
        assign   <etf> <category>              (binary; ETFs sorted by id)
        weight   <etf> <category> <w>          (weighted; ETFs sorted, then category order)
        end

    Floats are written with ``repr`` so a reload is exact.
    """
    lines = [_HEADER]
    for k in sorted(t.metadata):
        lines.append(f"meta\t{k}\t{t.metadata[k]}")
    for lv in t.levels:
        lines.append(f"level\t{lv.name}\t{lv.kind.value}")
        lines += [f"category\t{c}" for c in lv.categories]
        if lv.parent_map is not None:
            lines += [f"parent\t{c}\t{lv.parent_map[c]}" for c in lv.categories]
        order = {c: k for k, c in enumerate(lv.categories)}
        for etf_id in lv.etf_ids:
            a = lv.assignment[etf_id]
            if lv.kind is LevelKind.BINARY:
                lines.append(f"assign\t{etf_id}\t{a}")
            else:
                for c in sorted(a, key=order.__getitem__):
                    lines.append(f"weight\t{etf_id}\t{c}\t{float(a[c])!r}")
        lines.append("end")
    return "\n".join(lines) + "\n"


def parse_taxonomy(text: str) -> Taxonomy:
    lines = text.splitlines()
    if not lines or lines[0] != _HEADER:
        raise TaxonomyError("line 1: not a taxonomy file")
    meta: dict[str, str] = {}
    levels: list[TaxonomyLevel] = []
    cur: dict | None = None

    def fail(n: int, msg: str):
        raise TaxonomyError(f"line {n}: {msg}")

    for n, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        tag = parts[0]
        if tag == "meta" and cur is None and len(parts) == 3:
            meta[parts[1]] = parts[2]
        elif tag == "level" and cur is None and len(parts) == 3:
            try:
                kind = LevelKind(parts[2])
            except ValueError:
                fail(n, f"unknown level kind {parts[2]!r}")
            cur = {"name": parts[1], "kind": kind, "cats": [], "parents": {}, "assign": {}}
        elif cur is None:
            fail(n, f"unexpected record {tag!r}")
        elif tag == "category" and len(parts) == 2:
            cur["cats"].append(parts[1])
        elif tag == "parent" and len(parts) == 3:
            if parts[1] in cur["parents"] and cur["parents"][parts[1]] != parts[2]:
                fail(n, f"category {parts[1]!r} maps to two parents "
                        f"({cur['parents'][parts[1]]!r}, {parts[2]!r})")
            cur["parents"][parts[1]] = parts[2]
        elif tag == "assign" and len(parts) == 3 and cur["kind"] is LevelKind.BINARY:
            if parts[1] in cur["assign"]:
                fail(n, f"ETF {parts[1]} assigned twice")
            cur["assign"][parts[1]] = parts[2]
        elif tag == "weight" and len(parts) == 4 and cur["kind"] is LevelKind.WEIGHTED:
            try:
                w = float(parts[3])
            except ValueError:
                fail(n, f"bad weight {parts[3]!r}")
            ws = cur["assign"].setdefault(parts[1], {})
            if parts[2] in ws:
                fail(n, f"duplicate weight ({parts[1]}, {parts[2]})")
            ws[parts[2]] = w
        elif tag == "end" and len(parts) == 1:
            levels.append(TaxonomyLevel(cur["name"], cur["kind"], tuple(cur["cats"]), cur["assign"],
                                        cur["parents"] or None))
            cur = None
        else:
            fail(n, f"malformed record {line!r}")
    if cur is not None:
        raise TaxonomyError("unterminated level")
    return Taxonomy(tuple(levels), meta)


def save_taxonomy(t: Taxonomy, path: str | Path) -> None:
    t.validate()
    Path(path).write_text(dump_taxonomy(t), encoding="utf-8")


def load_taxonomy(path: str | Path) -> Taxonomy:
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def taxonomy_hash(t: Taxonomy) -> str:
    return hashlib.sha256(dump_taxonomy(t).encode("utf-8")).hexdigest()
