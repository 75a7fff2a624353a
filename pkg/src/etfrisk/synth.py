"""
Seeded synthetic universes with a planted block-factor structure.

Every ETF belongs to one planted category ``"{asset_class}.{label}"`` and
holds mostly securities of that category. Daily returns are

    r = loading * (market + asset_class + category) + idio

with each term an independent Gaussian series scaled by its volatility, so
the planted taxonomy is the ground truth the classifiers should recover.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (AssetClass, DataError, Etf, HoldingsTable, ReturnsPanel, Security, Style,
                   Taxonomy, binary_level, save_taxonomy, two_level, write_universe)
from .exposures import SP_NOTCHES

LABELS = {
    "Equity": ("Tech", "Health", "Energy", "Financials", "Industrials", "Utilities",
               "Materials", "Staples", "Discretionary", "Telecom"),
    "Bond": ("Treasury", "Corporate", "Municipal", "Mortgage", "Agency", "Sovereign"),
    "Commodity": ("Metals", "Agriculture", "Oil", "Gas", "Livestock"),
}
REGIONS = ("US", "Europe", "Asia", "LatAm", "Africa", "Oceania")

# 12 categories over 4 asset classes, 100 ETFs
DEFAULT_LAYOUT = (("Equity", 5, 10), ("Bond", 3, 8), ("Commodity", 2, 7), ("RealEstate", 2, 6))

PLANTED_FILE = "planted_taxonomy.tsv"


@dataclass(frozen=True)
class SynthSpec:
    """``layout`` lists ``(asset_class, n_categories, etfs_per_category)``."""

    layout: tuple[tuple[str, int, int], ...] = DEFAULT_LAYOUT
    securities_per_category: int = 8
    holdings_per_etf: int = 5
    purity: float = 0.9  # weight an ETF puts in its own category
    market_vol: float = 0.008
    asset_class_vol: float = 0.006
    category_vol: float = 0.006
    idio_vol: float = 0.004
    loading_range: tuple[float, float] = (0.7, 1.3)
    missing_rate: float = 0.0
    n_days: int = 300
    start: dt.date = field(default=dt.date(2020, 1, 1))
    seed: int = 0

    def validate(self) -> None:
        for ac, ncat, per in self.layout:
            if ac not in {a.value for a in AssetClass}:
                raise DataError(f"unknown asset class {ac!r}")
            pool = LABELS.get(ac, REGIONS)
            if ncat < 1 or ncat > len(pool):
                raise DataError(f"{ac}: {ncat} categories, at most {len(pool)} available")
            if per < 1:
                raise DataError(f"{ac}: more categories than ETFs")
        if not 0.5 < self.purity <= 1.0:
            raise DataError("purity must lie in (0.5, 1]")
        if not 1 <= self.holdings_per_etf <= self.securities_per_category:
            raise DataError("holdings_per_etf must be between 1 and securities_per_category")
        if not 0 <= self.missing_rate < 1:
            raise DataError("missing_rate must lie in [0, 1)")
        if self.n_days < 2:
            raise DataError("n_days must be at least 2")


@dataclass(frozen=True, eq=False)
class SyntheticUniverse:
    etfs: tuple[Etf, ...]
    securities: tuple[Security, ...]
    holdings: HoldingsTable
    returns: ReturnsPanel
    planted: Taxonomy
    clean_returns: np.ndarray  # before missing cells were punched out

    def write(self, root: str | Path) -> None:
        root = Path(root)
        write_universe(root, self.etfs, self.securities, self.holdings, self.returns)
        save_taxonomy(self.planted, root / PLANTED_FILE)


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def _security(rng, sid: str, ac: str, label: str) -> Security:
    if ac == "Equity":
        return Security(sid, AssetClass.EQUITY, {f"{label}/{label}Core": 1.0},
                        market_cap=float(np.exp(rng.uniform(np.log(5e8), np.log(5e11)))),
                        style=Style.BLEND, region="US")
    if ac == "Bond":
        return Security(sid, AssetClass.BOND, {label: 1.0},
                        credit_rating=SP_NOTCHES[int(rng.integers(0, 10))],
                        duration_years=float(rng.uniform(1.0, 15.0)), region="US")
    if ac == "Commodity":
        return Security(sid, AssetClass.COMMODITY, {label: 1.0})
    return Security(sid, AssetClass(ac), region=label)


def generate_synthetic_universe(spec: SynthSpec = SynthSpec()) -> SyntheticUniverse:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    T = spec.n_days
    dates = business_days(spec.start, T)

    securities: list[Security] = []
    cat_secs: dict[str, list[str]] = {}
    cat_ac: dict[str, str] = {}
    etf_cat: list[tuple[str, str]] = []
    n_sec = n_etf = 0
    for ac, ncat, per in spec.layout:
        for label in LABELS.get(ac, REGIONS)[:ncat]:
            cat = f"{ac}.{label}"
            cat_ac[cat] = ac
            cat_secs[cat] = []
            for _ in range(spec.securities_per_category):
                sid = f"S{n_sec:04d}"
                n_sec += 1
                securities.append(_security(rng, sid, ac, label))
                cat_secs[cat].append(sid)
            for _ in range(per):
                etf_cat.append((f"E{n_etf:03d}", cat))
                n_etf += 1

    cats = list(cat_secs)
    rows: list[tuple[str, str, float]] = []
    etfs: list[Etf] = []
    for etf_id, cat in etf_cat:
        own = rng.choice(cat_secs[cat], size=spec.holdings_per_etf, replace=False)
        w = rng.dirichlet(np.ones(len(own))) * spec.purity
        weights = dict(zip(own.tolist(), w.tolist()))
        rest = 1.0 - spec.purity
        if rest > 0:
            others = [c for c in cats if c != cat] or [cat]
            other = cats.index(others[int(rng.integers(0, len(others)))])
            sid = cat_secs[cats[other]][int(rng.integers(0, spec.securities_per_category))]
            weights[sid] = weights.get(sid, 0.0) + rest
        total = sum(weights.values())
        rows += [(etf_id, s, v / total) for s, v in weights.items()]
        etfs.append(Etf(etf_id, f"Synthetic {cat} {etf_id}", cat_ac[cat],
                        float(np.exp(rng.normal(16.0, 1.5))), cat))

    market = rng.standard_normal(T) * spec.market_vol
    acs = sorted(set(cat_ac.values()))
    ac_series = {a: rng.standard_normal(T) * spec.asset_class_vol for a in acs}
    cat_series = {c: rng.standard_normal(T) * spec.category_vol for c in cats}
    values = np.empty((len(etf_cat), T))
    for i, (_, cat) in enumerate(etf_cat):
        lo, hi = spec.loading_range
        loading = rng.uniform(lo, hi)
        common = market + ac_series[cat_ac[cat]] + cat_series[cat]
        values[i] = loading * common + rng.standard_normal(T) * spec.idio_vol
    clean = values.copy()
    if spec.missing_rate > 0:
        values[rng.random(values.shape) < spec.missing_rate] = np.nan
    ids = [e for e, _ in etf_cat]
    panel = ReturnsPanel.from_array(ids, dates, values)

    level1 = binary_level("category", dict(etf_cat), cat_ac)
    planted = two_level(level1, metadata={"route": "planted", "seed": str(spec.seed)})
    return SyntheticUniverse(tuple(etfs), tuple(securities), HoldingsTable.from_rows(rows),
                             panel, planted, clean)
