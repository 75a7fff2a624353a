"""
Multilevel ETF taxonomies.

Two routes produce a 2-level taxonomy (granular categories under asset
classes):

* :func:`build_organic_taxonomy` classifies ETFs bottom-up from constituent
  exposures (asset class, then sector/industry, bond type, commodity type,
  region, with cap/style/region and credit/duration refinements).
* :func:`augment_thirdparty` starts from a single-level third-party grouping:
  N/A categories are filled by attribute matching, mixed categories are split
  by asset class with ADDV-share gating, and undersized categories are folded
  into their best-correlated sibling.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import (
    ETF_ATTRIBUTES,
    MULTI_ASSET,
    AssetClass,
    DataError,
    Etf,
    HoldingsTable,
    LevelKind,
    ReturnsPanel,
    Security,
    Taxonomy,
    TaxonomyLevel,
    binary_level,
    other_category,
)
from .exposures import (
    BROAD,
    CAP_TRANCHES,
    DEFAULT_MIN_COVERAGE,
    DEFAULT_WSTAR,
    DURATION_BUCKETS,
    LINEAR_SCORES_NOTCHED,
    TIE_GUARD,
    Mode,
    RatingScale,
    TrancheSpec,
    attribute_membership,
    compute_exposures,
    sector_path,
    threshold_exposures,
    tranche_membership,
)

log = logging.getLogger(__name__)

DEFAULT_VTILDE = 0.1
DEFAULT_NSTAR = 3
DEFAULT_NUPPER = 30
DEFAULT_NLOWER = 3
DEFAULT_WINDOW = 252
MIN_OVERLAP = 20
UNKNOWN = "unknown"


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CategorySplit:
    category: str
    classes: tuple[str, ...]
    shares: Mapping[str, float]
    decision: str  # kept | relabeled | split | skipped
    result: tuple[str, ...]
    count_fallback: bool = False

    def line(self, what: str) -> str:
        shares = ",".join(f"{k}:{v:.6g}" for k, v in self.shares.items())
        extra = " (ETF-count shares, zero ADDV)" if self.count_fallback else ""
        return (f"split-{what} {self.category}: {self.decision} -> {','.join(self.result)}"
                f" [{shares}]{extra}")


@dataclass
class SplitReport:
    attribute: str
    entries: list[CategorySplit] = field(default_factory=list)
    relabeled: dict[str, tuple[str, str]] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [e.line(self.attribute) for e in self.entries if e.decision != "kept"]
        out += [f"relabel {e}: {a} -> {b}" for e, (a, b) in sorted(self.relabeled.items())]
        return out


@dataclass(frozen=True)
class Move:
    etf_id: str
    source: str
    candidates: tuple[str, ...]
    rho: Mapping[str, float]
    chosen: str
    reason: str  # argmax | largest

    def line(self) -> str:
        rho = ",".join(f"{c}:{self.rho[c]:.6f}" for c in self.candidates if c in self.rho)
        return f"reclass {self.etf_id}: {self.source} -> {self.chosen} by {self.reason} [{rho}]"


@dataclass
class ReclassReport:
    moves: list[Move] = field(default_factory=list)
    merged: dict[str, list[str]] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [m.line() for m in self.moves]
        out += [f"merge {tgt}: {','.join(src)} (no candidate of size >= n_*)"
                for tgt, src in sorted(self.merged.items())]
        return out


@dataclass
class BuildReport:
    params: dict[str, str] = field(default_factory=dict)
    decisions: list[str] = field(default_factory=list)

    def add(self, lines: Iterable[str]) -> None:
        self.decisions.extend(lines)

    def to_text(self) -> str:
        out = [f"param {k}={v}" for k, v in sorted(self.params.items())]
        return "\n".join(out + self.decisions) + "\n"


# ---------------------------------------------------------------------------
# category returns
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CategoryReturns:
    category_ids: tuple[str, ...]
    dates: tuple
    values: np.ndarray  # K x T, NaN where no member had a return
    counts: np.ndarray  # K x T members contributing
    empty: tuple[str, ...]

    def series(self, category: str) -> np.ndarray:
        return self.values[self.category_ids.index(category)]


def category_average_returns(panel: ReturnsPanel, level: TaxonomyLevel) -> CategoryReturns:
    """Equal-weighted mean of each category's non-missing member returns per date."""
    if level.kind is not LevelKind.BINARY:
        raise DataError("category averages need a binary level")
    idx = panel.index()
    K, T = len(level.categories), len(panel.dates)
    values = np.full((K, T), np.nan)
    counts = np.zeros((K, T), dtype=int)
    empty = []
    groups = level.groups()
    for k, c in enumerate(level.categories):
        rows = [idx[e] for e in groups[c] if e in idx]
        if not rows:
            empty.append(c)
            continue
        block = panel.values[rows]
        present = ~np.isnan(block)
        n = present.sum(axis=0)
        total = np.where(present, block, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            values[k] = np.where(n > 0, total / np.maximum(n, 1), np.nan)
        counts[k] = n
    if empty:
        log.warning("categories without returns: %s", ", ".join(empty))
    return CategoryReturns(tuple(level.categories), panel.dates, values, counts, tuple(empty))


# ---------------------------------------------------------------------------
# ADDV-gated splitting
# ---------------------------------------------------------------------------


def _shares(members: Sequence[str], label: Mapping[str, str], addv: Mapping[str, float | None]):
    volume: dict[str, float] = defaultdict(float)
    count: Counter = Counter()
    for e in members:
        v = addv.get(e)
        volume[label[e]] += 0.0 if v is None or math.isnan(v) else float(v)
        count[label[e]] += 1
    classes = tuple(sorted(count))
    total = sum(volume[c] for c in classes)
    if total > 0:
        return classes, {c: volume[c] / total for c in classes}, False
    n = sum(count.values())
    return classes, {c: count[c] / n for c in classes}, True


def _gate(category: str, members: Sequence[str], label: Mapping[str, str],
          addv: Mapping[str, float | None], vtilde: float) -> CategorySplit:
    classes, shares, fallback = _shares(members, label, addv)
    if len(classes) == 1:
        return CategorySplit(category, classes, shares, "kept", (category,), fallback)
    dominant = [c for c in classes if shares[c] > vtilde]
    if len(dominant) == 1:
        return CategorySplit(category, classes, shares, "relabeled", (category,), fallback)
    return CategorySplit(category, classes, shares, "split",
                         tuple(f"{category}.{c}" for c in classes), fallback)


def split_categories_by_assetclass(level: TaxonomyLevel, asset_class: Mapping[str, str],
                                   addv: Mapping[str, float | None],
                                   vtilde: float = DEFAULT_VTILDE) -> tuple[TaxonomyLevel, SplitReport]:
    """Make every category map to a single asset class.

    A mixed category is kept whole (and its ETFs relabeled to the dominant
    asset class) when only one asset class holds an ADDV share above
    ``vtilde``; otherwise it is split into ``"<category>.<asset class>"``
    subcategories. Missing ADDV counts as zero. The returned level's
    ``parent_map`` gives each category's asset class.
    """
    if level.kind is not LevelKind.BINARY:
        raise DataError("asset-class splitting needs a binary level")
    groups = level.groups()
    report = SplitReport("asset_class")
    assign: dict[str, str] = {}
    parents: dict[str, str] = {}
    cats: list[str] = []
    for c in level.categories:
        members = groups[c]
        if not members:
            continue
        entry = _gate(c, members, asset_class, addv, vtilde)
        report.entries.append(entry)
        if entry.decision == "split":
            for ac in entry.classes:
                sub = f"{c}.{ac}"
                cats.append(sub)
                parents[sub] = ac
                for e in members:
                    if asset_class[e] == ac:
                        assign[e] = sub
            continue
        if entry.decision == "kept":
            parents[c] = entry.classes[0]
        else:
            parents[c] = next(ac for ac in entry.classes if entry.shares[ac] > vtilde)
            for e in members:
                if asset_class[e] != parents[c]:
                    report.relabeled[e] = (asset_class[e], parents[c])
        cats.append(c)
        for e in members:
            assign[e] = c
    return binary_level(level.name, assign, parents, cats), report


def default_mstar(level: TaxonomyLevel) -> int:
    """Average ETFs per category, rounded down, at least 1."""
    k = sum(1 for n in level.sizes().values() if n > 0)
    return max(1, len(level.assignment) // max(k, 1))


def split_by_attribute(level: TaxonomyLevel, attribute: Mapping[str, str | None],
                       addv: Mapping[str, float | None], vtilde: float = DEFAULT_VTILDE,
                       mstar: int | None = None, asset_class: str = AssetClass.BOND.value,
                       name: str = "attribute") -> tuple[TaxonomyLevel, SplitReport]:
    """Split categories of one asset class by a per-ETF label (e.g. duration bucket).

    Only categories whose parent is ``asset_class`` and that hold at least
    ``mstar`` ETFs are considered; the ADDV gate is the same as for
    asset-class splitting. Missing labels become ``"unknown"``.
    """
    if level.parent_map is None:
        raise DataError("attribute splitting needs a level with asset-class parents")
    mstar = default_mstar(level) if mstar is None else mstar
    labels = {e: (attribute.get(e) or UNKNOWN) for e in level.assignment}
    groups = level.groups()
    report = SplitReport(name)
    assign: dict[str, str] = {}
    parents: dict[str, str] = {}
    cats: list[str] = []
    for c in level.categories:
        members = groups[c]
        if not members:
            continue
        parent = level.parent_map[c]
        if parent == asset_class and len(members) >= mstar:
            entry = _gate(c, members, labels, addv, vtilde)
        else:
            entry = CategorySplit(c, (), {}, "skipped", (c,))
        report.entries.append(entry)
        if entry.decision == "split":
            for lab in entry.classes:
                sub = f"{c}.{lab}"
                cats.append(sub)
                parents[sub] = parent
                for e in members:
                    if labels[e] == lab:
                        assign[e] = sub
        else:
            cats.append(c)
            parents[c] = parent
            for e in members:
                assign[e] = c
    return binary_level(level.name, assign, parents, cats), report


# ---------------------------------------------------------------------------
# small-category reclassification
# ---------------------------------------------------------------------------


def _pearson(x: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    ok = ~(np.isnan(x) | np.isnan(y))
    n = int(ok.sum())
    if n < 2:
        return math.nan, n
    a, b = x[ok] - x[ok].mean(), y[ok] - y[ok].mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return (float(a @ b) / den if den > 0 else math.nan), n


def reclassify_small_categories(level: TaxonomyLevel, panel: ReturnsPanel,
                                nstar: int = DEFAULT_NSTAR, window: int = DEFAULT_WINDOW,
                                min_overlap: int = MIN_OVERLAP) -> tuple[TaxonomyLevel, ReclassReport]:
    """Move ETFs out of categories smaller than ``nstar``.

    Each such ETF goes to the category of the same asset class (size at least
    ``nstar``) whose average return series it correlates with most over the
    last ``window`` dates. Ties go to the first category id; with fewer than
    ``min_overlap`` joint observations the largest candidate is used. If an
    asset class has no candidate, its small categories merge into
    ``"<asset class> – Other"``.
    """
    if level.kind is not LevelKind.BINARY or level.parent_map is None:
        raise DataError("reclassification needs a binary level with asset-class parents")
    sizes = level.sizes()
    groups = level.groups()
    cand_by_ac: dict[str, list[str]] = defaultdict(list)
    small_by_ac: dict[str, list[str]] = defaultdict(list)
    for c in level.categories:
        if sizes[c] == 0:
            continue
        ac = level.parent_map[c]
        (cand_by_ac if sizes[c] >= nstar else small_by_ac)[ac].append(c)

    report = ReclassReport()
    assign = dict(level.assignment)
    parents = dict(level.parent_map)
    if not any(small_by_ac.values()):
        return level, report

    recent = panel.tail(min(window, len(panel.dates)))
    idx = recent.index()
    cand_all = sorted(c for cs in cand_by_ac.values() for c in cs)
    avg = category_average_returns(recent, binary_level(level.name, {
        e: c for e, c in level.assignment.items() if c in set(cand_all)}, categories=cand_all)) \
        if cand_all else None

    for ac in sorted(small_by_ac):
        smalls = small_by_ac[ac]
        cands = sorted(cand_by_ac.get(ac, []))
        if not cands:
            target = other_category(ac)
            report.merged[target] = sorted(smalls)
            for c in smalls:
                for e in groups[c]:
                    assign[e] = target
            parents[target] = ac
            continue
        largest = min(cands, key=lambda c: (-sizes[c], c))
        for c in smalls:
            for e in groups[c]:
                rho: dict[str, float] = {}
                if e in idx:
                    x = recent.values[idx[e]]
                    for b in cands:
                        r, n = _pearson(x, avg.series(b))
                        if n >= min_overlap and not math.isnan(r):
                            rho[b] = r
                if rho:
                    best = max(rho.values())
                    chosen = min(b for b in cands if rho.get(b) == best)
                    reason = "argmax"
                else:
                    chosen, reason = largest, "largest"
                report.moves.append(Move(e, c, tuple(cands), rho, chosen, reason))
                assign[e] = chosen

    used = set(assign.values())
    cats = [c for c in level.categories if c in used]
    cats += sorted(c for c in used if c not in set(cats))
    parents = {c: parents[c] for c in cats}
    return binary_level(level.name, assign, parents, cats), report


# ---------------------------------------------------------------------------
# N/A categories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NaAssignment:
    etf_id: str
    category: str
    matches: Mapping[str, int]
    rule: str  # match-count | peer-count | first-id | other

    def line(self) -> str:
        m = ",".join(f"{k}:{v}" for k, v in sorted(self.matches.items()))
        return f"na-assign {self.etf_id}: {self.category} by {self.rule} [{m}]"


def assign_na_categories(unclassified: Sequence[Etf], classified: Sequence[Etf],
                         assignment: Mapping[str, str],
                         attributes: Sequence[str] = ETF_ATTRIBUTES) -> list[NaAssignment]:
    """Give each unclassified ETF the category of its most similar peers.

    Peers are classified ETFs of the same asset class (all classified ETFs
    when the asset class is unknown or unrepresented). A peer matches when it
    agrees on every attribute the ETF has. The category with the most matching
    peers wins; ties go to the category with more peers overall, then to the
    first category id. With no matching peer the ETF lands in
    ``"<asset class> – Other"``.
    """
    out = []
    for etf in sorted(unclassified, key=lambda e: e.id):
        peers = [p for p in classified if p.asset_class == etf.asset_class and p.id in assignment]
        if etf.asset_class is None or not peers:
            peers = [p for p in classified if p.id in assignment]
        wanted = {k: etf.attributes.get(k) for k in attributes if etf.attributes.get(k) is not None}
        matches = Counter(assignment[p.id] for p in peers
                          if all(p.attributes.get(k) == v for k, v in wanted.items()))
        if not matches:
            out.append(NaAssignment(etf.id, other_category(etf.asset_class), {}, "other"))
            continue
        totals = Counter(assignment[p.id] for p in peers)
        top = max(matches.values())
        tied = sorted(c for c, n in matches.items() if n == top)
        rule = "match-count"
        if len(tied) > 1:
            top_total = max(totals[c] for c in tied)
            tied = [c for c in tied if totals[c] == top_total]
            rule = "peer-count" if len(tied) == 1 else "first-id"
        out.append(NaAssignment(etf.id, tied[0], dict(matches), rule))
    return out


# ---------------------------------------------------------------------------
# third-party augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentParams:
    vtilde: float = DEFAULT_VTILDE
    nstar: int = DEFAULT_NSTAR
    window: int = DEFAULT_WINDOW
    min_overlap: int = MIN_OVERLAP
    split_attribute: str | None = None
    split_asset_class: str = AssetClass.BOND.value
    mstar: int | None = None

    def as_strings(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}


def augment_thirdparty(etfs: Sequence[Etf], panel: ReturnsPanel,
                       params: AugmentParams = AugmentParams()) -> tuple[Taxonomy, BuildReport]:
    """Turn a third-party single-level grouping into a 2-level taxonomy.

    Stages: N/A assignment, asset-class split, optional attribute split,
    small-category reclassification.
    """
    report = BuildReport(params.as_strings())
    etfs = sorted(etfs, key=lambda e: e.id)
    asset_class = {e.id: e.asset_class or AssetClass.OTHER.value for e in etfs}
    addv = {e.id: e.addv for e in etfs}

    assign = {e.id: e.thirdparty_category for e in etfs if e.thirdparty_category is not None}
    classified = [e for e in etfs if e.id in assign]
    missing = [e for e in etfs if e.id not in assign]
    for a in assign_na_categories(missing, classified, assign):
        report.decisions.append(a.line())
        assign[a.etf_id] = a.category
    level = binary_level("category", assign)

    level, split = split_categories_by_assetclass(level, asset_class, addv, params.vtilde)
    report.add(split.lines())

    if params.split_attribute is not None:
        attr = {e.id: e.attributes.get(params.split_attribute) for e in etfs}
        mstar = params.mstar if params.mstar is not None else default_mstar(level)
        report.decisions.append(f"mstar {mstar}")
        level, split = split_by_attribute(level, attr, addv, params.vtilde, mstar,
                                          params.split_asset_class, params.split_attribute)
        report.add(split.lines())

    level, reclass = reclassify_small_categories(level, panel, params.nstar, params.window,
                                                 params.min_overlap)
    report.add(reclass.lines())
    top = binary_level("asset_class", {e: level.parent_map[c] for e, c in level.assignment.items()})
    return Taxonomy((level, top), {"route": "augment", **report.params}), report


# ---------------------------------------------------------------------------
# organic construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrganicConfig:
    wstar: float = DEFAULT_WSTAR
    guard: float = TIE_GUARD
    nupper: int = DEFAULT_NUPPER
    nlower: int = DEFAULT_NLOWER
    mode: Mode = Mode.BINARY
    min_coverage: float = DEFAULT_MIN_COVERAGE
    max_depth: int = 3
    cap_tranches: TrancheSpec = CAP_TRANCHES
    duration_buckets: TrancheSpec = DURATION_BUCKETS
    rating_scale: RatingScale = LINEAR_SCORES_NOTCHED
    weighted_wstar: float | None = None  # weighted level-1 threshold, defaults to wstar

    def as_strings(self) -> dict[str, str]:
        return {"wstar": repr(self.wstar), "guard": repr(self.guard), "nupper": str(self.nupper),
                "nlower": str(self.nlower), "mode": Mode(self.mode).value,
                "min_coverage": repr(self.min_coverage), "max_depth": str(self.max_depth),
                **({} if self.weighted_wstar is None else {"weighted_wstar": repr(self.weighted_wstar)})}


Labeler = Callable[[Sequence[str]], dict[str, str | None]]


class _Organic:
    def __init__(self, etfs: Sequence[Etf], securities: Sequence[Security],
                 holdings: HoldingsTable, cfg: OrganicConfig, report: BuildReport):
        self.etfs = {e.id: e for e in etfs}
        self.secs = list(securities)
        self.holdings = holdings
        self.cfg = cfg
        self.report = report

    def label(self, membership, etf_ids, categories=None) -> dict[str, str | None]:
        E = compute_exposures(self.holdings, membership, etf_ids, categories)
        cls = threshold_exposures(E, self.cfg.wstar, Mode.BINARY, self.cfg.guard, self.cfg.min_coverage)
        return {e: (None if cls.is_broad(e) else cls.assignments[e]) for e in etf_ids}

    def of_class(self, ac: AssetClass) -> list[Security]:
        return [s for s in self.secs if s.asset_class == ac]

    def sector_labeler(self, ac: AssetClass, depth: int) -> Labeler:
        membership = {}
        for s in self.of_class(ac):
            row: dict[str, float] = {}
            for name, w in s.sector_weights.items():
                if len(name.split("/")) >= depth:
                    key = sector_path(name, depth)
                    row[key] = row.get(key, 0.0) + w
            if row:
                membership[s.id] = row
        return lambda ids: self.label(membership, ids)

    def attr_labeler(self, getter, securities=None) -> Labeler:
        membership = attribute_membership(self.secs if securities is None else securities, getter)
        return lambda ids: self.label(membership, ids)

    def cap_labeler(self) -> Labeler:
        caps = {s.id: s.market_cap for s in self.of_class(AssetClass.EQUITY)}
        membership = tranche_membership(caps, self.cfg.cap_tranches)
        return lambda ids: self.label(membership, ids, self.cfg.cap_tranches.labels)

    def credit_labeler(self) -> Labeler:
        scale = self.cfg.rating_scale
        membership = {s.id: {scale.group(s.credit_rating): 1.0} for s in self.of_class(AssetClass.BOND)
                      if s.credit_rating in scale.values}
        return lambda ids: self.label(membership, ids)

    def duration_labeler(self) -> Labeler:
        durs = {s.id: s.duration_years for s in self.of_class(AssetClass.BOND)}
        membership = tranche_membership(durs, self.cfg.duration_buckets)
        return lambda ids: self.label(membership, ids, self.cfg.duration_buckets.labels)

    # -- gated splitting ----------------------------------------------------

    def try_split(self, name: str, members: list[str], labeler: Labeler, what: str):
        """Split ``members`` by ``labeler`` if the split is meaningful.

        Returns ``(groups, residual)`` or ``None``. A split is rejected when
        most members are broad or most groups fall below ``nlower``; groups
        below ``nlower`` fold back into the residual.
        """
        labels = labeler(members)
        by: dict[str, list[str]] = defaultdict(list)
        residual = []
        for e in members:
            (by[labels[e]] if labels[e] is not None else residual).append(e)
        big = {k: v for k, v in by.items() if len(v) >= self.cfg.nlower}
        if not big or 2 * len(residual) > len(members) or 2 * len(big) < len(by):
            self.report.decisions.append(
                f"organic {name}: {what} split rejected ({len(by)} groups, {len(big)} >= N_*, "
                f"{len(residual)} broad of {len(members)})")
            return None
        for k, v in by.items():
            if k not in big:
                residual += v
        self.report.decisions.append(
            f"organic {name}: {what} split into {len(big)} groups, {len(residual)} stay")
        return big, sorted(residual)

    def refine_sectors(self, name: str, members: list[str], ac: AssetClass, depth: int) -> dict[str, list[str]]:
        if len(members) <= self.cfg.nupper or depth > self.cfg.max_depth:
            return {name: members}
        res = self.try_split(name, members, self.sector_labeler(ac, depth), f"depth-{depth}")
        if res is None:
            return {name: members}
        big, residual = res
        out = {}
        for key in sorted(big):
            out.update(self.refine_sectors(f"{name}.{key.split('/')[-1]}", big[key], ac, depth + 1))
        if residual:
            out[name] = residual
        return out

    def refine_chain(self, name: str, members: list[str],
                     chain: Sequence[tuple[str, Labeler]]) -> dict[str, list[str]]:
        if len(members) <= self.cfg.nupper or not chain:
            return {name: members}
        (what, labeler), rest = chain[0], chain[1:]
        res = self.try_split(name, members, labeler, what)
        if res is None:
            return self.refine_chain(name, members, rest)
        big, residual = res
        out = {}
        for key in sorted(big):
            out.update(self.refine_chain(f"{name}.{key}", big[key], rest))
        if residual:
            out.update(self.refine_chain(name, residual, rest))
        return out

    def first_split(self, prefix: str, members: list[str], labeler: Labeler,
                    broad: str) -> dict[str, list[str]]:
        labels = labeler(members)
        out: dict[str, list[str]] = defaultdict(list)
        for e in members:
            lab = labels[e]
            out[f"{prefix}.{lab.split('/')[-1]}" if lab is not None else broad].append(e)
        return dict(out)

    # -- per asset class ----------------------------------------------------

    def classify(self, ac: str, members: list[str]) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        if ac == AssetClass.EQUITY.value:
            first = self.first_split(ac, members, self.sector_labeler(AssetClass.EQUITY, 1), f"{ac}.{BROAD}")
            chain = [("cap", self.cap_labeler()),
                     ("style", self.attr_labeler(lambda s: s.style, self.of_class(AssetClass.EQUITY))),
                     ("region", self.attr_labeler(lambda s: s.region, self.of_class(AssetClass.EQUITY)))]
            for name in sorted(first):
                if name == f"{ac}.{BROAD}":
                    out.update(self.refine_chain(name, first[name], chain))
                else:
                    out.update(self.refine_sectors(name, first[name], AssetClass.EQUITY, 2))
        elif ac == AssetClass.BOND.value:
            first = self.first_split(ac, members, self.sector_labeler(AssetClass.BOND, 1), f"{ac}.{BROAD}")
            chain = [("credit", self.credit_labeler()), ("duration", self.duration_labeler())]
            for name in sorted(first):
                out.update(self.refine_chain(name, first[name], chain))
        elif ac == AssetClass.COMMODITY.value:
            out = self.first_split(ac, members, self.sector_labeler(AssetClass.COMMODITY, 1), f"{ac}.{BROAD}")
        else:
            out = self.first_split(ac, members, self.attr_labeler(lambda s: s.region), other_category(ac))
        return out


def build_organic_taxonomy(etfs: Sequence[Etf], securities: Sequence[Security], holdings: HoldingsTable,
                           config: OrganicConfig = OrganicConfig()) -> tuple[Taxonomy, BuildReport]:
    """Classify ETFs from their constituents into a 2-level taxonomy.

    Level 2 is the asset class (multi-asset when no asset class reaches
    ``wstar``). Level 1 is asset-class specific: equity sectors with
    industry recursion for sectors above ``nupper`` ETFs, broad equity ETFs by
    cap/style/region, bonds by type then credit group and duration, commodities
    by type, everything else by region. In weighted mode level 1 keeps the
    thresholded weights instead of a single category.
    """
    cfg = config
    report = BuildReport(cfg.as_strings())
    org = _Organic(etfs, securities, holdings, cfg, report)
    ids = sorted(e.id for e in etfs)

    ac_membership = {s.id: {s.asset_class.value: 1.0} for s in securities}
    E = compute_exposures(holdings, ac_membership, ids)
    ac_cls = threshold_exposures(E, cfg.wstar, Mode.BINARY, cfg.guard, cfg.min_coverage)
    asset_class: dict[str, str] = {}
    orphans: list[str] = []
    for i, e in enumerate(ids):
        if E.coverage[i] == 0:
            known = org.etfs[e].asset_class
            if known is None:
                orphans.append(e)
            else:
                asset_class[e] = known
                report.decisions.append(f"organic {e}: no constituent coverage, kept asset class {known}")
        else:
            asset_class[e] = ac_cls.label(e, broad=MULTI_ASSET)

    by_ac: dict[str, list[str]] = defaultdict(list)
    for e in ids:
        if e in asset_class:
            by_ac[asset_class[e]].append(e)

    covered = {e for e, c in zip(ids, E.coverage) if c > 0}
    level1: dict[str, str] = {}
    for ac in sorted(by_ac):
        members = [e for e in by_ac[ac] if e in covered]
        for e in by_ac[ac]:
            if e not in covered:
                level1[e] = other_category(ac)
        if members:
            for cat, group in org.classify(ac, members).items():
                for e in group:
                    level1[e] = cat

    parents = {}
    for e, c in level1.items():
        parents.setdefault(c, asset_class[e])
    if orphans:
        etf_map = org.etfs
        classified = [etf_map[e] for e in sorted(level1)]
        for a in assign_na_categories([etf_map[e] for e in orphans], classified, level1):
            level1[a.etf_id] = a.category
            ac = parents.get(a.category, AssetClass.OTHER.value)
            parents.setdefault(a.category, ac)
            asset_class[a.etf_id] = ac
            report.decisions.append(a.line())

    sizes = Counter(level1.values())
    report.decisions += [f"category {c} size={n} parent={parents[c]}" for c, n in sorted(sizes.items())]
    meta = {"route": "organic", **report.params}
    top = binary_level("asset_class", {e: parents[c] for e, c in level1.items()})

    if Mode(cfg.mode) is Mode.BINARY:
        lv1 = binary_level("category", level1, parents)
        return Taxonomy((lv1, top), meta), report

    # weighted: one first-level attribute per asset class, thresholded with renormalized survivors
    membership: dict[str, dict[str, float]] = {}
    wparents: dict[str, str] = {}
    for s in securities:
        ac = s.asset_class.value
        if s.asset_class in (AssetClass.EQUITY, AssetClass.BOND, AssetClass.COMMODITY):
            row: dict[str, float] = {}
            for k, w in s.sector_weights.items():
                key = f"{ac}.{sector_path(k, 1)}"
                row[key] = row.get(key, 0.0) + w
        else:
            row = {f"{ac}.{s.region}": 1.0} if s.region else {}
        for c in row:
            wparents[c] = ac
        if row:
            membership[s.id] = row
    EW = compute_exposures(holdings, membership, ids)
    wcut = cfg.wstar if cfg.weighted_wstar is None else cfg.weighted_wstar
    wcls = threshold_exposures(EW, wcut, Mode.WEIGHTED, cfg.guard, cfg.min_coverage)
    assign: dict[str, dict[str, float]] = {}
    for e in ids:
        a = wcls.assignments[e]
        if a == BROAD:
            cat = level1[e] if e not in covered else f"{top.assignment[e]}.{BROAD}"
            a = {cat: 1.0}
            wparents.setdefault(cat, top.assignment[e])
        assign[e] = a
    wparents = {c: p for c, p in wparents.items() if any(c in a for a in assign.values())}
    for p in set(wparents.values()):
        if p not in top.categories:
            top = binary_level("asset_class", top.assignment, categories=sorted(set(top.categories) | {p}))
    cats = tuple(sorted(wparents))
    lv1 = TaxonomyLevel("category", LevelKind.WEIGHTED, cats, assign, {c: wparents[c] for c in cats})
    return Taxonomy((lv1, top), meta), report
