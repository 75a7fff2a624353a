"""
Returns cleaning ahead of a model build.

Two passes over the lookback window: returns larger than ``rstar`` in
absolute value are distrusted and set missing, then every missing return is
replaced by the same-day average of the ETF's category peers. ETFs that still
have gaps are dropped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import DataError, ReturnsPanel, TaxonomyLevel
from .taxonomy import category_average_returns

DEFAULT_RSTAR = 0.1

CLIPPED = "clipped-to-NA"
FILLED = "filled-category-avg"
DROPPED = "dropped"


@dataclass(frozen=True)
class FillEntry:
    etf_id: str
    date: object
    action: str
    value_before: float
    value_after: float


@dataclass(frozen=True, eq=False)
class CleanPanel:
    base: ReturnsPanel
    fill_log: tuple[FillEntry, ...]
    lookback: int
    dropped: tuple[str, ...] = field(default=())

    def to_csv(self, path: str | Path) -> None:
        self.base.to_csv(path)

    def log_to_csv(self, path: str | Path) -> None:
        def fmt(v: float) -> str:
            return "NA" if math.isnan(v) else repr(float(v))

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("etf_id", "date", "action", "value_before", "value_after"))
            for e in self.fill_log:
                w.writerow((e.etf_id, e.date.isoformat(), e.action, fmt(e.value_before), fmt(e.value_after)))


def preprocess_returns(panel: ReturnsPanel, level: TaxonomyLevel, rstar: float = DEFAULT_RSTAR,
                       lookback: int | None = None, fill_level: TaxonomyLevel | None = None,
                       rstar_by_class: Mapping[str, float] | None = None) -> CleanPanel:
    """Clip, fill and drop, in that order.

    ``fill_level`` is the classification whose category averages fill gaps
    (defaults to ``level``); pass the pre-split third-party level when
    augmenting so small split categories do not leave holes. ``rstar_by_class``
    overrides the clipping threshold per asset class, looked up through
    ``level.parent_map``.
    """
    lookback = len(panel.dates) if lookback is None else lookback
    if lookback > len(panel.dates):
        raise DataError(f"lookback {lookback} exceeds panel length {len(panel.dates)}")
    if lookback < 1:
        raise DataError("lookback must be positive")
    fill_level = level if fill_level is None else fill_level
    win = panel.tail(lookback)
    values = win.values.copy()
    log: list[FillEntry] = []

    thresholds = np.full(len(win.etf_ids), rstar)
    if rstar_by_class:
        parent = level.parent_map or {}
        for i, e in enumerate(win.etf_ids):
            c = level.assignment.get(e)
            ac = parent.get(c) if isinstance(c, str) else None
            if ac in rstar_by_class:
                thresholds[i] = rstar_by_class[ac]

    with np.errstate(invalid="ignore"):
        clip = np.abs(values) > thresholds[:, None]
    for i, s in zip(*np.nonzero(clip)):
        log.append(FillEntry(win.etf_ids[i], win.dates[s], CLIPPED, float(values[i, s]), math.nan))
    values[clip] = np.nan

    clipped = ReturnsPanel.from_array(win.etf_ids, win.dates, values)
    avg = category_average_returns(clipped, fill_level)
    cat_row = {c: k for k, c in enumerate(avg.category_ids)}
    filled = values.copy()
    for i, s in zip(*np.nonzero(np.isnan(values))):
        c = fill_level.assignment.get(win.etf_ids[i])
        if c is None:
            continue
        v = avg.values[cat_row[c], s]
        if not math.isnan(v):
            filled[i, s] = v
            log.append(FillEntry(win.etf_ids[i], win.dates[s], FILLED, math.nan, float(v)))

    keep = ~np.isnan(filled).any(axis=1)
    dropped = tuple(e for e, k in zip(win.etf_ids, keep) if not k)
    for i in np.flatnonzero(~keep):
        for s in np.flatnonzero(np.isnan(filled[i])):
            log.append(FillEntry(win.etf_ids[i], win.dates[s], DROPPED, math.nan, math.nan))
    ids = tuple(e for e, k in zip(win.etf_ids, keep) if k)
    base = ReturnsPanel.from_array(ids, win.dates, filled[keep])
    log.sort(key=lambda x: (x.etf_id, x.date, x.action))
    return CleanPanel(base, tuple(log), lookback, dropped)
