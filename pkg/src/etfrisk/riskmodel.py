"""
Factor risk models on top of an ETF taxonomy.

Model covariance::

    Gamma = diag(sigma^2 * xi^2) + (Omega / gamma) Phi (Omega / gamma)^T

with ``Omega`` the variance-space loadings, ``Phi`` the factor covariance,
``xi^2`` specific variances in correlation units and ``gamma`` per-ETF
calibration scalars chosen so that ``Gamma_ii`` equals the sample variance.

The heterotic build takes as level-1 loadings the first principal component
of each category's block of the sample correlation matrix. The covariance of
the level-1 factor returns is itself modelled the same way one taxonomy level
up, and the top level uses the plain sample covariance. The general build
takes the loadings from a (possibly fractional) weight matrix.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from .data import DataError, LevelKind, ReturnsPanel, Taxonomy, TaxonomyLevel
from .exposures import ExposureMatrix

log = logging.getLogger(__name__)

SPECIFIC_FLOOR = 1e-8
LOOKBACK_SHORT = 21
LOOKBACK_LONG = 252


class ModelError(DataError):
    """The model cannot be built from the given inputs."""


@dataclass(frozen=True, eq=False)
class RiskModel:
    etf_ids: tuple[str, ...]
    factor_ids: tuple[str, ...]
    loadings: np.ndarray  # N x K, variance space, before calibration
    gamma: np.ndarray  # N
    factor_cov: np.ndarray  # K x K
    specific_var: np.ndarray  # N, correlation units
    total_var: np.ndarray  # N
    factor_groups: Mapping[str, str] | None = None
    dropped: tuple[str, ...] = ()
    params: Mapping[str, str] = field(default_factory=dict)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.total_var)

    @property
    def beta(self) -> np.ndarray:
        """Correlation-space loadings ``Omega / (gamma * sigma)``."""
        return self.loadings / (self.gamma * self.sigma)[:, None]

    @property
    def effective_loadings(self) -> np.ndarray:
        return self.loadings / self.gamma[:, None]

    def _index(self, key) -> int:
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < len(self.etf_ids):
                raise IndexError(f"ETF index {key} outside the model universe")
            return int(key)
        try:
            return self.etf_ids.index(key)
        except ValueError:
            raise KeyError(f"{key} is not in the model universe") from None

    def correlation(self, i, j) -> float:
        i, j = self._index(i), self._index(j)
        if i == j:
            return 1.0
        b = self.beta
        return float(b[i] @ self.factor_cov @ b[j])

    def correlation_matrix(self) -> np.ndarray:
        b = self.beta
        psi = b @ self.factor_cov @ b.T
        np.fill_diagonal(psi, 1.0)
        return psi

    def covariance_matrix(self) -> np.ndarray:
        B = self.effective_loadings
        gamma_ = B @ self.factor_cov @ B.T
        gamma_[np.diag_indices_from(gamma_)] += self.total_var * self.specific_var
        return gamma_


def compute_factor_returns(loadings: np.ndarray, returns: np.ndarray | ReturnsPanel) -> np.ndarray:
    """Factor returns ``f[A, s] = sum_i loadings[i, A] * returns[i, s]``."""
    R = returns.values if isinstance(returns, ReturnsPanel) else np.asarray(returns, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    if loadings.ndim != 2 or R.ndim != 2 or loadings.shape[0] != R.shape[0]:
        raise ModelError(f"loadings {loadings.shape} do not match returns {R.shape}")
    if np.isnan(R).any():
        raise ModelError("returns contain missing values; preprocess first")
    return loadings.T @ R


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sd = X.std(axis=1, ddof=1)
    Z = X - X.mean(axis=1, keepdims=True)
    safe = np.where(sd > 0, sd, 1.0)
    return Z / safe[:, None], sd


def first_principal_component(block: np.ndarray) -> np.ndarray:
    """Unit leading eigenvector with entries summing positive (first nonzero entry on a tie)."""
    if block.shape[0] == 1:
        return np.ones(1)
    _, vecs = np.linalg.eigh(block)
    u = vecs[:, -1]
    total = u.sum()
    if abs(total) <= 1e-12 * np.abs(u).sum():
        total = u[np.flatnonzero(np.abs(u) > 1e-12)[0]]
    return u if total > 0 else -u


def block_pc_loadings(Z: np.ndarray, labels: Sequence[int], K: int) -> np.ndarray:
    """``n x K`` loadings: per group, the first PC of its correlation block."""
    T = Z.shape[1]
    U = np.zeros((Z.shape[0], K))
    labels = np.asarray(labels)
    for k in range(K):
        rows = np.flatnonzero(labels == k)
        if rows.size == 0:
            continue
        block = Z[rows] @ Z[rows].T / (T - 1)
        U[rows, k] = first_principal_component(block)
    return U


def indicator_loadings(labels: Sequence[int], K: int) -> np.ndarray:
    U = np.zeros((len(labels), K))
    U[np.arange(len(labels)), labels] = 1.0
    return U


def _calibrate(Z: np.ndarray, U: np.ndarray, f: np.ndarray, Phi: np.ndarray):
    """Per-row scale ``c`` (= 1/gamma) and specific variance in correlation units.

    ``c`` is the least-squares coefficient of each standardized series on its
    model factor component ``U_i f``; the specific variance is what is left
    of the unit variance. Rows whose factor part would exceed ``1 - floor``
    are shrunk so the specific variance sits at the floor.
    """
    T = Z.shape[1]
    m = np.einsum("ik,kl,il->i", U, Phi, U)
    cov = np.einsum("is,is->i", U @ f, Z) / (T - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(m > 0, cov / m, 0.0)
    xi2 = 1.0 - c * c * m
    over = (xi2 < SPECIFIC_FLOOR) & (m > 0)
    if over.any():
        sign = np.where(c[over] < 0, -1.0, 1.0)
        c[over] = sign * np.sqrt((1.0 - SPECIFIC_FLOOR) / m[over])
        xi2[over] = SPECIFIC_FLOOR
    return c, xi2


def _sample_cov(f: np.ndarray, what: str) -> np.ndarray:
    F, T = f.shape
    if F >= T - 1:
        raise ModelError(f"top level too large for lookback ({what}: {F} factors, T = {T})")
    return np.atleast_2d(np.cov(f, ddof=1))


def _nested_cov(X: np.ndarray, upper: Sequence[np.ndarray], pcs: bool = True) -> np.ndarray:
    """Covariance of the rows of ``X`` modelled through the grouping levels in ``upper``.

    ``upper[0]`` assigns each row of ``X`` to a group; ``upper[1]`` assigns each
    of those groups to a group one level up, and so on. With no levels left
    the sample covariance is used.
    """
    if not upper:
        return _sample_cov(X, "top level")
    labels, rest = upper[0], upper[1:]
    K = int(labels.max()) + 1 if labels.size else 0
    Y, sd = _standardize(X)
    U = block_pc_loadings(Y, labels, K) if pcs else indicator_loadings(labels, K)
    g = U.T @ Y
    Phi = _nested_cov(g, rest, pcs)
    c, xi2 = _calibrate(Y, U, g, Phi)
    B = U * c[:, None]
    psi = B @ Phi @ B.T
    psi[np.diag_indices_from(psi)] += xi2
    return psi * np.outer(sd, sd)


def _prepare(panel, etf_ids: Sequence[str], lookback: int | None):
    base = getattr(panel, "base", panel)
    if lookback is not None:
        base = base.tail(lookback)
    idx = base.index()
    missing = [e for e in etf_ids if e not in idx]
    ids = [e for e in etf_ids if e in idx]
    X = base.values[[idx[e] for e in ids]] if ids else np.zeros((0, len(base.dates)))
    if np.isnan(X).any():
        raise ModelError("returns contain missing values; preprocess first")
    T = X.shape[1]
    if T < 2:
        raise ModelError("need at least two dates")
    # a constant series can show a tiny nonzero std from rounding in the mean
    flat = (np.ptp(X, axis=1) == 0) if ids else np.zeros(0, dtype=bool)
    zero = [e for e, f in zip(ids, flat) if f]
    for e in zero:
        log.warning("dropping %s: zero variance over the lookback", e)
    keep = [k for k in range(len(ids)) if not flat[k]]
    ids = [ids[k] for k in keep]
    return ids, X[keep], tuple(sorted(missing + zero)), T


def _assemble(ids, X, U, factor_ids, factor_groups, upper, pcs, dropped, params) -> RiskModel:
    Z, sd = _standardize(X)
    f = U.T @ Z
    Phi = _nested_cov(f, upper, pcs) if upper else _psd_clip(_sample_cov(f, "factors"))
    c, xi2 = _calibrate(Z, U, f, Phi)
    with np.errstate(divide="ignore"):
        gamma = np.where(c != 0, 1.0 / np.where(c != 0, c, 1.0), np.inf)
    loadings = U * sd[:, None]
    # rows with no factor exposure: gamma is irrelevant, keep it finite
    gamma = np.where(np.isfinite(gamma), gamma, 1.0)
    loadings[c == 0] = 0.0
    return RiskModel(tuple(ids), tuple(factor_ids), loadings, gamma, Phi, xi2, sd ** 2,
                     factor_groups, dropped, dict(params))


def _psd_clip(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((S + S.T) / 2)
    if vals.min() >= 0:
        return (S + S.T) / 2
    return (vecs * np.clip(vals, 0, None)) @ vecs.T


def _upper_labels(taxonomy: Taxonomy, factor_ids: Sequence[str]) -> list[np.ndarray]:
    """Integer group labels for each level above level 1, restricted to used categories."""
    out = []
    current = list(factor_ids)
    for k in range(len(taxonomy.levels) - 1):
        pm = taxonomy.levels[k].parent_map
        parents = sorted({pm[c] for c in current}, key=taxonomy.levels[k + 1].categories.index)
        pidx = {p: n for n, p in enumerate(parents)}
        out.append(np.array([pidx[pm[c]] for c in current], dtype=int))
        current = parents
    return out


def build_heterotic(taxonomy: Taxonomy, panel, lookback: int | None = None,
                    principal_components: bool = True) -> RiskModel:
    """Heterotic model on a binary taxonomy.

    ``panel`` is a complete :class:`ReturnsPanel` (or a ``CleanPanel``).
    With ``principal_components=False`` level-1 loadings are plain category
    indicators. ETFs without returns or with zero variance are dropped.
    """
    lv = taxonomy.levels[0]
    if lv.kind is not LevelKind.BINARY:
        raise ModelError("heterotic construction needs a binary level 1; use build_general")
    ids, X, dropped, T = _prepare(panel, lv.etf_ids, lookback)
    used = {lv.assignment[e] for e in ids}
    factor_ids = [c for c in lv.categories if c in used]
    fidx = {c: k for k, c in enumerate(factor_ids)}
    labels = np.array([fidx[lv.assignment[e]] for e in ids], dtype=int)
    upper = _upper_labels(taxonomy, factor_ids)
    if upper:
        _check_top(upper[-1], T)
    Z, _ = _standardize(X)
    U = block_pc_loadings(Z, labels, len(factor_ids)) if principal_components \
        else indicator_loadings(labels, len(factor_ids))
    groups = {c: lv.parent_map[c] for c in factor_ids} if lv.parent_map else None
    params = {"construction": "heterotic", "lookback": str(T),
              "principal_components": str(principal_components)}
    return _assemble(ids, X, U, factor_ids, groups, upper, principal_components, dropped, params)


def _check_top(labels: np.ndarray, T: int) -> None:
    F = int(labels.max()) + 1 if labels.size else 0
    if F >= T - 1:
        raise ModelError(f"top level too large for lookback ({F} top-level categories, T = {T})")


def build_general(W, panel, lookback: int | None = None,
                  factor_groups: Mapping[str, str] | None = None,
                  augment: bool = False, etf_ids: Sequence[str] | None = None,
                  factor_ids: Sequence[str] | None = None) -> RiskModel:
    """General model with loadings taken from a weight matrix.

    ``W`` is an :class:`ExposureMatrix`, a :class:`TaxonomyLevel`, or a dense
    array (then ``etf_ids`` and ``factor_ids`` are required). Rows must sum to
    1. ``factor_groups`` maps factors to a second-level grouping whose block
    structure models the factor covariance; without it the (PSD-clipped)
    sample covariance is used and needs ``K < T - 1``. With ``augment`` each
    loading is multiplied by the ETF's entry in the first PC of the block of
    its dominant category.
    """
    if isinstance(W, ExposureMatrix):
        etf_ids, factor_ids, Wm = W.etf_ids, W.category_ids, W.W
    elif isinstance(W, TaxonomyLevel):
        etf_ids, factor_ids = W.etf_ids, W.categories
        Wm = W.weight_matrix(etf_ids)
        if factor_groups is None and W.parent_map is not None:
            factor_groups = W.parent_map
    else:
        Wm = np.asarray(W, dtype=float)
        if etf_ids is None or factor_ids is None:
            raise ModelError("a dense weight matrix needs etf_ids and factor_ids")
    Wm = np.asarray(Wm, dtype=float)
    if Wm.shape != (len(etf_ids), len(factor_ids)):
        raise ModelError(f"weight matrix {Wm.shape} does not match ids")
    sums = Wm.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
    if bad.size:
        raise ModelError(f"weights of {etf_ids[bad[0]]} sum to {sums[bad[0]]!r}, not 1")
    if (Wm < 0).any():
        raise ModelError("negative weights")

    ids, X, dropped, T = _prepare(panel, list(etf_ids), lookback)
    row = {e: k for k, e in enumerate(etf_ids)}
    Wm = Wm[[row[e] for e in ids]]
    used = np.flatnonzero(np.abs(Wm).sum(axis=0) > 0)
    factor_ids = [factor_ids[k] for k in used]
    Wm = Wm[:, used]
    K = len(factor_ids)

    upper: list[np.ndarray] = []
    groups = None
    if factor_groups is not None:
        groups = {c: factor_groups[c] for c in factor_ids}
        parents = sorted(set(groups.values()))
        pidx = {p: n for n, p in enumerate(parents)}
        upper = [np.array([pidx[groups[c]] for c in factor_ids], dtype=int)]
        _check_top(upper[0], T)
    elif K >= T - 1:
        raise ModelError(f"top level too large for lookback ({K} factors, T = {T}); supply factor groups")

    U = Wm.copy()
    if augment:
        Z, _ = _standardize(X)
        dominant = np.argmax(Wm, axis=1)
        U = Wm * block_pc_loadings(Z, dominant, K)[np.arange(len(ids)), dominant][:, None]
    params = {"construction": "general", "lookback": str(T), "augment": str(augment)}
    return _assemble(ids, X, U, factor_ids, groups, upper, augment, dropped, params)


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------


def invert_model(model: RiskModel) -> np.ndarray:
    """Inverse of the model covariance through the diagonal-plus-low-rank identity.

    Only a ``K x K`` system is factorized.
    """
    xi2 = model.specific_var
    if (xi2 < SPECIFIC_FLOOR * (1 - 1e-12)).any():
        raise ModelError("specific variances below the floor; model is singular")
    if np.mean(xi2 <= SPECIFIC_FLOOR * (1 + 1e-9)) > 0.5:
        warnings.warn("more than half of the specific variances sit at the floor; "
                      "the model is nearly degenerate", RuntimeWarning, stacklevel=2)
    d_inv = 1.0 / (model.total_var * xi2)
    vals, vecs = np.linalg.eigh(model.factor_cov)
    root = vecs * np.sqrt(np.clip(vals, 0, None))
    B = model.effective_loadings @ root  # Gamma = D + B B^T
    DB = d_inv[:, None] * B
    inner = np.eye(B.shape[1]) + B.T @ DB
    cf = linalg.cho_factor(inner)
    out = -DB @ linalg.cho_solve(cf, DB.T)
    out[np.diag_indices_from(out)] += d_inv
    return out


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def save_model(model: RiskModel, directory: str | Path, manifest: Mapping[str, object] | None = None) -> None:
    """Write loadings, factor covariance, specific variances and a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "loadings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("etf_id", "factor_id", "value"))
        for i, e in enumerate(model.etf_ids):
            for k, f in enumerate(model.factor_ids):
                if model.loadings[i, k] != 0:
                    w.writerow((e, f, repr(float(model.loadings[i, k]))))
    with open(d / "factors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("factor_id", "group"))
        for f in model.factor_ids:
            w.writerow((f, (model.factor_groups or {}).get(f, "")))
    with open(d / "factor_cov.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("factor_i", "factor_j", "value"))
        for a, fa in enumerate(model.factor_ids):
            for b, fb in enumerate(model.factor_ids):
                w.writerow((fa, fb, repr(float(model.factor_cov[a, b]))))
    with open(d / "specific.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("etf_id", "total_var", "specific_corr", "specific_var", "gamma"))
        for i, e in enumerate(model.etf_ids):
            w.writerow((e, repr(float(model.total_var[i])), repr(float(model.specific_var[i])),
                        repr(float(model.total_var[i] * model.specific_var[i])),
                        repr(float(model.gamma[i]))))
    body = {"params": dict(model.params), "dropped": list(model.dropped),
            "n_etfs": len(model.etf_ids), "n_factors": len(model.factor_ids)}
    body.update(manifest or {})
    (d / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(directory: str | Path) -> RiskModel:
    d = Path(directory)
    with open(d / "factors.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    factor_ids = tuple(r["factor_id"] for r in rows)
    groups = {r["factor_id"]: r["group"] for r in rows if r["group"]} or None
    with open(d / "specific.csv", newline="", encoding="utf-8") as fh:
        spec = list(csv.DictReader(fh))
    etf_ids = tuple(r["etf_id"] for r in spec)
    ei = {e: k for k, e in enumerate(etf_ids)}
    fi = {f: k for k, f in enumerate(factor_ids)}
    loadings = np.zeros((len(etf_ids), len(factor_ids)))
    with open(d / "loadings.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            loadings[ei[r["etf_id"]], fi[r["factor_id"]]] = float(r["value"])
    Phi = np.zeros((len(factor_ids), len(factor_ids)))
    with open(d / "factor_cov.csv", newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            Phi[fi[r["factor_i"]], fi[r["factor_j"]]] = float(r["value"])
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    return RiskModel(
        etf_ids, factor_ids, loadings,
        np.array([float(r["gamma"]) for r in spec]), Phi,
        np.array([float(r["specific_corr"]) for r in spec]),
        np.array([float(r["total_var"]) for r in spec]),
        groups, tuple(manifest.get("dropped", ())), manifest.get("params", {}))
