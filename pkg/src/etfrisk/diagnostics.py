"""
How well a single style factor explains pairwise correlations.

For a style vector ``beta`` every pair ``i > j`` gives one observation of
the correlation ``Psi_ij`` and three regressors: a constant, the symmetric
sum ``beta_i + beta_j`` and the product ``beta_i * beta_j``. The last two are
demeaned so the constant's coefficient is the mean pairwise correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .data import DataError

REGRESSORS = ("intercept", "sum", "product")
RANK_TOL = 1e-10


@dataclass(frozen=True)
class StyleDiagnosticResult:
    coefficients: dict[str, float]  # dropped regressors are absent
    dropped: tuple[str, ...]
    r_squared: float
    mean_correlation: float
    n_pairs: int
    residuals: np.ndarray

    @property
    def intercept(self) -> float:
        return self.coefficients["intercept"]

    def lines(self) -> list[str]:
        out = [f"pairs: {self.n_pairs}", f"mean pairwise correlation: {self.mean_correlation:.10g}"]
        for name in REGRESSORS:
            if name in self.coefficients:
                out.append(f"coef {name}: {self.coefficients[name]:.10g}")
            else:
                out.append(f"coef {name}: dropped (collinear)")
        out.append(f"R^2: {self.r_squared:.10g}")
        return out


def style_design(beta: np.ndarray, nu: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Columns (1, y, z) over the strict lower triangle, y and z demeaned, plus the pair indices."""
    beta = np.asarray(beta, dtype=float)
    nu = np.ones_like(beta) if nu is None else np.asarray(nu, dtype=float)
    i, j = np.tril_indices(len(beta), k=-1)
    y = nu[i] * beta[j] + nu[j] * beta[i]
    z = beta[i] * beta[j]
    X = np.column_stack([np.ones_like(y), y - y.mean(), z - z.mean()])
    return X, i, j


def style_factor_diagnostic(psi: np.ndarray, beta: np.ndarray) -> StyleDiagnosticResult:
    psi = np.asarray(psi, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = psi.shape[0]
    if psi.shape != (n, n) or beta.shape != (n,):
        raise DataError(f"shape mismatch: psi {psi.shape}, beta {beta.shape}")
    if n < 3:
        raise DataError("need at least three instruments")
    if not np.allclose(psi, psi.T, atol=1e-12) or not np.allclose(np.diag(psi), 1.0, atol=1e-12):
        raise DataError("psi must be symmetric with unit diagonal")

    X, i, j = style_design(beta)
    target = psi[i, j]
    # pivoted QR; a column is dropped when its diagonal R entry is tiny relative to the largest
    norms = np.linalg.norm(X, axis=0)
    scale = norms.max()
    keep = [k for k in range(3) if norms[k] > RANK_TOL * scale]
    if len(keep) > 1:
        _, R, piv = linalg.qr(X[:, keep], mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int((d > RANK_TOL * d[0]).sum())
        keep = sorted(keep[p] for p in piv[:rank])
    if 0 not in keep:
        keep = [0] + keep
    A = X[:, keep]
    coef, *_ = linalg.lstsq(A, target)
    resid = target - A @ coef
    tss = float(((target - target.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 1.0
    return StyleDiagnosticResult(
        coefficients={REGRESSORS[k]: float(c) for k, c in zip(keep, coef)},
        dropped=tuple(REGRESSORS[k] for k in range(3) if k not in keep),
        r_squared=r2,
        mean_correlation=float(target.mean()),
        n_pairs=len(target),
        residuals=resid,
    )
