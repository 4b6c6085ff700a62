"""Multi-start damped least squares shared by all curve fits.

Bounds are enforced by reparametrisation (log for positive quantities);
the Levenberg-Marquardt step itself comes from scipy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize


class FitError(RuntimeError):
    """Fit failed to converge; ``diagnostics`` holds per-start messages."""

    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        super().__init__(message + ("" if not diagnostics else ": " + "; ".join(diagnostics)))
        self.diagnostics = list(diagnostics)


@dataclass
class RawFit:
    """Best solution in the internal (transformed) parameters."""

    x: np.ndarray
    cov: np.ndarray
    chi2: float
    dof: int
    n_starts_ok: int

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")


def covariance(jac: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """(J^T J)^-1 * scale via SVD; singular directions get infinite variance."""
    _, s, vt = np.linalg.svd(jac, full_matrices=False)
    tol = np.finfo(float).eps * max(jac.shape) * (s[0] if s.size else 0.0)
    inv = np.where(s > tol, 1.0 / np.where(s > tol, s, 1.0) ** 2, np.inf)
    with np.errstate(invalid="ignore"):
        cov = (vt.T * inv) @ vt
    bad = ~np.isfinite(inv)
    if bad.any():
        idx = np.nonzero(np.abs(vt[bad]).max(axis=0) > 1e-8)[0]
        cov[idx, :] = np.inf
        cov[:, idx] = np.inf
    return cov * scale


def multistart(residual: Callable[[np.ndarray], np.ndarray], starts: Sequence[Sequence[float]],
               scale_by_chi2: bool = False, max_nfev: int = 20000) -> RawFit:
    """Run LM from each start and keep the lowest cost.

    ``residual`` returns weighted residuals. With ``scale_by_chi2`` the
    covariance is scaled by the reduced chi-square (unknown noise level).
    """
    best = None
    notes = []
    for k, x0 in enumerate(starts):
        x0 = np.asarray(x0, dtype=float)
        try:
            with np.errstate(all="ignore"):
                r0 = residual(x0)
            if not np.all(np.isfinite(r0)):
                notes.append(f"start {k}: non-finite residual")
                continue
            with np.errstate(all="ignore"):
                res = optimize.least_squares(residual, x0, method="lm", max_nfev=max_nfev,
                                             xtol=1e-15, ftol=1e-15, gtol=1e-15)
        except (ValueError, OverflowError, FloatingPointError, np.linalg.LinAlgError) as exc:
            notes.append(f"start {k}: {exc}")
            continue
        if not (res.status > 0 and np.all(np.isfinite(res.fun)) and np.all(np.isfinite(res.x))):
            notes.append(f"start {k}: {res.message}")
            continue
        if best is None or res.cost < best[0].cost:
            best = (res, k)
    if best is None:
        raise FitError(f"no convergence from {len(starts)} starts", notes)
    res = best[0]
    n, p = res.fun.size, res.x.size
    dof = n - p
    chi2 = float(2.0 * res.cost)
    scale = chi2 / dof if (scale_by_chi2 and dof > 0) else 1.0
    cov = covariance(res.jac, scale)
    return RawFit(res.x, cov, chi2, dof, len(starts) - len(notes))


def log_errors(values: np.ndarray, log_cov_diag: np.ndarray) -> np.ndarray:
    """First-order uncertainty of exp(x) given var(x)."""
    return np.abs(values) * np.sqrt(np.abs(log_cov_diag))
