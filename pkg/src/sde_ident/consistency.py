"""Filter consistency via normalized estimation error (NEES) and innovation (NIS) statistics.

Under a correctly specified filter, ``eps_n`` is chi-squared with ``d``
degrees of freedom and ``nu_n`` with one.  Averaging over ``N_MC`` runs of
``N`` steps gives ``N_MC * N * mean ~ chi2(k)`` with ``k = dof * N_MC * N``,
which yields the two-sided acceptance region below.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .kalman import kalman_filter
from .model import DiscreteModel
from .numerics import chi2_quantile, cholesky
from .simulate import Trajectory

__all__ = ["ConsistencyReport", "nees_nis_run", "acceptance_region", "consistency_report", "nees"]

DEFAULT_CONFIDENCE = 0.9


def nees(error, P) -> np.ndarray:
    """Squared Mahalanobis norms ``e_n^T P_n^{-1} e_n`` for stacked ``(N, d)`` errors."""
    error = np.asarray(error, dtype=float)
    P = np.asarray(P, dtype=float)
    if error.ndim == 1:
        error = error[:, None]
    if P.ndim == 1:
        P = P[:, None, None]
    d = error.shape[1]
    if d == 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(error[:, 0] == 0.0, 0.0, error[:, 0] ** 2 / P[:, 0, 0])
        if np.all(np.isfinite(out)) and np.all(P[:, 0, 0] > 0):
            return out
    elif d == 2:
        det = P[:, 0, 0] * P[:, 1, 1] - P[:, 0, 1] * P[:, 1, 0]
        if np.all(det > 1e-12 * P[:, 0, 0] * P[:, 1, 1]):
            e0, e1 = error[:, 0], error[:, 1]
            return (P[:, 1, 1] * e0 * e0 - (P[:, 0, 1] + P[:, 1, 0]) * e0 * e1 + P[:, 0, 0] * e1 * e1) / det
    # near-singular covariances: jittered Cholesky per step
    out = np.empty(error.shape[0])
    for n, (e, Pn) in enumerate(zip(error, P)):
        if not np.any(e):
            out[n] = 0.0
            continue
        v = np.linalg.solve(cholesky(Pn), e)
        out[n] = float(v @ v)
    return out


def nees_nis_run(truth: Trajectory, model: DiscreteModel):
    """Per-step NEES and NIS of a filter run with ``model`` on ``truth``.

    Returns ``(eps, nu)``, each of length ``N``.  ``eps`` uses the full
    filtered covariance, so second-order models count the velocity error too.
    """
    if truth.d != model.d:
        raise ValueError(f"trajectory has d={truth.d} but the model has d={model.d}")
    fs = kalman_filter(model, truth.observations)
    eps = nees(truth.states.T - fs.x_filt, fs.P_filt)
    nu = (truth.observations - fs.z_pred) ** 2 / fs.S
    return eps, nu


def acceptance_region(dof: int, n_mc: int, N: int, confidence: float = DEFAULT_CONFIDENCE):
    """Two-sided region for the run-and-time averaged statistic."""
    if dof < 1 or n_mc < 1 or N < 1:
        raise ValueError("dof, n_mc and N must be positive")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    k = dof * n_mc * N
    tail = 0.5 * (1.0 - confidence)
    scale = n_mc * N
    return float(chi2_quantile(k, tail) / scale), float(chi2_quantile(k, 1.0 - tail) / scale)


@dataclass(frozen=True)
class ConsistencyReport:
    nees_mean: float
    nis_mean: float
    d: int
    m: int
    n_mc: int
    N: int
    confidence: float
    nees_region: tuple
    nis_region: tuple

    @property
    def nees_pass(self) -> bool:
        return self.nees_region[0] <= self.nees_mean <= self.nees_region[1]

    @property
    def nis_pass(self) -> bool:
        return self.nis_region[0] <= self.nis_mean <= self.nis_region[1]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["nees_region"] = list(self.nees_region)
        out["nis_region"] = list(self.nis_region)
        out["nees_pass"] = self.nees_pass
        out["nis_pass"] = self.nis_pass
        return out


def consistency_report(eps_runs, nu_runs, d: int, confidence: float = DEFAULT_CONFIDENCE) -> ConsistencyReport:
    """Aggregate per-run arrays, all of the same length ``N``."""
    eps = np.asarray(eps_runs, dtype=float)
    nu = np.asarray(nu_runs, dtype=float)
    if eps.ndim != 2 or eps.shape != nu.shape or eps.size == 0:
        raise ValueError("expected matching non-empty (n_mc, N) arrays")
    n_mc, N = eps.shape
    return ConsistencyReport(
        nees_mean=float(eps.mean()),
        nis_mean=float(nu.mean()),
        d=d,
        m=1,
        n_mc=n_mc,
        N=N,
        confidence=confidence,
        nees_region=acceptance_region(d, n_mc, N, confidence),
        nis_region=acceptance_region(1, n_mc, N, confidence),
    )
