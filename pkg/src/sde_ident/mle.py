"""Direct maximum likelihood by multi-start bounded Nelder-Mead.

The objective is the exact Kalman-filter negative log-likelihood.  Each start
runs in unit-cube coordinates of the (by default logarithmic) box so one
simplex scale and tolerance fits every parameter; scipy's bounded
Nelder-Mead clips vertices to the cube, which keeps every iterate inside the
box.  Noise variances span four decades of the box, so in linear coordinates
the simplex collapses onto the ``R = 1e-4`` face on many datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .bo import lhs_init
from .kalman import FAILED_OBJECTIVE, make_objective
from .model import default_bounds, param_names
from .rng import rng_stream

__all__ = ["MleConfig", "MleResult", "minimize_box", "run_mle"]


@dataclass(frozen=True)
class MleConfig:
    bounds: np.ndarray | None = None
    starts: int = 8
    max_iter: int = 400
    tol: float = 1e-8
    seed: int = 0
    log_space: bool = True  # search log(theta); needs a positive box
    restarts: int = 1  # simplex rebuilds from each converged point

    def __post_init__(self):
        if self.starts < 1 or self.max_iter < 1 or not self.tol > 0 or self.restarts < 0:
            raise ValueError("need starts >= 1, max_iter >= 1, tol > 0, restarts >= 0")


@dataclass
class MleResult:
    theta: np.ndarray
    nll: float
    start_points: np.ndarray
    start_nll: np.ndarray
    final_nll: np.ndarray  # per start, after local search
    n_evaluations: int = 0
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta.tolist(),
            "nll": self.nll,
            "n_evaluations": self.n_evaluations,
            "starts": [
                {"start": s.tolist(), "start_nll": float(a), "final_nll": float(b)}
                for s, a, b in zip(self.start_points, self.start_nll, self.final_nll)
            ],
        }


def minimize_box(nll, bounds, config: MleConfig = MleConfig()) -> MleResult:
    """Minimize ``nll`` over the box from LHS starts; lowest start index wins ties.

    Raises
    ------
    RuntimeError
        If every start evaluates to a non-finite or failed objective.
    """
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    if config.log_space and np.any(b[:, 0] <= 0):
        raise ValueError("log-space search needs a strictly positive box")
    edges = np.log(b) if config.log_space else b
    lo, width = edges[:, 0], edges[:, 1] - edges[:, 0]
    D = b.shape[0]
    count = [0]

    def to_theta(u):
        t = lo + np.clip(u, 0.0, 1.0) * width
        if config.log_space:
            t = np.exp(t)
        return np.clip(t, b[:, 0], b[:, 1])

    def f(u):
        count[0] += 1
        v = float(nll(to_theta(u)))
        return v if np.isfinite(v) else np.inf

    starts = lhs_init(np.tile([0.0, 1.0], (D, 1)), config.starts, rng=rng_stream(config.seed, "mle", "starts"))
    start_vals = np.array([f(u) for u in starts])
    finals = np.full(config.starts, np.inf)
    best_u, best_v = None, np.inf
    opts = {"maxiter": config.max_iter, "xatol": config.tol, "fatol": config.tol}
    for k, u0 in enumerate(starts):
        if not np.isfinite(start_vals[k]):
            continue
        u, v = u0, start_vals[k]
        # a fresh simplex around the converged point escapes premature collapse
        for _ in range(config.restarts + 1):
            res = minimize(f, u, method="Nelder-Mead", bounds=[(0.0, 1.0)] * D, options=opts)
            if not res.fun < v:
                break
            u, v = np.clip(res.x, 0.0, 1.0), float(res.fun)
        finals[k] = v
        if v < best_v:
            best_u, best_v = u, v
    if best_u is None:
        raise RuntimeError(f"all {config.starts} starts failed; start objectives {start_vals.tolist()}")
    return MleResult(
        theta=to_theta(best_u),
        nll=best_v,
        start_points=np.array([to_theta(u) for u in starts]),
        start_nll=start_vals,
        final_nll=finals,
        n_evaluations=count[0],
    )


def run_mle(z, order: int, T: float, config: MleConfig = MleConfig()) -> MleResult:
    """Exact-likelihood MLE of the structural parameters for a model of ``order``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    d = len(param_names(order)) - 2 if order == 2 else 1
    if z.size < d + 2:
        raise ValueError(f"need at least {d + 2} observations")
    bounds = default_bounds(order) if config.bounds is None else config.bounds
    ll = make_objective(z, order, T)

    def nll(theta):
        v = ll(theta)
        return np.inf if v <= FAILED_OBJECTIVE else -v

    return minimize_box(nll, bounds, config)
