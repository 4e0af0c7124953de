"""Bayesian optimization of a black-box objective over a box.

The loop maximizes the objective.  Points are handled in unit-cube
coordinates internally (a linear rescale of the box, or of its logarithm when
``log_space`` is set) so that one set of GP length-scale bounds fits every
problem.  Failed evaluations arrive as the ``-1e12`` sentinel; the surrogate
never sees that value directly, see :func:`surrogate_targets`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .egp import EnsembleSurrogate, fit_ensemble
from .gp import KERNELS, gp_fit
from .kalman import FAILED_OBJECTIVE
from .numerics import normal_pdf_cdf
from .rng import rng_stream

__all__ = [
    "SURROGATES",
    "BoConfig",
    "BoHistory",
    "lhs_init",
    "expected_improvement",
    "maximize_acquisition",
    "surrogate_targets",
    "run_bo",
]

SURROGATES = ("egp",) + KERNELS


@dataclass(frozen=True)
class BoConfig:
    bounds: np.ndarray
    budget: int = 60
    n_initial: int = 10
    surrogate: str = "egp"
    restarts: int = 8
    n_probes: int = 1024
    seed: int = 0
    log_space: bool | tuple = False
    output_warp: bool = False
    ard: bool = False

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if b.ndim != 2 or b.shape[1] != 2 or not np.all(b[:, 0] < b[:, 1]):
            raise ValueError("bounds must be (D, 2) with lower < upper")
        mask = np.broadcast_to(np.asarray(self.log_space, dtype=bool), (b.shape[0],)).copy()
        if np.any(b[mask, 0] <= 0):
            raise ValueError("log_space needs strictly positive bounds")
        object.__setattr__(self, "log_space", tuple(bool(v) for v in mask))
        if self.budget < 0 or self.n_initial < 2 or self.restarts < 1 or self.n_probes < 1:
            raise ValueError("need budget >= 0, n_initial >= 2, restarts >= 1, n_probes >= 1")
        if self.surrogate not in SURROGATES:
            raise ValueError(f"unknown surrogate {self.surrogate!r}; choose from {SURROGATES}")
        object.__setattr__(self, "bounds", b)

    def to_unit(self, theta):
        lo, hi = self._edges()
        t = np.array(theta, dtype=float)
        mask = np.array(self.log_space)
        t[..., mask] = np.log(t[..., mask])
        return (t - lo) / (hi - lo)

    def from_unit(self, u):
        lo, hi = self._edges()
        t = lo + np.clip(u, 0.0, 1.0) * (hi - lo)
        mask = np.array(self.log_space)
        t[..., mask] = np.exp(t[..., mask])
        # keep rounding from leaving the box
        return np.clip(t, self.bounds[:, 0], self.bounds[:, 1])

    def _edges(self):
        b = self.bounds.copy()
        mask = np.array(self.log_space)
        b[mask] = np.log(b[mask])
        return b[:, 0], b[:, 1]


@dataclass
class BoHistory:
    """Every evaluation in order; the first ``n_initial`` come from the LHS design."""

    thetas: list = field(default_factory=list)
    values: list = field(default_factory=list)
    incumbents: list = field(default_factory=list)
    weights: list | None = None
    n_initial: int = 0

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.values))

    @property
    def theta_hat(self) -> np.ndarray:
        return np.asarray(self.thetas[self.best_index])

    @property
    def best_value(self) -> float:
        return float(self.values[self.best_index])

    @property
    def n_evaluations(self) -> int:
        return len(self.values)

    def to_dict(self) -> dict:
        out = {
            "n_initial": self.n_initial,
            "n_evaluations": self.n_evaluations,
            "theta_hat": self.theta_hat.tolist(),
            "best_value": self.best_value,
            "iterations": [
                {"theta": np.asarray(t).tolist(), "y": float(y), "incumbent": float(b)}
                for t, y, b in zip(self.thetas, self.values, self.incumbents)
            ],
        }
        if self.weights is not None:
            for rec, w in zip(out["iterations"], self.weights):
                rec["weights"] = np.asarray(w).tolist()
        return out


def lhs_init(bounds, n: int, seed: int = 0, *, rng=None) -> np.ndarray:
    """``n`` Latin-hypercube points in the box, one per stratum in every dimension."""
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_stream(seed, "lhs") if rng is None else rng
    u = qmc.LatinHypercube(d=b.shape[0], seed=rng).random(n)
    return b[:, 0] + u * (b[:, 1] - b[:, 0])


def expected_improvement(mean, var, best):
    """``sigma phi(delta / sigma) + delta Phi(delta / sigma)`` with ``delta = mean - best``.

    Where the variance is zero this is ``max(delta, 0)``.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    delta = mean - best
    sigma = np.sqrt(np.maximum(var, 0.0))
    pos = sigma > 0
    z = np.where(pos, delta / np.where(pos, sigma, 1.0), 0.0)
    pdf, cdf = normal_pdf_cdf(z)
    out = np.where(pos, sigma * pdf + delta * cdf, np.maximum(delta, 0.0))
    return float(out) if out.ndim == 0 else out


def maximize_acquisition(acquisition, bounds, restarts: int = 8, seed: int = 0, n_probes: int = 1024, extra=None):
    """Best-effort global maximizer of a vectorized ``acquisition`` over a box.

    A scrambled Sobol set of ``n_probes`` points (plus optional ``extra``
    candidates) is scored, then the top ``restarts`` are polished by a
    coordinate pattern search whose step halves from 10% of the box width down
    to 1e-4 of it.  Deterministic for a given ``seed``.
    """
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    lo, hi = b[:, 0], b[:, 1]
    width = hi - lo
    D = b.shape[0]
    sobol = qmc.Sobol(d=D, scramble=True, seed=rng_stream(seed, "probes"))
    m = int(np.ceil(np.log2(max(n_probes, 1))))
    P = lo + sobol.random_base2(m)[:n_probes] * width
    if extra is not None:
        P = np.vstack([P, np.clip(np.atleast_2d(extra), lo, hi)])
    scores = np.asarray(acquisition(P), dtype=float)
    scores = np.where(np.isfinite(scores), scores, -np.inf)
    order = np.argsort(-scores, kind="stable")[:restarts]
    X = P[order].copy()
    f = scores[order].copy()

    step = 0.1
    moves = np.concatenate([np.eye(D), -np.eye(D)]) * width
    for _ in range(400):
        if step < 1e-4:
            break
        cand = np.clip(X[:, None, :] + step * moves[None, :, :], lo, hi)
        cs = np.asarray(acquisition(cand.reshape(-1, D)), dtype=float).reshape(len(X), -1)
        cs = np.where(np.isfinite(cs), cs, -np.inf)
        j = np.argmax(cs, axis=1)
        gain = cs[np.arange(len(X)), j] > f
        if not np.any(gain):
            step *= 0.5
            continue
        X[gain] = cand[gain, j[gain]]
        f[gain] = cs[gain, j[gain]]
    k = int(np.argmax(f))
    if f[k] >= scores[order[0]]:
        return X[k]
    return P[order[0]]


def surrogate_targets(values) -> np.ndarray:
    """Objective values with failure sentinels replaced for surrogate fitting.

    A failed evaluation becomes ``min(valid) - (max(valid) - min(valid))``
    (one range below the worst success), so the surrogate learns that region
    is poor without a 1e12 outlier wrecking the standardization.
    """
    y = np.asarray(values, dtype=float)
    bad = (y <= FAILED_OBJECTIVE) | ~np.isfinite(y)
    if not np.any(bad):
        return y
    if np.all(bad):
        return np.zeros_like(y)
    good = y[~bad]
    span = good.max() - good.min()
    return np.where(bad, good.min() - (span if span > 0 else 1.0), y)


def warp_targets(y, ref: float):
    """Monotone compression ``-sign(d) log1p(|d|)`` of ``d = ref - y``.

    Keeps the ordering of objective values (so the incumbent and the argmax
    are unchanged) while shrinking a range of thousands of log-likelihood
    units to a few, so the GP can resolve differences near the top.
    """
    d = ref - np.asarray(y, dtype=float)
    return -np.sign(d) * np.log1p(np.abs(d))


def _fit(kind, X, y, previous, ard=False):
    if kind == "egp":
        weights = None if previous is None else previous.weights
        return fit_ensemble(X, y, weights=weights, previous=previous, ard=ard)
    warm = None if previous is None else previous.hyper
    return gp_fit(X, y, kind, warm_start=warm, ard=ard)


def run_bo(objective, config: BoConfig) -> BoHistory:
    """Maximize ``objective`` with ``n_initial`` LHS points plus ``budget`` BO steps.

    With the ensemble surrogate, expert weights are updated from each new
    observation using the experts fitted before that observation, then every
    expert is refitted.  The estimate is the best evaluated point.
    """
    cfg = config
    D = cfg.bounds.shape[0]
    unit_box = np.tile([0.0, 1.0], (D, 1))
    hist = BoHistory(n_initial=cfg.n_initial, weights=[] if cfg.surrogate == "egp" else None)

    U = lhs_init(unit_box, cfg.n_initial, rng=rng_stream(cfg.seed, "bo", "lhs"))
    best = -np.inf
    for u in U:
        theta = cfg.from_unit(u)
        y = float(objective(theta))
        best = max(best, y)
        hist.thetas.append(theta)
        hist.values.append(y)
        hist.incumbents.append(best)
    if hist.weights is not None:
        hist.weights.extend([np.full(len(KERNELS), 1.0 / len(KERNELS))] * cfg.n_initial)

    U = [u for u in U]
    surrogate = None
    for it in range(cfg.budget):
        targets = surrogate_targets(hist.values)
        ref = float(np.max(targets))
        if cfg.output_warp:
            targets = warp_targets(targets, ref)
        try:
            surrogate = _fit(cfg.surrogate, np.array(U), targets, surrogate, cfg.ard)
        except ValueError:
            # degenerate design (all points coincide): fall back to a probe
            surrogate = None
        incumbent = float(np.max(targets))
        if surrogate is None:
            u_next = qmc.Sobol(d=D, seed=rng_stream(cfg.seed, "bo", "fallback", it)).random(1)[0]
        else:

            def acq(P, s=surrogate):
                m, v = s.predict(P)
                return expected_improvement(m, v, incumbent)

            u_next = maximize_acquisition(
                acq, unit_box, cfg.restarts, seed=stream_seed(cfg.seed, it), n_probes=cfg.n_probes, extra=U[int(np.argmax(targets))]
            )
        theta = cfg.from_unit(u_next)
        y = float(objective(theta))
        if isinstance(surrogate, EnsembleSurrogate) and y > FAILED_OBJECTIVE and np.isfinite(y):
            surrogate = surrogate.updated(u_next, warp_targets(y, ref) if cfg.output_warp else y)
        best = max(best, y)
        U.append(u_next)
        hist.thetas.append(theta)
        hist.values.append(y)
        hist.incumbents.append(best)
        if hist.weights is not None:
            w = surrogate.weights if isinstance(surrogate, EnsembleSurrogate) else hist.weights[-1]
            hist.weights.append(np.array(w))
    return hist


def stream_seed(seed: int, it: int) -> int:
    """Integer seed for the acquisition search of iteration ``it``."""
    return int(rng_stream(seed, "bo", "acq", it).integers(2**63))
