"""Expectation-maximization for ``x_n = A x_{n-1} + v_n``, ``z_n = H x_n + w_n``.

The E-step is a Kalman filter plus RTS smoother; the M-step updates the
unconstrained ``(A, Q, R)`` in closed form.  Structural parameters of the
continuous model are read off the final ``(A, Q, R)`` afterwards.

The prior on ``x_0`` is computed once from the starting model and then held
fixed.  Re-deriving it from each iterate would change the objective between
iterations and void the ascent guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .kalman import DegenerateInnovation, default_init, fast_log_likelihood, kalman_filter, rts_smooth
from .model import DiscreteModel, companion, param_names, params_to_discrete, second_order_q
from .numerics import discrete_lyapunov, mat_exp, spd_solve

__all__ = [
    "EmConfig",
    "EmStats",
    "EmTrace",
    "em_estep",
    "em_mstep",
    "run_em",
    "moment_init",
    "structural_params",
]

_Q_FLOOR = 1e-12
_POLE_GRID = (0.3, 1.0, 3.0, 10.0, 30.0)
_Q_SCALES = (0.1, 1.0, 10.0)  # the lag-0 state variance split is noisy at low SNR


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 50
    alpha: float = 1.0
    tol: float = 1e-6
    theta0: tuple | None = None  # structural parameters; moment-based when None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.tol > 0 or self.max_iter < 0:
            raise ValueError("need tol > 0 and max_iter >= 0")


@dataclass(frozen=True)
class EmStats:
    """Smoothed sums over the transitions ``n = 1..N``."""

    S11: np.ndarray  # sum E[x_n x_n^T]
    S10: np.ndarray  # sum E[x_n x_{n-1}^T]
    S00: np.ndarray  # sum E[x_{n-1} x_{n-1}^T]
    resid: float  # sum (z_n - H x_n|N)^2 + H P_n|N H^T
    N: int
    loglik: float


@dataclass
class EmTrace:
    A: list = field(default_factory=list)
    Q: list = field(default_factory=list)
    R: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    converged: bool = False
    failed: bool = False
    message: str = ""
    theta: np.ndarray | None = None  # structural estimate from the final iterate

    @property
    def n_iter(self) -> int:
        return max(len(self.loglik) - 1, 0)

    @property
    def model(self) -> DiscreteModel:
        return DiscreteModel(A=self.A[-1], Q=self.Q[-1], R=self.R[-1])

    def to_dict(self) -> dict:
        return {
            "theta_hat": None if self.theta is None else np.asarray(self.theta).tolist(),
            "converged": self.converged,
            "failed": self.failed,
            "message": self.message,
            "iterations": [
                {"A": np.asarray(a).tolist(), "Q": np.asarray(q).tolist(), "R": float(r), "loglik": float(l)}
                for a, q, r, l in zip(self.A, self.Q, self.R, self.loglik)
            ],
        }


def em_estep(model: DiscreteModel, z, init=None) -> EmStats:
    """Sufficient statistics from the smoothed moments under ``model``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    fs = kalman_filter(model, z, init)
    sm = rts_smooth(model, fs)
    xs, Ps = sm.x_smooth, sm.P_smooth
    x_prev = np.vstack([sm.x0_smooth[None, :], xs[:-1]])
    P_prev = np.concatenate([sm.P0_smooth[None], Ps[:-1]])
    S11 = Ps.sum(axis=0) + xs.T @ xs
    S00 = P_prev.sum(axis=0) + x_prev.T @ x_prev
    S10 = sm.P_lag.sum(axis=0) + xs.T @ x_prev
    resid = float(np.sum((z - xs[:, 0]) ** 2 + Ps[:, 0, 0]))
    return EmStats(S11, S10, S00, resid, z.size, fs.loglik)


def em_mstep(stats: EmStats):
    """Closed-form maximizers ``(A, Q, R)`` of the expected complete-data log-likelihood."""
    S11, S10, S00, N = stats.S11, stats.S10, stats.S00, stats.N
    # A = S10 S00^{-1}, solved as S00 A^T = S10^T
    A = spd_solve(S00, S10.T).T
    Q = (S11 - A @ S10.T - S10 @ A.T + A @ S00 @ A.T) / N
    Q = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Q)
    Q = (V * np.maximum(w, _Q_FLOOR)) @ V.T
    Q = 0.5 * (Q + Q.T)
    R = max(stats.resid / N, 0.0)
    return A, Q, R


def _autocov(z, lags):
    z = z - z.mean()
    n = z.size
    return np.array([np.dot(z[k:], z[: n - k]) / n for k in lags])


def moment_init(z, order: int, T: float) -> np.ndarray:
    """Starting structural parameters from sample autocovariances of ``z``.

    First order uses the lag-2 / lag-1 ratio for ``exp(-aT)`` (unbiased by
    measurement noise, unlike the plain lag-1 autocorrelation), then splits
    the lag-0 variance into state and noise parts.  Second order fits the
    AR(2) recursion that holds from lag 3 on and converts its roots to
    continuous-time poles; that estimate and a fixed grid of ``(a0, a1)``
    are scored by likelihood.  ``R`` comes from extrapolating the state
    autocovariance back to lag 0.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    c = _autocov(z, range(5))
    floor = 1e-6 * max(c[0], 1e-12)
    if order == 1:
        A0 = c[2] / c[1] if c[1] > 0 and c[2] > 0 else (c[1] / c[0] if c[1] > 0 else 0.5)
        A0 = min(max(A0, math.exp(-10.0 * T)), math.exp(-1e-4 * T))
        s = c[1] / A0
        R0 = max(c[0] - s, floor)
        Q0 = max(s * (1.0 - A0 * A0), floor)
        return np.array([-math.log(A0) / T, Q0, R0])
    if order != 2:
        raise ValueError(f"unsupported model order {order}")
    R0 = max(c[0] - (2.0 * c[1] - c[2]), floor)
    candidates = [(a0, a1) for a0 in _POLE_GRID for a1 in _POLE_GRID]
    try:
        phi = np.linalg.solve([[c[2], c[1]], [c[3], c[2]]], [c[3], c[4]])
        roots = np.roots([1.0, -phi[0], -phi[1]])
        if np.all(np.abs(roots) < 1.0) and np.all(np.abs(roots) > 0):
            poles = np.log(roots.astype(complex)) / T
            a1_, a0_ = float(-np.sum(poles).real), float(np.prod(poles).real)
            if 0 < a0_ <= _POLE_GRID[-1] and 0 < a1_ <= _POLE_GRID[-1]:
                candidates.insert(0, (a0_, a1_))
    except np.linalg.LinAlgError:
        pass
    # AR(2) fits near the unit circle are ill-conditioned, so every candidate
    # is scored by the exact likelihood and the best one wins
    best, best_ll = None, -math.inf
    for a0, a1 in candidates:
        try:
            A = mat_exp(companion((a0, a1)), T)
            P_unit = discrete_lyapunov(A, second_order_q(1.0, T))
        except (ValueError, np.linalg.LinAlgError):
            continue
        q_match = max(c[0] - R0, floor) / P_unit[0, 0]
        for scale in _Q_SCALES:
            theta = np.array([a0, a1, scale * q_match, R0])
            try:
                ll = fast_log_likelihood(params_to_discrete(theta, 2, T), z)
            except (ValueError, np.linalg.LinAlgError):
                continue
            if ll > best_ll:
                best, best_ll = theta, ll
    if best is None:
        raise ValueError("no admissible second-order starting point")
    return best


def structural_params(model: DiscreteModel, order: int, T: float) -> np.ndarray:
    """Map an unconstrained ``(A, Q, R)`` back to the structural parameters.

    First order: ``a = -ln(A) / T`` with ``Q`` and ``R`` passed through.
    Second order: ``F = logm(A) / T`` gives ``a1 = -tr F`` and ``a0 = det F``,
    which are invariant to the state basis EM happened to converge to.
    ``Q`` is moved into the companion basis through the observability
    matrices ``[H; HA]`` of both models and ``Qtilde`` is its least-squares
    multiple of the closed-form template.
    """
    if order == 1:
        A = float(model.A[0, 0])
        if not A > 0:
            raise ValueError(f"transition {A} has no real logarithm")
        return np.array([-math.log(A) / T, float(model.Q[0, 0]), model.R])
    if order != 2:
        raise ValueError(f"unsupported model order {order}")
    F = scipy.linalg.logm(model.A)
    if np.max(np.abs(np.imag(F))) > 1e-8 * max(1.0, np.max(np.abs(F))):
        F = model.A - np.eye(2)  # first-order fallback when logm is not real
    F = np.real(F) / T
    a1, a0 = -float(np.trace(F)), float(np.linalg.det(F))
    Ac = mat_exp(companion((a0, a1)), T)
    O_em = np.vstack([[1.0, 0.0], model.A[0]])
    O_c = np.vstack([[1.0, 0.0], Ac[0]])
    M = np.linalg.solve(O_c, O_em)
    Qc = M @ model.Q @ M.T
    tmpl = second_order_q(1.0, T)
    q = float(np.sum(Qc * tmpl) / np.sum(tmpl * tmpl))
    return np.array([a0, a1, q, model.R])


def run_em(z, order: int, T: float, config: EmConfig = EmConfig()) -> EmTrace:
    """Alternate E- and M-steps with damping ``theta <- (1 - alpha) theta + alpha theta_new``.

    ``trace.loglik[i]`` is the data log-likelihood of iterate ``i`` under the
    fixed prior.  A non-finite likelihood or a failed filter stops the loop
    and sets ``trace.failed``.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    d = order
    if z.size < d + 2:
        raise ValueError(f"need at least {d + 2} observations")
    theta0 = moment_init(z, order, T) if config.theta0 is None else np.asarray(config.theta0, dtype=float)
    if theta0.shape != (len(param_names(order)),):
        raise ValueError(f"theta0 must have {len(param_names(order))} entries")
    model = params_to_discrete(theta0, order, T)
    init = default_init(model)
    trace = EmTrace()
    a = config.alpha
    for it in range(config.max_iter + 1):
        try:
            stats = em_estep(model, z, init)
        except (DegenerateInnovation, np.linalg.LinAlgError, ValueError) as exc:
            trace.failed, trace.message = True, f"E-step failed at iteration {it}: {exc}"
            break
        if not math.isfinite(stats.loglik):
            trace.failed, trace.message = True, f"non-finite log-likelihood at iteration {it}"
            break
        trace.A.append(model.A.copy())
        trace.Q.append(model.Q.copy())
        trace.R.append(model.R)
        trace.loglik.append(stats.loglik)
        if it == config.max_iter:
            break
        try:
            A_new, Q_new, R_new = em_mstep(stats)
        except (np.linalg.LinAlgError, ValueError) as exc:
            trace.failed, trace.message = True, f"M-step failed at iteration {it}: {exc}"
            break
        A_next = (1 - a) * model.A + a * A_new
        Q_next = (1 - a) * model.Q + a * Q_new
        R_next = (1 - a) * model.R + a * R_new
        step = math.sqrt(
            np.sum((A_next - model.A) ** 2) + np.sum((Q_next - model.Q) ** 2) + (R_next - model.R) ** 2
        )
        if not (np.all(np.isfinite(A_next)) and np.all(np.isfinite(Q_next)) and math.isfinite(R_next)):
            trace.failed, trace.message = True, f"non-finite update at iteration {it}"
            break
        model = DiscreteModel(A=A_next, Q=Q_next, R=R_next, T=T)
        if step < config.tol:
            trace.converged = True
            stats = em_estep(model, z, init)
            trace.A.append(model.A.copy())
            trace.Q.append(model.Q.copy())
            trace.R.append(model.R)
            trace.loglik.append(stats.loglik)
            break
    if trace.A:
        try:
            trace.theta = structural_params(trace.model, order, T)
        except ValueError as exc:
            trace.failed, trace.message = True, f"structural mapping failed: {exc}"
    return trace
