"""Kalman filter log-likelihood and Rauch-Tung-Striebel smoothing.

The filter starts from a prior ``(x_0|0, P_0|0)`` on the state at time zero
and processes observations ``z_1..z_N``.  The smoother returns moments for
``x_1..x_N`` and, separately, for the prior state ``x_0`` so that EM can form
its cross-moment sums over every transition ``x_{n-1} -> x_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DiscreteModel, params_to_discrete
from .numerics import discrete_lyapunov, spd_solve, spectral_radius

__all__ = [
    "DegenerateInnovation",
    "FilterState",
    "SmootherState",
    "FAILED_OBJECTIVE",
    "FALLBACK_PRIOR_VARIANCE",
    "default_init",
    "kalman_filter",
    "log_likelihood",
    "fast_log_likelihood",
    "rts_smooth",
    "make_objective",
]

FAILED_OBJECTIVE = -1e12
FALLBACK_PRIOR_VARIANCE = 1e3
_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateInnovation(ValueError):
    """Raised when an innovation variance is not strictly positive and finite."""


@dataclass(frozen=True)
class FilterState:
    """Forward-pass quantities, indexed by step ``n = 1..N`` along axis 0."""

    x_pred: np.ndarray  # (N, d)
    P_pred: np.ndarray  # (N, d, d)
    x_filt: np.ndarray  # (N, d)
    P_filt: np.ndarray  # (N, d, d)
    z_pred: np.ndarray  # (N,)
    S: np.ndarray  # (N,)
    K: np.ndarray  # (N, d)
    loglik_terms: np.ndarray  # (N,)
    x0: np.ndarray  # prior mean at n = 0
    P0: np.ndarray  # prior covariance at n = 0

    @property
    def N(self) -> int:
        return self.S.size

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_terms))


@dataclass(frozen=True)
class SmootherState:
    """Smoothed moments of ``x_1..x_N`` plus those of the prior state ``x_0``.

    ``P_lag[n]`` is ``Cov(x_{n+1}, x_n | z_1:N)`` in zero-based storage, so
    ``P_lag[0]`` couples ``x_1`` with ``x_0``.
    """

    x_smooth: np.ndarray  # (N, d)
    P_smooth: np.ndarray  # (N, d, d)
    P_lag: np.ndarray  # (N, d, d)
    J: np.ndarray  # (N, d, d); J[n] maps x_{n+1} onto x_n, J[0] is the prior gain
    x0_smooth: np.ndarray
    P0_smooth: np.ndarray


def default_init(model: DiscreteModel):
    """Zero mean with the stationary covariance, or ``1e3 I`` near instability."""
    d = model.d
    if spectral_radius(model.A) < 1.0 - 1e-9:
        try:
            P0 = discrete_lyapunov(model.A, model.Q)
            if np.all(np.isfinite(P0)):
                return np.zeros(d), P0
        except (ValueError, np.linalg.LinAlgError):
            pass
    return np.zeros(d), FALLBACK_PRIOR_VARIANCE * np.eye(d)


def _check_obs(z):
    z = np.asarray(z, dtype=float).reshape(-1)
    if not np.all(np.isfinite(z)):
        raise ValueError("observations must be finite")
    return z


def kalman_filter(model: DiscreteModel, z, init=None, *, general: bool = False) -> FilterState:
    """Full forward pass with the Joseph-form covariance update.

    ``d <= 2`` runs on unrolled float arithmetic; ``general=True`` forces the
    matrix implementation, which handles any ``d``.

    Raises
    ------
    DegenerateInnovation
        If any ``S_n`` is not strictly positive and finite.
    """
    z = _check_obs(z)
    d = model.d
    x0, P0 = default_init(model) if init is None else init
    x0 = np.asarray(x0, dtype=float).reshape(d)
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    if d <= 2 and not general:
        out = _filter_small(model, z, x0, P0)
    else:
        out = _filter_general(model, z, x0, P0)
    return FilterState(**out, x0=x0.copy(), P0=P0.copy())


def _filter_general(model, z, x0, P0):
    A, Q, R = model.A, model.Q, model.R
    d = model.d
    x = x0.copy()
    P = P0.copy()
    N = z.size
    out = {
        "x_pred": np.empty((N, d)),
        "P_pred": np.empty((N, d, d)),
        "x_filt": np.empty((N, d)),
        "P_filt": np.empty((N, d, d)),
        "z_pred": np.empty(N),
        "S": np.empty(N),
        "K": np.empty((N, d)),
        "loglik_terms": np.empty(N),
    }
    eye = np.eye(d)
    for n in range(N):
        xp = A @ x
        Pp = A @ P @ A.T + Q
        Pp = 0.5 * (Pp + Pp.T)
        S = Pp[0, 0] + R
        if not (S > 0.0 and math.isfinite(S)):
            raise DegenerateInnovation(f"degenerate innovation variance S={S} at step {n + 1}")
        nu = z[n] - xp[0]
        K = Pp[:, 0] / S
        x = xp + K * nu
        IKH = eye.copy()
        IKH[:, 0] -= K
        P = IKH @ Pp @ IKH.T + R * np.outer(K, K)
        P = 0.5 * (P + P.T)
        out["x_pred"][n] = xp
        out["P_pred"][n] = Pp
        out["x_filt"][n] = x
        out["P_filt"][n] = P
        out["z_pred"][n] = xp[0]
        out["S"][n] = S
        out["K"][n] = K
        out["loglik_terms"][n] = -0.5 * (_LOG_2PI + math.log(S) + nu * nu / S)
    return out


def _filter_small(model, z, x0, P0):
    # d in {1, 2}; a scalar model is embedded as d = 2 with zero couplings,
    # which keeps every first-component quantity exact
    d = model.d
    if d == 1:
        a11, a12, a21, a22 = float(model.A[0, 0]), 0.0, 0.0, 0.0
        q11, q12, q22 = float(model.Q[0, 0]), 0.0, 0.0
        x1, x2 = float(x0[0]), 0.0
        p11, p12, p22 = float(P0[0, 0]), 0.0, 0.0
    else:
        a11, a12, a21, a22 = model.A.ravel().tolist()
        q11, q12, q22 = float(model.Q[0, 0]), float(0.5 * (model.Q[0, 1] + model.Q[1, 0])), float(model.Q[1, 1])
        x1, x2 = x0.tolist()
        p11, p12, p22 = float(P0[0, 0]), float(0.5 * (P0[0, 1] + P0[1, 0])), float(P0[1, 1])
    r = float(model.R)
    N = z.size
    xp = [None] * N
    Pp = [None] * N
    xf = [None] * N
    Pf = [None] * N
    S_ = [0.0] * N
    K_ = [None] * N
    ll = [0.0] * N
    for n, zn in enumerate(z.tolist()):
        m1 = a11 * x1 + a12 * x2
        m2 = a21 * x1 + a22 * x2
        b11 = a11 * p11 + a12 * p12
        b12 = a11 * p12 + a12 * p22
        b21 = a21 * p11 + a22 * p12
        b22 = a21 * p12 + a22 * p22
        c11 = b11 * a11 + b12 * a12 + q11
        c12 = b11 * a21 + b12 * a22 + q12
        c22 = b21 * a21 + b22 * a22 + q22
        s = c11 + r
        if not (s > 0.0 and s < math.inf):
            raise DegenerateInnovation(f"degenerate innovation variance S={s} at step {n + 1}")
        nu = zn - m1
        k1 = c11 / s
        k2 = c12 / s
        x1 = m1 + k1 * nu
        x2 = m2 + k2 * nu
        e = 1.0 - k1
        p11 = e * e * c11 + k1 * k1 * r
        p12 = e * (c12 - k2 * c11) + k1 * k2 * r
        p22 = c22 - 2.0 * k2 * c12 + k2 * k2 * c11 + k2 * k2 * r
        xp[n] = (m1, m2)
        Pp[n] = (c11, c12, c12, c22)
        xf[n] = (x1, x2)
        Pf[n] = (p11, p12, p12, p22)
        S_[n] = s
        K_[n] = (k1, k2)
        ll[n] = -0.5 * (_LOG_2PI + math.log(s) + nu * nu / s)
    sl = slice(0, d)

    def arr(rows, shape):
        a = np.array(rows, dtype=float).reshape((N,) + shape)
        return a

    P_pred = arr(Pp, (2, 2))[:, sl, sl] if N else np.empty((0, d, d))
    P_filt = arr(Pf, (2, 2))[:, sl, sl] if N else np.empty((0, d, d))
    return {
        "x_pred": arr(xp, (2,))[:, sl] if N else np.empty((0, d)),
        "P_pred": np.ascontiguousarray(P_pred),
        "x_filt": arr(xf, (2,))[:, sl] if N else np.empty((0, d)),
        "P_filt": np.ascontiguousarray(P_filt),
        "z_pred": np.array([m[0] for m in xp], dtype=float),
        "S": np.array(S_, dtype=float),
        "K": arr(K_, (2,))[:, sl] if N else np.empty((0, d)),
        "loglik_terms": np.array(ll, dtype=float),
    }


def log_likelihood(model: DiscreteModel, z, init=None):
    """Sum of one-step predictive log-densities and the full :class:`FilterState`."""
    fs = kalman_filter(model, z, init)
    return fs.loglik, fs


def _ll_scalar(a, q, r, x, p, z):
    total = 0.0
    for zn in z:
        xp = a * x
        pp = a * a * p + q
        s = pp + r
        if not s > 0.0:
            raise DegenerateInnovation(f"degenerate innovation variance S={s}")
        nu = zn - xp
        k = pp / s
        x = xp + k * nu
        p = (1.0 - k) * (1.0 - k) * pp + k * k * r
        total += math.log(s) + nu * nu / s
    return total


def _ll_pair(A, Q, r, x, P, z):
    a11, a12, a21, a22 = A.ravel().tolist()
    q11, q12, q22 = float(Q[0, 0]), float(0.5 * (Q[0, 1] + Q[1, 0])), float(Q[1, 1])
    x1, x2 = x.tolist()
    p11, p12, p22 = float(P[0, 0]), float(0.5 * (P[0, 1] + P[1, 0])), float(P[1, 1])
    r = float(r)
    total = 0.0
    for zn in z:
        # predict
        m1 = a11 * x1 + a12 * x2
        m2 = a21 * x1 + a22 * x2
        b11 = a11 * p11 + a12 * p12
        b12 = a11 * p12 + a12 * p22
        b21 = a21 * p11 + a22 * p12
        b22 = a21 * p12 + a22 * p22
        c11 = b11 * a11 + b12 * a12 + q11
        c12 = b11 * a21 + b12 * a22 + q12
        c22 = b21 * a21 + b22 * a22 + q22
        s = c11 + r
        if not s > 0.0:
            raise DegenerateInnovation(f"degenerate innovation variance S={s}")
        nu = zn - m1
        k1 = c11 / s
        k2 = c12 / s
        x1 = m1 + k1 * nu
        x2 = m2 + k2 * nu
        # Joseph form with H = [1, 0]: (I - K H) C (I - K H)^T + r K K^T
        e = 1.0 - k1
        p11 = e * e * c11 + k1 * k1 * r
        p12 = e * (c12 - k2 * c11) + k1 * k2 * r
        p22 = c22 - 2.0 * k2 * c12 + k2 * k2 * c11 + k2 * k2 * r
        total += math.log(s) + nu * nu / s
    return total


def fast_log_likelihood(model: DiscreteModel, z, init=None) -> float:
    """Log-likelihood only, via unrolled scalar loops for ``d <= 2``.

    Agrees with :func:`log_likelihood` to rounding; used on the hot path of
    the optimizers where the per-step arrays are not needed.
    """
    z = _check_obs(z)
    x0, P0 = default_init(model) if init is None else init
    x0 = np.asarray(x0, dtype=float).reshape(model.d)
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    zl = z.tolist()
    if model.d == 1:
        total = _ll_scalar(
            float(model.A[0, 0]), float(model.Q[0, 0]), model.R, float(x0[0]), float(P0[0, 0]), zl
        )
    elif model.d == 2:
        total = _ll_pair(model.A, model.Q, model.R, x0, P0, zl)
    else:
        return log_likelihood(model, z, (x0, P0))[0]
    if not math.isfinite(total):
        raise DegenerateInnovation("non-finite log-likelihood")
    return -0.5 * (total + z.size * _LOG_2PI)


def rts_smooth(model: DiscreteModel, fs: FilterState, *, general: bool = False) -> SmootherState:
    """Backward RTS pass with lag-one cross-covariances.

    Gains are ``J_n = P_n|n A^T P_{n+1|n}^{-1}``.  The 2x2 path inverts the
    predicted covariance in closed form and defers to a jittered Cholesky
    solve when it is numerically singular.
    """
    N, d = fs.x_filt.shape
    if N == 0:
        e = np.empty((0, d, d))
        return SmootherState(np.empty((0, d)), e, e.copy(), e.copy(), fs.x0.copy(), fs.P0.copy())
    if d == 1 and not general:
        return _smooth_scalar(model, fs)
    return _smooth_general(model, fs)


def _smooth_scalar(model, fs):
    a = float(model.A[0, 0])
    N = fs.S.size
    xf = fs.x_filt[:, 0].tolist()
    xp = fs.x_pred[:, 0].tolist()
    pf = fs.P_filt[:, 0, 0].tolist()
    pp = fs.P_pred[:, 0, 0].tolist()
    p0, x0 = float(fs.P0[0, 0]), float(fs.x0[0])
    for v in pp:
        if not v > 0.0:
            return _smooth_general(model, fs)
    # J[n] maps x_{n+1} onto x_n with J[0] the prior gain (zero-based storage)
    J = [0.0] * N
    J[0] = p0 * a / pp[0]
    for n in range(N - 1):
        J[n + 1] = pf[n] * a / pp[n + 1]
    xs = [0.0] * N
    ps = [0.0] * N
    xs[-1], ps[-1] = xf[-1], pf[-1]
    for n in range(N - 2, -1, -1):
        j = J[n + 1]
        xs[n] = xf[n] + j * (xs[n + 1] - xp[n + 1])
        ps[n] = pf[n] + j * j * (ps[n + 1] - pp[n + 1])
    x0s = x0 + J[0] * (xs[0] - xp[0])
    p0s = p0 + J[0] * J[0] * (ps[0] - pp[0])
    lag = [0.0] * N
    kN = float(fs.K[-1, 0])
    lag[-1] = (1.0 - kN) * a * (pf[-2] if N >= 2 else p0)
    for n in range(N - 2, -1, -1):
        lag[n] = pf[n] * J[n] + J[n + 1] * (lag[n + 1] - a * pf[n]) * J[n]
    col = lambda v: np.array(v, dtype=float).reshape(N, 1)
    cube = lambda v: np.array(v, dtype=float).reshape(N, 1, 1)
    return SmootherState(col(xs), cube(ps), cube(lag), cube(J), np.array([x0s]), np.array([[p0s]]))


def _smooth_general(model, fs):
    A = model.A
    N, d = fs.x_filt.shape
    xs = np.empty((N, d))
    Ps = np.empty((N, d, d))
    Plag = np.empty((N, d, d))
    J = np.empty((N, d, d))

    def gain(P_f, P_p):
        # J = P_f A^T P_p^{-1}, solved as P_p J^T = A P_f
        if d == 2:
            det = P_p[0, 0] * P_p[1, 1] - P_p[0, 1] * P_p[1, 0]
            if det > 1e-12 * (P_p[0, 0] * P_p[1, 1]) and det > 0:
                inv = np.array([[P_p[1, 1], -P_p[0, 1]], [-P_p[1, 0], P_p[0, 0]]]) / det
                return P_f @ A.T @ inv
        return spd_solve(P_p, A @ P_f).T

    xs[-1] = fs.x_filt[-1]
    Ps[-1] = fs.P_filt[-1]
    for n in range(N - 2, -1, -1):
        Jn = gain(fs.P_filt[n], fs.P_pred[n + 1])
        J[n + 1] = Jn
        xs[n] = fs.x_filt[n] + Jn @ (xs[n + 1] - fs.x_pred[n + 1])
        Pn = fs.P_filt[n] + Jn @ (Ps[n + 1] - fs.P_pred[n + 1]) @ Jn.T
        Ps[n] = 0.5 * (Pn + Pn.T)
    J0 = gain(fs.P0, fs.P_pred[0])
    J[0] = J0
    x0s = fs.x0 + J0 @ (xs[0] - fs.x_pred[0])
    P0s = fs.P0 + J0 @ (Ps[0] - fs.P_pred[0]) @ J0.T
    P0s = 0.5 * (P0s + P0s.T)

    # lag-one: Plag[n] = Cov(x_{n+1}, x_n | z) with x_0 as the prior state
    IKH = np.eye(d)
    IKH[:, 0] -= fs.K[-1]
    P_prev_filt = fs.P_filt[-2] if N >= 2 else fs.P0
    Plag[-1] = IKH @ A @ P_prev_filt
    for n in range(N - 2, -1, -1):
        Pf = fs.P_filt[n]
        Plag[n] = Pf @ J[n].T + J[n + 1] @ (Plag[n + 1] - A @ Pf) @ J[n].T
    return SmootherState(xs, Ps, Plag, J, x0s, P0s)


def make_objective(z, order: int, T: float, init=None):
    """Total map ``theta -> log-likelihood`` returning ``FAILED_OBJECTIVE`` on failure."""
    z = _check_obs(z)

    def objective(theta) -> float:
        try:
            model = params_to_discrete(theta, order, T)
            value = fast_log_likelihood(model, z, init)
        except (ValueError, np.linalg.LinAlgError, OverflowError, ZeroDivisionError):
            return FAILED_OBJECTIVE
        return value if math.isfinite(value) else FAILED_OBJECTIVE

    return objective
