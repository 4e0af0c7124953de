"""Continuous-time linear SDE models and their discrete-time state-space form.

An ``n``-th order scalar SDE

    x^(n) + a_{n-1} x^(n-1) + ... + a_0 x = v(t),   E[v(t) v(s)] = Qt delta(t - s)

is written in companion form ``dx/dt = F x + G v`` and sampled every ``T``
hours to give ``x_n = A x_{n-1} + v_n``, ``z_n = H x_n + w_n`` with
``A = exp(F T)``.  Orders 1 and 2 are supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .numerics import mat_exp

__all__ = [
    "ContinuousModel",
    "DiscreteModel",
    "DEFAULT_BOX",
    "companion",
    "discretize",
    "first_order_q",
    "second_order_q",
    "param_names",
    "default_bounds",
    "params_to_discrete",
]

DEFAULT_BOX = (1e-4, 10.0)

_PARAM_NAMES = {1: ("a", "Q", "R"), 2: ("a0", "a1", "Qtilde", "R")}


def param_names(order: int) -> tuple[str, ...]:
    """Names of the unknowns estimated for a model of the given order."""
    try:
        return _PARAM_NAMES[order]
    except KeyError:
        raise ValueError(f"unsupported model order {order}") from None


def default_bounds(order: int, box=DEFAULT_BOX) -> np.ndarray:
    """Search box as a ``(D, 2)`` array of ``[lower, upper]`` rows."""
    return np.tile(np.asarray(box, dtype=float), (len(param_names(order)), 1))


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time model plus sampling interval.

    ``q`` and ``r`` are tagged: ``q_kind="psd"`` means ``q`` is the
    process-noise spectral density, ``"discrete"`` means the discrete-time
    variance is given directly (first order only).  Likewise
    ``r_kind="psd"`` gives ``R = r / T``.
    """

    a: tuple[float, ...]
    q: float
    r: float
    T: float
    q_kind: Literal["psd", "discrete"] = "psd"
    r_kind: Literal["psd", "discrete"] = "discrete"

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in np.atleast_1d(self.a)))
        if self.order not in (1, 2):
            raise ValueError(f"unsupported model order {self.order}")
        if not all(math.isfinite(v) for v in self.a):
            raise ValueError("coefficients must be finite")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("sampling interval T must be positive")
        if not self.q >= 0 or not self.r >= 0:
            raise ValueError("noise intensities must be non-negative")
        if self.q_kind not in ("psd", "discrete") or self.r_kind not in ("psd", "discrete"):
            raise ValueError("q_kind and r_kind must be 'psd' or 'discrete'")

    @property
    def order(self) -> int:
        return len(self.a)


@dataclass(frozen=True)
class DiscreteModel:
    """``x_n = A x_{n-1} + v_n``, ``z_n = H x_n + w_n`` with scalar ``z_n``."""

    A: np.ndarray
    Q: np.ndarray
    R: float
    T: float = 1.0
    H: np.ndarray = field(default=None)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        d = A.shape[0]
        if A.shape != (d, d) or Q.shape != (d, d):
            raise ValueError("A and Q must be square with matching shape")
        H = np.zeros(d)
        H[0] = 1.0
        if self.H is not None and not np.array_equal(np.ravel(self.H), H):
            raise ValueError("only H = [1, 0, ..., 0] is supported")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Q)) and math.isfinite(self.R)):
            raise ValueError("model matrices must be finite")
        if self.R < 0:
            raise ValueError("R must be non-negative")
        A.setflags(write=False)
        Q.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", float(self.R))
        object.__setattr__(self, "T", float(self.T))

    @property
    def d(self) -> int:
        return self.A.shape[0]


def companion(a) -> np.ndarray:
    """Companion matrix with ones on the superdiagonal and ``-a`` in the last row."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    n = a.size
    F = np.zeros((n, n))
    F[:-1, 1:] = np.eye(n - 1)
    F[-1, :] = -a
    return F


def first_order_q(a: float, q_tilde: float, T: float) -> float:
    """Exact OU process-noise variance ``Qt (1 - exp(-2aT)) / (2a)``."""
    x = 2.0 * a * T
    if abs(x) < 1e-8:
        return q_tilde * T * (1.0 - 0.5 * x)
    return q_tilde * (-math.expm1(-x)) / (2.0 * a)


def second_order_q(q_tilde: float, T: float) -> np.ndarray:
    """Process-noise covariance for the second-order model.

    Uses the short-interval form where ``exp(F (T - tau))`` is replaced by the
    nilpotent ``I + F0 (T - tau)``, which integrates to
    ``Qt [[T^3/3, T^2/2], [T^2/2, T]]``.
    """
    return q_tilde * np.array([[T**3 / 3.0, T**2 / 2.0], [T**2 / 2.0, T]])


def discretize(model: ContinuousModel) -> DiscreteModel:
    """Convert a :class:`ContinuousModel` into its sampled state-space form."""
    T = model.T
    A = mat_exp(companion(model.a), T)
    if model.order == 1:
        q = model.q if model.q_kind == "discrete" else first_order_q(model.a[0], model.q, T)
        Q = np.array([[q]])
    else:
        if model.q_kind != "psd":
            raise ValueError("second-order models take the process noise as a PSD")
        Q = second_order_q(model.q, T)
    R = model.r / T if model.r_kind == "psd" else model.r
    return DiscreteModel(A=A, Q=Q, R=R, T=T)


def params_to_discrete(theta, order: int, T: float) -> DiscreteModel:
    """Map an estimation vector to a discrete model.

    First order: ``theta = (a, Q, R)`` with ``Q`` and ``R`` discrete-time
    variances.  Second order: ``theta = (a0, a1, Qtilde, R)`` with the
    process-noise PSD.  Raises ``ValueError`` when the mapping is not finite.
    """
    theta = np.asarray(theta, dtype=float)
    names = param_names(order)
    if theta.shape != (len(names),):
        raise ValueError(f"expected {len(names)} parameters {names}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    if order == 1:
        a, q, r = theta
        with np.errstate(over="raise"):
            try:
                A = np.array([[math.exp(-a * T)]])
            except OverflowError:
                raise ValueError("exp(-aT) overflowed") from None
        Q = np.array([[q]])
    else:
        a0, a1, q, r = theta
        A = mat_exp(companion((a0, a1)), T)
        Q = second_order_q(q, T)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Q))):
        raise ValueError(f"parameters {theta} give a non-finite model")
    return DiscreteModel(A=A, Q=Q, R=r, T=T)
