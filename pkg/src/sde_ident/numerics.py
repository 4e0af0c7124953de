"""Small dense linear algebra and special functions.

Everything here works on tiny matrices (the state dimension is 1 or 2) or on
scalars, so the emphasis is on exactness and predictable failure modes rather
than throughput.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
from scipy import special

__all__ = [
    "mat_exp",
    "cholesky",
    "spd_solve",
    "psd_sqrt",
    "discrete_lyapunov",
    "chi2_cdf",
    "chi2_quantile",
    "normal_pdf_cdf",
    "spectral_radius",
]

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def _as_square(F, name="matrix"):
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError(f"{name} must be square, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValueError(f"{name} has non-finite entries")
    return F


def _expm_2x2(M):
    # e^M = e^s [cosh(d) I + sinh(d)/d (M - sI)],  s = tr(M)/2,  d^2 = s^2 - det(M)
    a, b = M[0]
    c, e = M[1]
    s = 0.5 * (a + e)
    d2 = 0.25 * (a - e) ** 2 + b * c
    if d2 > 0:
        d = math.sqrt(d2)
        if d < 20.0:
            es = math.exp(s)
            ch = es * math.cosh(d)
            sh_d = es * math.sinh(d) / d if d > 1e-8 else es * (1.0 + d2 / 6.0)
        else:
            # split exponentials avoid cosh overflow when s << 0 < d
            ch = 0.5 * (math.exp(s + d) + math.exp(s - d))
            sh_d = 0.5 * (math.exp(s + d) - math.exp(s - d)) / d
    elif d2 < 0:
        d = math.sqrt(-d2)
        es = math.exp(s)
        ch = es * math.cos(d)
        sh_d = es * math.sin(d) / d if d > 1e-8 else es * (1.0 + d2 / 6.0)
    else:
        # defective (repeated eigenvalue): (M - sI) is nilpotent, series terminates
        ch = math.exp(s)
        sh_d = ch
    out = np.empty((2, 2))
    out[0, 0] = ch + sh_d * (a - s)
    out[0, 1] = sh_d * b
    out[1, 0] = sh_d * c
    out[1, 1] = ch + sh_d * (e - s)
    return out


def mat_exp(F, t=1.0):
    """Matrix exponential ``exp(F t)``.

    Scalars and 2x2 matrices use closed forms; larger matrices fall back to
    scaling-and-squaring with Pade approximants (``scipy.linalg.expm``).
    """
    F = _as_square(F, "F")
    t = float(t)
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"t must be finite and non-negative, got {t}")
    M = F * t
    if M.shape == (1, 1):
        return np.array([[math.exp(M[0, 0])]])
    if M.shape == (2, 2):
        out = _expm_2x2(M)
        if np.all(np.isfinite(out)):
            return out
    return scipy.linalg.expm(M)


def spectral_radius(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape == (1, 1):
        return abs(A[0, 0])
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def cholesky(M, *, jitter=True):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    On failure a diagonal jitter, scaled by the mean diagonal, is escalated
    from 1e-10 to 1e-6 before giving up with ``np.linalg.LinAlgError``.
    """
    M = np.asarray(M, dtype=float)
    M = 0.5 * (M + M.T)
    scale = max(float(np.mean(np.diag(M))), 1e-300)
    for eps in (_JITTERS if jitter else (0.0,)):
        try:
            return np.linalg.cholesky(M + eps * scale * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("matrix is not positive definite even after jitter 1e-6")


def spd_solve(M, B):
    """Solve ``M X = B`` for symmetric positive definite ``M``."""
    L = cholesky(M)
    return scipy.linalg.cho_solve((L, True), B)


def psd_sqrt(M):
    """A factor ``S`` with ``S S^T = M`` for a positive semidefinite ``M``.

    Uses Cholesky when possible and a clipped eigen-decomposition otherwise,
    so singular (even all-zero) covariances are accepted.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    M = 0.5 * (M + M.T)
    if not np.any(M):
        return np.zeros_like(M)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(M)
        if w.min() < -1e-10 * max(1.0, abs(w).max()):
            raise ValueError("covariance is not positive semidefinite")
        return V * np.sqrt(np.clip(w, 0.0, None))


def discrete_lyapunov(A, Q):
    """Stationary covariance ``P`` solving ``P = A P A^T + Q``.

    Raises ``ValueError`` when the spectral radius of ``A`` is not strictly
    below one (within 1e-9), in which case no stationary covariance exists.
    """
    A = _as_square(A, "A")
    Q = _as_square(Q, "Q")
    if A.shape != Q.shape:
        raise ValueError("A and Q must have the same shape")
    if spectral_radius(A) >= 1.0 - 1e-9:
        raise ValueError("A is not stable; stationary covariance undefined")
    d = A.shape[0]
    if d == 1:
        return np.array([[Q[0, 0] / (1.0 - A[0, 0] ** 2)]])
    # vec(P) = (I - A kron A)^{-1} vec(Q), exact for the tiny d used here
    lhs = np.eye(d * d) - np.kron(A, A)
    P = np.linalg.solve(lhs, Q.reshape(-1)).reshape(d, d)
    return 0.5 * (P + P.T)


def chi2_cdf(x, dof):
    """Chi-squared CDF via the regularized lower incomplete gamma function."""
    return special.gammainc(0.5 * dof, 0.5 * np.asarray(x, dtype=float))


def chi2_quantile(dof, p, *, rtol=1e-12):
    """Quantile of the chi-squared distribution by monotone bisection.

    Bisection is slow but cannot diverge, which matters for the very large
    degrees of freedom (1e5 and up) used by the consistency regions.
    """
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    k = float(dof)
    # Wilson-Hilferty guess to seed a tight bracket
    z = math.sqrt(2.0) * special.erfinv(2.0 * p - 1.0)
    h = 2.0 / (9.0 * k)
    guess = max(k * (1.0 - h + z * math.sqrt(h)) ** 3, 1e-300)
    lo, hi = guess, guess
    while chi2_cdf(lo, k) > p and lo > 1e-300:
        lo *= 0.5
    while chi2_cdf(hi, k) < p:
        hi *= 2.0
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, k) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return 0.5 * (lo + hi)


def normal_pdf_cdf(x):
    """Standard normal density and distribution function at ``x``.

    Accepts scalars or arrays; the CDF uses ``erfc`` so both tails keep full
    relative precision.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    cdf = 0.5 * special.erfc(-x / math.sqrt(2.0))
    if pdf.ndim == 0:
        return float(pdf), float(cdf)
    return pdf, cdf
