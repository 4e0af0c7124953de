"""Gaussian-process regression with a small fixed kernel dictionary.

Inputs are used as given; callers that search a box should rescale it to the
unit cube first, because the length-scale search range ``[1e-2, 10]`` assumes
unit-order distances.  Outputs are standardized internally and every value
returned to the caller is in the original output units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .numerics import cholesky

__all__ = [
    "KERNELS",
    "Kernel",
    "Hyper",
    "GpPosterior",
    "kernel_eval",
    "kernel_matrix",
    "log_marginal_likelihood",
    "gp_fit",
    "gp_predict",
    "NOISE_FLOOR",
]

KERNELS = ("rbf", "matern15", "matern25")
NOISE_FLOOR = 1e-8
_LOG_2PI = math.log(2.0 * math.pi)

# search box for (sigma_k2, sigma_l, sigma_e2) in standardized output units
_BOUNDS = np.array([[0.05, 20.0], [1e-2, 10.0], [NOISE_FLOOR, 1.0]])
_LOG_BOUNDS = np.log(_BOUNDS)


def _log_bounds(n_scales: int) -> np.ndarray:
    return np.vstack([_LOG_BOUNDS[:1], np.repeat(_LOG_BOUNDS[1:2], n_scales, axis=0), _LOG_BOUNDS[2:]])


@dataclass(frozen=True)
class Hyper:
    """Signal variance, length-scale and noise variance.

    ``sigma_l`` is a float for an isotropic kernel or a tuple with one
    length-scale per input dimension.
    """

    sigma_k2: float
    sigma_l: float | tuple
    sigma_e2: float

    def __post_init__(self):
        if not np.isscalar(self.sigma_l):
            object.__setattr__(self, "sigma_l", tuple(float(v) for v in self.sigma_l))
        if not (self.sigma_k2 > 0 and np.all(np.asarray(self.sigma_l) > 0) and self.sigma_e2 >= 0):
            raise ValueError(f"invalid hyperparameters {self}")

    @property
    def n_scales(self) -> int:
        return 1 if np.isscalar(self.sigma_l) else len(self.sigma_l)

    def as_log(self) -> np.ndarray:
        return np.log(np.concatenate([[self.sigma_k2], np.atleast_1d(self.sigma_l), [self.sigma_e2]]))

    @classmethod
    def from_log(cls, v, ard: bool = False) -> "Hyper":
        v = np.asarray(v, dtype=float)
        b = _log_bounds(v.size - 2)
        e = np.exp(np.clip(v, b[:, 0], b[:, 1]))
        scales = tuple(e[1:-1].tolist()) if ard else float(e[1])
        return cls(float(e[0]), scales, float(e[-1]))

    def with_scales(self, n: int) -> "Hyper":
        """Same values with ``n`` length-scales (``n = 0`` means isotropic)."""
        base = np.atleast_1d(self.sigma_l)
        if n == 0:
            return Hyper(self.sigma_k2, float(np.exp(np.mean(np.log(base)))), self.sigma_e2)
        vals = base if base.size == n else np.full(n, np.exp(np.mean(np.log(base))))
        return Hyper(self.sigma_k2, tuple(vals.tolist()), self.sigma_e2)


@dataclass(frozen=True)
class Kernel:
    kind: str
    sigma_k2: float
    sigma_l: float | tuple

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        if not (self.sigma_k2 > 0 and np.all(np.asarray(self.sigma_l) > 0)):
            raise ValueError("kernel hyperparameters must be positive")

    def __call__(self, X1, X2) -> np.ndarray:
        return kernel_matrix(self.kind, self.sigma_k2, self.sigma_l, X1, X2)


def _from_scaled(kind, sigma_k2, s):
    # s = r / sigma_l, the distance in length-scale units
    if kind == "rbf":
        return sigma_k2 * np.exp(-0.5 * s * s)
    if kind == "matern15":
        u = math.sqrt(3.0) * s
        return sigma_k2 * (1.0 + u) * np.exp(-u)
    if kind == "matern25":
        u = math.sqrt(5.0) * s
        return sigma_k2 * (1.0 + u + u * u / 3.0) * np.exp(-u)
    raise ValueError(f"unknown kernel {kind!r}; choose from {KERNELS}")


def _scaled_distances(X1, X2, sigma_l):
    diff = X1[:, None, :] - X2[None, :, :]
    if np.isscalar(sigma_l):
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)) / sigma_l
    inv2 = 1.0 / np.asarray(sigma_l, dtype=float) ** 2
    return np.sqrt(np.einsum("ijk,ijk,k->ij", diff, diff, inv2))


def kernel_matrix(kind, sigma_k2, sigma_l, X1, X2) -> np.ndarray:
    """Cross-covariance between the rows of ``X1`` and ``X2``."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    return _from_scaled(kind, sigma_k2, _scaled_distances(X1, X2, sigma_l))


def kernel_eval(kernel: Kernel, x, x2) -> float:
    """Scalar covariance ``k(x, x2)``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float).reshape(1, -1)
    if x.shape != x2.shape:
        raise ValueError("inputs must have equal dimension")
    return float(kernel_matrix(kernel.kind, kernel.sigma_k2, kernel.sigma_l, x, x2)[0, 0])


def _lml_from_kernel(K, sigma_e2, ys):
    # returns (lml, L, alpha) for K + sigma_e2 I
    K[np.diag_indices(ys.size)] += sigma_e2
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        L = cholesky(K)
    alpha = scipy.linalg.cho_solve((L, True), ys, check_finite=False)
    lml = float(-0.5 * ys @ alpha - np.log(L.diagonal()).sum() - 0.5 * ys.size * _LOG_2PI)
    return lml, L, alpha


def log_marginal_likelihood(kind: str, hyper: Hyper, X, y) -> float:
    """Log evidence of ``y`` (taken as given, no standardization) at fixed ``hyper``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    return _lml_from_kernel(kernel_matrix(kind, hyper.sigma_k2, hyper.sigma_l, X, X), hyper.sigma_e2, y)[0]


@dataclass(frozen=True)
class GpPosterior:
    """Fitted GP; immutable, so predictions can run concurrently."""

    kind: str
    hyper: Hyper
    X: np.ndarray
    y: np.ndarray  # original units
    y_mean: float
    y_std: float
    L: np.ndarray  # lower Cholesky factor of K + sigma_e2 I (standardized units)
    alpha: np.ndarray  # (K + sigma_e2 I)^{-1} y_standardized
    lml: float

    @property
    def kernel(self) -> Kernel:
        return Kernel(self.kind, self.hyper.sigma_k2, self.hyper.sigma_l)

    @property
    def noise_var(self) -> float:
        """Fitted noise variance in original output units."""
        return self.hyper.sigma_e2 * self.y_std**2

    @property
    def prior_var(self) -> float:
        return self.hyper.sigma_k2 * self.y_std**2

    def predict(self, Xs):
        """Latent mean and variance at the rows of ``Xs`` (original units)."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        ks = kernel_matrix(self.kind, self.hyper.sigma_k2, self.hyper.sigma_l, self.X, Xs)
        mean = self.y_mean + self.y_std * (ks.T @ self.alpha)
        v = scipy.linalg.solve_triangular(self.L, ks, lower=True, check_finite=False)
        var = self.hyper.sigma_k2 - np.einsum("ij,ij->j", v, v)
        var = np.clip(var, 0.0, self.hyper.sigma_k2) * self.y_std**2
        return mean, var


def _seeds(warm: Hyper | None, n_scales: int):
    # 8 log-spaced length-scales x 2 noise levels; signal variance 1 matches standardized y
    seeds = [Hyper(1.0, l, e) for l in np.geomspace(0.03, 3.0, 8) for e in (1e-6, 1e-2)]
    if warm is not None:
        seeds.append(warm)
    return [h.with_scales(n_scales) for h in seeds]


def gp_fit(
    X,
    y,
    kind: str = "rbf",
    *,
    hyper: Hyper | None = None,
    warm_start: Hyper | None = None,
    refine: int = 2,
    ard: bool = False,
):
    """Fit a GP to ``(X, y)``.

    Parameters
    ----------
    hyper : Hyper, optional
        Fixed hyperparameters (in standardized units); skips the search.
    warm_start : Hyper, optional
        Extra search seed, typically the previous iteration's optimum.
    refine : int
        Number of best seeds polished by Nelder-Mead in log space.
    ard : bool
        One length-scale per input dimension instead of a shared one.

    Raises
    ------
    ValueError
        ``"degenerate design"`` when every input row is the same and the
        hyperparameters must be searched.
    """
    if kind not in KERNELS:
        raise ValueError(f"unknown kernel {kind!r}; choose from {KERNELS}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.size or y.size < 1:
        raise ValueError("X and y must have the same non-zero number of rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    y_mean = float(np.mean(y))
    y_std = float(np.std(y))
    if not y_std > 0:
        y_std = 1.0
    ys = (y - y_mean) / y_std

    diff = X[:, None, :] - X[None, :, :]
    sq = diff * diff  # (i, i, D)
    if hyper is None:
        if np.max(sq) <= 1e-24:
            raise ValueError("degenerate design: all inputs coincide")
        n_scales = X.shape[1] if ard else 0
        bounds = _log_bounds(max(n_scales, 1))
        lo, hi = bounds[:, 0], bounds[:, 1]
        R2 = sq.sum(axis=2)

        def neg(v):
            e = np.exp(np.clip(v, lo, hi))
            if n_scales:
                s = np.sqrt(sq @ (1.0 / e[1:-1] ** 2))
            else:
                s = np.sqrt(R2) / e[1]
            try:
                return -_lml_from_kernel(_from_scaled(kind, e[0], s), e[-1], ys)[0]
            except np.linalg.LinAlgError:
                return np.inf

        seeds = _seeds(warm_start, n_scales)
        scored = sorted(((neg(h.as_log()), k, h) for k, h in enumerate(seeds)), key=lambda t: (t[0], t[1]))
        best_val, _, hyper = scored[0]
        for val, _, h in scored[:refine]:
            res = minimize(
                neg,
                h.as_log(),
                method="Nelder-Mead",
                bounds=bounds,
                options={"xatol": 1e-3, "fatol": 1e-6, "maxfev": 100 * len(lo)},
            )
            if res.fun < best_val:
                best_val, hyper = float(res.fun), Hyper.from_log(res.x, ard=bool(n_scales))
    K = kernel_matrix(kind, hyper.sigma_k2, hyper.sigma_l, X, X)
    lml, L, alpha = _lml_from_kernel(K, hyper.sigma_e2, ys)
    return GpPosterior(kind, hyper, X, y, y_mean, y_std, L, alpha, lml)


def gp_predict(post: GpPosterior, theta):
    """Scalar ``(mean, var)`` at one point."""
    m, v = post.predict(np.asarray(theta, dtype=float).reshape(1, -1))
    return float(m[0]), float(v[0])
