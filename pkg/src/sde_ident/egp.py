"""Kernel-ensemble GP surrogate with Bayes-rule expert weights.

Each expert is a :class:`~sde_ident.gp.GpPosterior` with its own kernel and
hyperparameters.  After a new observation the weights are multiplied by each
expert's predictive density of that observation (taken before the expert is
refitted) and renormalized.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .gp import KERNELS, NOISE_FLOOR, GpPosterior, gp_fit

__all__ = [
    "EnsembleSurrogate",
    "WEIGHT_FLOOR",
    "LOSS_CAP",
    "gaussian_nll",
    "per_expert_loss",
    "weight_update",
    "mixture_moments",
    "ensemble_predict",
    "fit_ensemble",
]

WEIGHT_FLOOR = 1e-6
LOSS_CAP = 1e3
_LOG_2PI = math.log(2.0 * math.pi)


def gaussian_nll(y: float, mean: float, var: float) -> float:
    """``-log N(y; mean, var)``."""
    r = y - mean
    return 0.5 * (_LOG_2PI + math.log(var) + r * r / var)


def per_expert_loss(expert: GpPosterior, theta, y_new: float) -> float:
    """Negative log predictive density of ``y_new`` under ``expert``.

    The predictive variance is the latent variance plus the expert's fitted
    noise variance, floored at the standardized noise floor so an expert that
    interpolates exactly still yields a finite loss.
    """
    mean, var = expert.predict(np.asarray(theta, dtype=float).reshape(1, -1))
    total = max(float(var[0]) + expert.noise_var, NOISE_FLOOR * expert.y_std**2)
    return gaussian_nll(float(y_new), float(mean[0]), total)


def weight_update(w, losses, floor: float = WEIGHT_FLOOR) -> np.ndarray:
    """Posterior expert weights ``w_m exp(-l_m) / sum_j w_j exp(-l_j)``.

    Losses are shifted by their minimum and the shifted values capped at
    ``LOSS_CAP`` before exponentiation.  Weights below ``floor`` are raised to
    it and the vector renormalized.  If no loss is finite the weights are
    returned unchanged with a ``RuntimeWarning``.
    """
    w = np.asarray(w, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if w.shape != losses.shape or w.ndim != 1:
        raise ValueError("weights and losses must be 1-D of equal length")
    if np.any(np.isnan(losses)):
        raise ValueError("losses must not be NaN")
    finite = np.isfinite(losses)
    if not np.any(finite):
        warnings.warn("all expert losses are infinite; weights left unchanged", RuntimeWarning, stacklevel=2)
        return w.copy()
    shifted = np.where(finite, losses - np.min(losses[finite]), LOSS_CAP)
    shifted = np.minimum(shifted, LOSS_CAP)
    with np.errstate(divide="ignore"):
        logw = np.log(w) - shifted
    top = np.max(logw)
    out = np.exp(logw - top)
    out /= out.sum()
    if floor > 0:
        out = np.maximum(out, floor)
        out /= out.sum()
    return out


def mixture_moments(w, means, variances):
    """Moment-matched mean and variance of a Gaussian mixture.

    ``means`` and ``variances`` have the experts along axis 0.
    """
    w = np.asarray(w, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    wb = w.reshape((-1,) + (1,) * (means.ndim - 1))
    mean = np.sum(wb * means, axis=0)
    var = np.sum(wb * (variances + (means - mean) ** 2), axis=0)
    return mean, np.maximum(var, 0.0)


@dataclass(frozen=True)
class EnsembleSurrogate:
    experts: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.experts) < 1 or w.shape != (len(self.experts),):
            raise ValueError("need one weight per expert and at least one expert")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        object.__setattr__(self, "experts", tuple(self.experts))
        object.__setattr__(self, "weights", w)

    def predict(self, Xs):
        """Mixture mean and variance at the rows of ``Xs``."""
        preds = [e.predict(Xs) for e in self.experts]
        return mixture_moments(self.weights, [p[0] for p in preds], [p[1] for p in preds])

    def losses(self, theta, y_new):
        return np.array([per_expert_loss(e, theta, y_new) for e in self.experts])

    def updated(self, theta, y_new, floor: float = WEIGHT_FLOOR) -> "EnsembleSurrogate":
        """Same experts, weights updated by the new observation."""
        return EnsembleSurrogate(self.experts, weight_update(self.weights, self.losses(theta, y_new), floor))


def ensemble_predict(e: EnsembleSurrogate, theta):
    """Scalar ``(mean, var)`` of the ensemble at one point."""
    m, v = e.predict(np.asarray(theta, dtype=float).reshape(1, -1))
    return float(m[0]), float(v[0])


def fit_ensemble(
    X, y, weights=None, kinds=KERNELS, previous: EnsembleSurrogate | None = None, ard: bool = False
) -> EnsembleSurrogate:
    """Refit every expert on ``(X, y)``, warm-starting from ``previous``."""
    warm = [None] * len(kinds) if previous is None else [e.hyper for e in previous.experts]
    experts = tuple(gp_fit(X, y, k, warm_start=h, ard=ard) for k, h in zip(kinds, warm))
    if weights is None:
        weights = np.full(len(kinds), 1.0 / len(kinds))
    return EnsembleSurrogate(experts, weights)
