"""Synthetic trajectories from a discrete state-space model.

Draw order within one call is fixed: the initial state, then all process-noise
vectors as one ``(N, d)`` block, then all measurement-noise values.  Gaussian
variates come from numpy's ziggurat ``standard_normal`` on PCG64, so equal
arguments give bit-identical output on any platform numpy supports.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DiscreteModel
from .numerics import discrete_lyapunov, psd_sqrt
from .rng import rng_stream

__all__ = ["Trajectory", "simulate", "default_steps", "write_csv", "read_csv", "DEFAULT_DURATION"]

DEFAULT_DURATION = 10.0  # hours


def default_steps(T: float, duration: float = DEFAULT_DURATION) -> int:
    return int(round(duration / T))


@dataclass(frozen=True)
class Trajectory:
    """True states ``(d, N)`` and observations ``(N,)``."""

    states: np.ndarray
    observations: np.ndarray
    seed: int | None = None
    model: DiscreteModel | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.states, dtype=float))
        z = np.asarray(self.observations, dtype=float).reshape(-1)
        if x.shape[1] != z.size:
            raise ValueError("states and observations disagree on N")
        if z.size < 1:
            raise ValueError("trajectory must have at least one step")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise ValueError("trajectory entries must be finite")
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "observations", z)

    @property
    def N(self) -> int:
        return self.observations.size

    @property
    def d(self) -> int:
        return self.states.shape[0]


def simulate(model: DiscreteModel, N: int, seed: int, x0="stationary", *, rng=None) -> Trajectory:
    """Draw ``x_1..x_N`` and ``z_1..z_N`` from ``model``.

    Parameters
    ----------
    x0 : {"stationary"} or array_like
        ``"stationary"`` draws ``x_0 ~ N(0, P_inf)`` with ``P_inf`` the
        stationary covariance; an array fixes ``x_0``.
    rng : numpy.random.Generator, optional
        Overrides the stream derived from ``seed``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    d = model.d
    if rng is None:
        rng = rng_stream(seed, "simulate")
    if isinstance(x0, str):
        if x0 != "stationary":
            raise ValueError(f"unknown initial-state policy {x0!r}")
        try:
            P0 = discrete_lyapunov(model.A, model.Q)
        except ValueError as exc:
            raise ValueError(f"{exc}; pass a fixed x0 instead") from None
        x = psd_sqrt(P0) @ rng.standard_normal(d)
    else:
        x = np.asarray(x0, dtype=float).reshape(d)
    v = rng.standard_normal((N, d)) @ psd_sqrt(model.Q).T
    w = rng.standard_normal(N) * math.sqrt(model.R)

    states = np.empty((d, N))
    A = model.A
    for n in range(N):
        x = A @ x + v[n]
        states[:, n] = x
    return Trajectory(states=states, observations=states[0] + w, seed=seed, model=model)


def write_csv(traj: Trajectory, path=None) -> str:
    """Write ``n,x1[,x2],z`` rows with 17 significant digits; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n"] + [f"x{i + 1}" for i in range(traj.d)] + ["z"])
    for n in range(traj.N):
        row = [str(n + 1)] + ["%.17g" % v for v in traj.states[:, n]] + ["%.17g" % traj.observations[n]]
        writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv(path) -> Trajectory:
    """Inverse of :func:`write_csv`; raises ``ValueError`` on malformed files."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if header[0] != "n" or header[-1] != "z" or len(header) < 3:
        raise ValueError(f"{path}: expected header n,x1[,x2],z")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] != len(header):
        raise ValueError(f"{path}: ragged or empty data")
    return Trajectory(states=data[:, 1:-1].T, observations=data[:, -1])
