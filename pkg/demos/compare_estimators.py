"""Fit one simulated trajectory with each estimator and compare.

Run with ``python3 demos/compare_estimators.py [scenario] [seed]``.
"""

import sys
import time

import numpy as np

from sde_ident.harness import estimate, get_scenario
from sde_ident.simulate import simulate

scenario = get_scenario(sys.argv[1] if len(sys.argv) > 1 else "a")
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

traj = simulate(scenario.model, scenario.N, seed)
print(f"scenario {scenario.id}: order {scenario.order}, N = {scenario.N}, T = {scenario.T}")
print(f"{'method':<12}" + "".join(f"{n:>11}" for n in scenario.names) + f"{'loglik':>12}{'sec':>7}")
print(f"{'truth':<12}" + "".join(f"{v:>11.4g}" for v in scenario.theta))

for method in ("em", "mle", "bo-egp"):
    t0 = time.perf_counter()
    out = estimate(method, traj.observations, scenario, seed=seed)
    dt = time.perf_counter() - t0
    print(f"{method:<12}" + "".join(f"{v:>11.4g}" for v in out.theta) + f"{out.loglik:>12.2f}{dt:>7.1f}")

# the ensemble surrogate's kernel weights after the search
w = np.array(out.detail["iterations"][-1]["weights"])
print("final EGP weights (rbf, matern15, matern25):", np.round(w, 3))
