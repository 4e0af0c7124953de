"""NEES/NIS of the Kalman filter run with the true parameters.

A consistent filter gives time-averaged NEES near the state dimension and
NIS near one, inside the chi-squared acceptance regions.
"""

import sys

from sde_ident.harness import ORACLE_METHOD, run_study

scenario = sys.argv[1] if len(sys.argv) > 1 else "a"
runs = int(sys.argv[2]) if len(sys.argv) > 2 else 20

res = run_study(scenario, [ORACLE_METHOD], runs, seed=0)
s = res.summary[ORACLE_METHOD]
lo, hi = s["nees_region"]
print(f"scenario {scenario}, {runs} runs")
print(f"mean NEES {s['nees']:.4f}  region [{lo:.4f}, {hi:.4f}]  {'inside' if lo <= s['nees'] <= hi else 'outside'}")
lo, hi = s["nis_region"]
print(f"mean NIS  {s['nis']:.4f}  region [{lo:.4f}, {hi:.4f}]  {'inside' if lo <= s['nis'] <= hi else 'outside'}")
