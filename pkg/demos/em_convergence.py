"""Log-likelihood trace of EM at several damping rates on one dataset."""

from sde_ident.em import EmConfig, run_em
from sde_ident.harness import SCENARIOS
from sde_ident.simulate import simulate

sc = SCENARIOS["a"]
z = simulate(sc.model, sc.N, 3).observations
for alpha in (1.0, 0.5, 0.2):
    tr = run_em(z, sc.order, sc.T, EmConfig(alpha=alpha, max_iter=40))
    ll = tr.loglik
    print(f"alpha {alpha}: {tr.n_iter:>2} iterations, loglik {ll[0]:.2f} -> {ll[-1]:.2f}, theta {tr.theta.round(4)}")
