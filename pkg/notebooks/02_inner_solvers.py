"""Inner solvers on one prox subproblem: gradient steps needed to reach a certificate.

Run: python3 notebooks/02_inner_solvers.py
"""
import numpy as np

from mbprox import problems, prox, solvers
from mbprox.solvers import SolverBudget

spec = problems.make_problem("logistic", 20, seed=0)
batch = problems.draw_batch(spec, 1, 500)
center = np.zeros(spec.dim)

print(f"{'gamma':>7}{'kappa':>8}{'solver':>13}{'steps':>8}{'batch grads':>13}"
      f"{'single grads':>14}{'bound':>10}")
for gamma in (1.0, 0.1, 0.01, 0.001):
    obj = prox.make_prox_objective(spec, batch, center, gamma)
    kappa = solvers.condition_number(gamma, 0.0, spec.sigma, spec.beta)
    for name in ("gd_momentum", "agd", "svrg"):
        rep = solvers.run_solver(name, obj, center, SolverBudget.tolerance(1e-8, 200_000),
                                 seed_stream=0, momentum=0.5 if name == "gd_momentum" else 0.0)
        print(f"{gamma:>7}{kappa:>8.1f}{name:>13}{rep.steps_taken:>8}{rep.batch_grad_evals:>13}"
              f"{rep.single_grad_evals:>14}{rep.certified_subopt_bound:>10.1e}")

# kappa uses the worst-case smoothness bound. This batch is far better conditioned than
# that bound, so momentum GD keeps pace with AGD here. SVRG trades most batch gradients
# for cheap single-sample steps, which only pays off when tau_1 is much smaller than tau_b.
