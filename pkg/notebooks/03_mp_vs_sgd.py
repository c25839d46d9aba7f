"""Minibatch-prox against minibatch SGD at a fixed sample budget on the sigmoid problem.

Run: python3 notebooks/03_mp_vs_sgd.py   (about 30 seconds)
"""
import statistics

from mbprox import drivers, problems
from mbprox.drivers import MethodConfig

N, seeds = 200_000, range(5)
spec = problems.make_problem("sigmoid", 20, seed=0, noise_std=0.1, holdout_size=20_000)


def final(cfg):
    return statistics.median(drivers.run(spec, cfg, s).pop_obj_last for s in seeds)


for b in (200, 10_000):
    best = min((final(MethodConfig("sgd", T=N // b, b=b, lr=lr)), lr) for lr in (0.3, 1.0, 3.0))
    print(f"SGD  b={b:>6}  best lr {best[1]:<4} holdout objective {best[0]:.4f}")

thm = drivers.run(spec, MethodConfig("mp", T=N // 10_000, b=10_000), 0)
print(f"MP   b= 10000  worst-case gamma {thm.gamma:.2f}   holdout objective "
      f"{final(MethodConfig('mp', T=N // 10_000, b=10_000)):.4f}")
for gamma in (0.5, 0.05):
    cfg = MethodConfig("mp", T=N // 10_000, b=10_000, gamma_mode="fixed", gamma=gamma,
                       inner_solver="gd_momentum", budget_mode="fixed_steps", g=50, lr=1.0,
                       momentum=0.9)
    print(f"MP   b= 10000  fixed gamma {gamma:<5}     holdout objective {final(cfg):.4f}")

# Large-batch SGD loses accuracy at equal samples. MP with gamma set from the worst-case
# almost-convexity constant barely moves in 20 outer steps, because that gamma dwarfs the
# local curvature of this problem (Hessian eigenvalues near 0.01 to 0.06). With a small
# gamma MP at b=10000 matches small-batch SGD.
