"""Predicted runtime and energy across batch sizes, in asymptotic units.

Run: python3 notebooks/05_regime_table.py
"""
from mbprox import cost_model

sigma, beta, V, Delta, eps = 0.01, 1.0, 1.0, 1.0, 0.1
rows = cost_model.regime_table(sigma, beta, V, Delta, eps, [10, 100, 1_000, 10_000, 100_000])
print(cost_model.regime_table_csv(rows, sigma, beta, V, Delta, eps))

sgd, mp = cost_model.predicted_steps_at_threshold(sigma, beta, V, Delta, eps)
b_sgd, b_mp = cost_model.thresholds(sigma, beta, V, eps)
print(f"largest sample-efficient batch: SGD {b_sgd:.0f} ({sgd:.0f} steps), "
      f"MP {b_mp:.0f} ({mp:.0f} AGD steps)")

# With beta/sigma = 100 the MP batch can be 100 times larger than SGD's while staying
# sample efficient, and it needs fewer gradient steps in total.
