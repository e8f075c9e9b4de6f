"""Exact divergence policy iteration on random reward tables: monotone expected reward."""
import numpy as np

from ma2ml.verify import brute_force_best, certify_monotone, random_table, tilt_best_response

print("tilted best response of a fair coin toward reward [1, 0] at lambda=1:",
      np.round(tilt_best_response(np.array([0.5, 0.5]), np.array([1.0, 0.0]), 1.0), 6))

for lam in (1.0, 0.2, 0.01):
    table = random_table((6, 6, 6), np.random.default_rng(0))
    rep = certify_monotone(table, lam, iterations=200, seed=0)
    best, value = brute_force_best(table)
    steps = np.diff(rep.J_init)
    print(f"lambda={lam:<5} J: {rep.J_init[0]:+.4f} -> {rep.J_init[-1]:+.4f} (optimum {value:+.4f} at {best}) "
          f"smallest step {steps.min():+.2e} converged={rep.converged}")
