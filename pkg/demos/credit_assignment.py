"""Counterfactual baselines: same expected gradient, lower variance than raw rewards."""
import numpy as np

from ma2ml.critic import TabularQ
from ma2ml.policy import Policy
from ma2ml.space import simple_space
from ma2ml.trainer import EXACT, advantages, counterfactual_baseline, score_gradient

sp = simple_space([5, 5, 5])
rng = np.random.default_rng(2)
table = rng.uniform(size=sp.n_joint)
q = TabularQ(sp).fill(table)
pi = Policy(sp, rng.normal(size=sp.width))

acts = sp.all_actions()
probs = np.exp(pi.agent_log_probs(acts).sum(axis=1))
raw = np.stack([score_gradient(pi, acts[k:k + 1], np.repeat(table[k:k + 1, None], 3, axis=1)) for k in range(len(acts))])
cf = np.stack([score_gradient(pi, acts[k:k + 1], advantages(q, pi, pi, acts[k:k + 1], 0.0)) for k in range(len(acts))])
for name, g in (("raw reward", raw), ("counterfactual", cf)):
    mean = probs @ g
    var = probs @ np.sum((g - mean) ** 2, axis=1)
    print(f"{name:15s} expected-gradient norm {np.linalg.norm(mean):.6f}  per-sample variance {var:.6f}")

action = (0, 1, 2)
exact = counterfactual_baseline(q, pi, pi, action, 0, 0.2, EXACT)
for m in (1, 16, 256, 4096):
    est = [counterfactual_baseline(q, pi, pi, action, 0, 0.2, m, rng) for _ in range(200)]
    print(f"Monte Carlo baseline M={m:5d}  RMSE {np.sqrt(np.mean((np.array(est) - exact) ** 2)):.5f}")
