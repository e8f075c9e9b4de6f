"""Factored categorical policies: sampling, entropy, KL and the soft target update."""
import numpy as np

from ma2ml.policy import Policy, soft_update
from ma2ml.space import simple_space

sp = simple_space([4, 3])
rng = np.random.default_rng(1)
pi = Policy(sp, rng.normal(size=sp.width))
rho = Policy.uniform(sp)

print("per-dimension probabilities:")
for p in pi.dim_probs():
    print("  ", np.round(p, 3))
print("entropy per agent", np.round(pi.entropy(), 4), " KL(pi||uniform)", np.round(pi.kl(rho), 4))

acts, logp = pi.sample(rng, 20000)
freq = np.bincount(acts[:, 0], minlength=4) / len(acts)
print("empirical vs exact for agent 0:", np.round(freq, 3), np.round(pi.dim_probs()[0], 3))

target = rho
for step in range(1, 1001):
    target = soft_update(target, pi, 0.004)
    if step in (1, 10, 100, 1000):
        print(f"after {step:4d} soft updates  KL(pi||target) = {pi.kl(target).sum():.5f}")
