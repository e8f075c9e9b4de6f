"""Fit the centralized critic to replayed evaluations of a synthetic landscape."""
import numpy as np

from ma2ml.critic import Experience, NeuralQ, ReplayBuffer, TabularQ
from ma2ml.optim import make_optimizer
from ma2ml.oracle import coupled_oracle
from ma2ml.space import simple_space

sp = simple_space([6, 6, 6])
oracle = coupled_oracle(sp, seed=3)
rng = np.random.default_rng(0)

buf = ReplayBuffer()
for _ in range(600):
    a = tuple(int(rng.integers(6)) for _ in range(3))
    buf.push(Experience(a, oracle.evaluate(a).accuracy))

truth = oracle.table().ravel()
q = NeuralQ(sp, 64, rng=np.random.default_rng(1))
opt = make_optimizer("adam", 0.005)
for step in range(3001):
    acts, rews = buf.sample_arrays(64, rng)
    loss = q.update(acts, rews, 0.005, opt)
    if step % 1000 == 0:
        err = np.sqrt(np.mean((q.predict(sp.all_actions()) - truth) ** 2))
        print(f"step {step:4d}  minibatch loss {loss:.5f}  RMSE over all {sp.n_joint} actions {err:.4f}")

tab = TabularQ(sp)
tab.fit(buf.entries)
seen = len({e.action for e in buf.entries})
print(f"tabular critic saw {seen} distinct cells; unseen cells predict the running mean")
