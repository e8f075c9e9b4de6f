"""Synthetic oracles, the cost-aware reward, and the external-command protocol."""
import sys
import tempfile
from pathlib import Path


from ma2ml.oracle import (MultiObjectiveSpec, OracleResult, coupled_oracle, external_command_oracle,
                          multi_objective_reward)
from ma2ml.space import simple_space

spec = MultiObjectiveSpec(w=-0.07, constraint=600e6)
for acc, cost in ((0.8, 600e6), (0.8, 1200e6), (0.797, 596e6)):
    print(f"acc={acc} cost={cost / 1e6:.0f}M -> reward {multi_objective_reward(OracleResult(acc, cost), spec):.5f}")

sp = simple_space([12, 12, 12])
for c in (0.0, 0.7, 1.0):
    t = coupled_oracle(sp, seed=0, coupling=c).table()
    print(f"coupling {c}: reward range [{t.min():.2f}, {t.max():.2f}], mean {t.mean():.3f}")

with tempfile.TemporaryDirectory() as tmp:
    stub = Path(tmp) / "train.py"
    stub.write_text("import json, sys\npipe = json.loads(sys.stdin.read())\n"
                    "print(json.dumps({'accuracy': 0.5 + 0.01 * pipe['agent0']['choice'], 'cost': 7e8}))\n")
    oracle = external_command_oracle(sp, [sys.executable, str(stub)], timeout_seconds=30)
    print("external command oracle:", oracle.evaluate((3, 0, 0)))
