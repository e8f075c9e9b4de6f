"""Paired-seed comparison of the three estimators on a coupled landscape (a few seeds)."""
import sys

from ma2ml.cli import bundled_config
from ma2ml.oracle import coupled_oracle
from ma2ml.space import load_space
from ma2ml.trainer import Hyperparams, compare_variants

seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
sp = load_space(bundled_config("coupled3x12.yaml"))
hp = Hyperparams(optimizer="adam", updates_per_iter=50, minibatch_size=24, baseline_samples="exact")
res = compare_variants(sp, lambda s: coupled_oracle(sp, seed=1000 + s), hp, ["ma2ml", "lite", "onpolicy"],
                       list(range(seeds)), progress=lambda v, s, r: print(f"  {v:8s} seed {s}: top-20 {r.topk_mean():.4f}"))
for row in res.summary_rows():
    print({k: (round(v, 4) if isinstance(v, float) else v) for k, v in row.items()})
