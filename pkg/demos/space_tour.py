"""Load the bundled search spaces, count their candidates, and round-trip one pipeline."""
import numpy as np

from ma2ml.cli import bundled_config
from ma2ml.space import decode_action, encode_decoded, encode_onehot, format_action, load_space, log10_cardinality

for name in ("toy3.yaml", "coupled3x12.yaml", "hpo_cifar.yaml", "aug_imagenet.yaml"):
    sp = load_space(bundled_config(name))
    print(f"{name:20s} agents={sp.n_agents} dims={sp.n_dims:4d} one-hot width={sp.width:5d} "
          f"log10|space|={log10_cardinality(sp):7.2f}")

hpo = load_space(bundled_config("hpo_cifar.yaml"))
rng = np.random.default_rng(0)
action = tuple(int(rng.integers(c)) for c in hpo.cardinalities)
decoded = decode_action(hpo, action)
print("\nrandom HPO pipeline", format_action(action))
for agent, dims in decoded.items():
    print(" ", agent, dims)
assert encode_decoded(hpo, decoded) == action
x = encode_onehot(hpo, action)
print("one-hot has", int(x.sum()), "ones over", len(x), "slots")
