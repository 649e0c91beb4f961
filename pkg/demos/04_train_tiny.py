# A short actor-critic run on two robots and two light objects.
import numpy as np

from transport_alloc.harness import PRESETS
from transport_alloc.learning import TrainConfig, random_rewards, train

sc = PRESETS["tiny"]
res = train(TrainConfig(episodes=100, seed=0), sc, out_dir="tiny_run")
curve = np.array([c["mean"] for c in res.curve])
for k in range(0, len(curve), 20):
    print(f"episodes {k:3d}-{k + 19:3d}: mean reward {curve[k:k + 20].mean():.3f}")

base = random_rewards(sc, 100, seed=100_000)
print(f"random policy: {base.mean():.3f} +- {base.std(ddof=1) / np.sqrt(len(base)):.3f}")
print("checkpoint written to tiny_run/checkpoint.json")
# transport-alloc run --scenario tiny --policy checkpoint:tiny_run/checkpoint.json --out out/
