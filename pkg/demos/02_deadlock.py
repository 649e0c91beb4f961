# A weight-4 object among three robots: watch experience build up and the gate close.
from dataclasses import replace

import numpy as np

from transport_alloc.harness import PRESETS, Episode, run_batch

sc = PRESETS["deadlock"]
ep = Episode(sc, seed=0)
heavy = int(np.flatnonzero(ep.world.obj_weight > sc.max_robots)[0])
print("weights", ep.world.obj_weight, "heavy object", heavy)

last = None
while not ep.done:
    ep.step()
    e = ep.ledger.values()[heavy]
    state = (round(e, 2), ep.gate[:, heavy].tolist())
    if state != last and (e > 0 or ep.gate[:, heavy].any()):
        print(f"t={ep.world.time:5.0f}  E={e:6.2f}  gate bits {ep.gate[:, heavy].astype(int)}  "
              f"zeta {np.round(ep.state.zeta[:, heavy], 2)}")
        last = state
print("success", ep.success, "delivered at", ep.delivered_at)

# without the exclusion/gate the robots pile onto the heavy object and stay there
for abl in ("full", "no_de"):
    rep, _ = run_batch(replace(sc, episodes=20, ablation=abl))
    print(f"{abl:6s} success rate over 20 episodes: {rep.success_rate:.2f}")
