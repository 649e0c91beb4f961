# Three robots face five weight-6 objects; three more robots join at t=1000.
import numpy as np

from transport_alloc.harness import PRESETS, run_episode

np.set_printoptions(precision=4, suppress=True)

sc = PRESETS["validation3"]
res = run_episode(sc, seed=0, policy=None, record=False)
ev = res.events[0]
print(f"robots {sc.n_initial} -> {ev['n_robots']} at t={ev['t']:.0f}")
print("E before", np.array(ev["E_before"]))
print("E after ", np.array(ev["E_after"]))
# stored experience is divided by N**10, so doubling N divides every E by 1024
# and the gates that held the heavy objects reopen

for l, t in sorted(res.delivered_at.items(), key=lambda kv: kv[1]):
    print(f"object {l} delivered at t={t:.0f}")
print("all delivered:", res.success, "in", res.transport_time, "s")
