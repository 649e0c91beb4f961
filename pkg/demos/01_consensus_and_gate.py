# Priorities, exclusion levels and the output gate on a three-robot toy.
import numpy as np

from transport_alloc.allocation import AllocationState, PolicyCommand, gate, update_exclusions, update_priorities

np.set_printoptions(precision=3, suppress=True)

# three robots, one object; robot 0 cares about it, the others do not
s = AllocationState.zeros(3, 1)
s.phi[:, 0] = [1.0, 0.0, 0.0]
s.zeta[:, 0] = [0.9, 0.2, 0.1]

# everyone keeps its own targets but switches sharing on
def sharing(state):
    return [PolicyCommand([state.phi[i, 0]], 1.0, [state.zeta[i, 0]], 1.0, (0,)) for i in range(3)]

print("step  phi               zeta")
for k in range(6):
    print(f"{k:4d}  {s.phi[:, 0]}  {s.zeta[:, 0]}")
    cmds = sharing(s)
    s = update_exclusions(s, cmds, 1.0)
    s = update_priorities(s, cmds, 1.0)

# exclusion runs a max-consensus: everyone climbs to 0.9 and nobody passes it.
# priorities average out instead.

# the gate only closes when both the exclusion level and the experience are high
for e in (0.5, 1.0, 3.0):
    print(f"E={e}: gated priorities {gate(s, 0, [e])}")
