"""Walk through ground state, pseudoconformal blow-up and mass concentration in 1D.

Run with ``python demos/blowup_story.py``. Takes well under a minute.
"""
import numpy as np

from nlsmass import diagnostics as dg
from nlsmass.grid import Field, SpacetimeSeries, make_grid
from nlsmass.groundstate import ground_state
from nlsmass.solver import SolverConfig, estimate_blowup_time, evolve, pseudoconformal_field, resolvable_window

gs = ground_state(1)
print(f"ground state: |Q|^2 = {gs.mass_sq:.10f} (sqrt(3) pi / 2 = {np.sqrt(3) * np.pi / 2:.10f})")

# The explicit blow-up solution keeps exactly the ground-state mass while it
# shrinks into the origin. Its log-rule window holds all of it.
spec = make_grid(1, 32.0, 16384)
T = 1.0
times = resolvable_window(spec, gs, T, T - np.geomspace(0.6, 1e-3, 24))
series = SpacetimeSeries.from_fields(times, [pseudoconformal_field(gs, spec, T, t) for t in times])
for rep in dg.concentration_series(series, T, "log")[::6]:
    print(f"  T - t = {T - rep.t:.2e}   mass in log window / |Q|^2 = {rep.mass_in_ball / gs.mass_sq:.4f}")

# A slightly supercritical multiple of Q collapses in finite time on its own.
u0 = Field(spec, 1.2 * gs(spec.axis()))
traj = evolve(u0, 5.0, SolverConfig(dt_base=2e-3, dt_policy="adaptive", snapshot_stride=20))
est = estimate_blowup_time(traj)
print(f"1.2 Q: run stopped at t = {traj.times[-1]:.5f}, fitted blow-up time {est.T_est:.5f}")
last = dg.concentration_series(traj, est.T_est, "log")[-1]
print(f"  mass in the last log window: {last.mass_in_ball:.3f}  (|Q|^2 = {gs.mass_sq:.3f})")
