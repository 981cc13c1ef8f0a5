"""Receding-horizon path planning among moving obstacles.

Each frame the optimizer gets 1000 evaluations to re-plan a polyline to the
goal, the vehicle advances along it and the obstacles move.  Pass a checkpoint
to drive the optimizer with a trained policy; otherwise fixed PSO is used.

    python demos/navigation.py [policy.mdo1]
"""
import sys

from metado import navsim as nv
from metado.harness.checkpoint import load_checkpoint

if len(sys.argv) > 1:
    opt = nv.NavOptimizer(load_checkpoint(sys.argv[1]))
else:
    opt = nv.NavOptimizer()
print(f"optimizer: {opt.name}")

for case in (1, 4):
    scenario = nv.make_scenario(case, seed=7)
    res = nv.run_episode(scenario, opt)
    modes = sorted({o.mode for o in scenario.obstacles})
    print(f"case {case}: {scenario.segments} segments, modes {modes}, "
          f"success={res.success} frames={res.t_step} d_target={res.d_target:.1f}")
    nv.write_frame_trace(f"nav-case{case}.csv", res)
