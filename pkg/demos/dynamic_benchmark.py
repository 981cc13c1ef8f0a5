"""Walk through the dynamic benchmark with a fixed-parameter NBNC-PSO.

Builds a small suite, runs the classic constriction-factor PSO on a few test
instances and prints offline error against the uniform-random baseline.
Then injects a x100 rescaling of a sphere mid-run and shows the drift feature
picking it up exactly once.

    python demos/dynamic_benchmark.py
"""
import numpy as np

from metado import dynabench as db
from metado import ppo

SEED = 3

train, test = db.make_suite(SEED, dim=5, fe_max=4000, n_train=4, n_test=4)
print(f"{len(train)} train / {len(test)} test instances")
for inst in test:
    e_off, rp, trace = ppo.evaluate_fixed(inst, seed=0)
    n_sp = np.mean([row["n_species"] for row in trace])
    print(f"{inst.id:>8} {inst.category:<16} E_off={e_off:10.4g}  RP={rp:6.3f}  mean species={n_sp:4.1f}")

# a sphere that is suddenly 100 times steeper after `period` evaluations
dim, pop = 5, 20
shift = tuple(np.linspace(-2, 2, dim))
flat = db.BaseFunction("sphere", dim, (-5.0,) * dim, (5.0,) * dim, shift)
steep = db.BaseFunction("sphere", dim, (-5.0,) * dim, (5.0,) * dim, shift, scale=100.0)
period = 1000
inst = db.DynamicInstance("scaled", (flat, steep), db.SwitchSchedule(period, (0, 1)),
                          db.NoiseSchedule(0.0, 0.0), 2 * period, "LandscapeSwitch", 0)
run = db.DynamicRun(inst, np.random.default_rng(0))
ep = ppo.Episode(run, pop, ppo.rng_streams(0, 0))
while not ep.done:
    fe_before = run.fe
    ep.step(ppo.FixedController())
    if ep.state[0, 0] != 0:
        print(f"drift feature {ep.state[0, 0]:.3f} after step {ep.t} (FE {fe_before}->{run.fe}, switch at {period})")
print(f"offline error on the rescaled run: {run.offline_error():.4g}")
