"""Train a small meta-policy with PPO and compare it with fixed-parameter PSO.

This is a toy-sized run (a few minutes on one core).  The acceptance suite
uses the D=10, 16/8 instance, 10-epoch setup instead.

    python demos/train_meta_policy.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from metado import dynabench as db
from metado import ppo
from metado.harness.checkpoint import load_checkpoint, save_checkpoint
from metado.mdp import Wiring

out = Path(sys.argv[1] if len(sys.argv) > 1 else "metado_out")
out.mkdir(parents=True, exist_ok=True)

seed = 0
wiring = Wiring()
train, test = db.make_suite(seed, dim=5, fe_max=3000, n_train=4, n_test=4)
config = ppo.TrainConfig(epochs=3, pop_size=20)

params = ppo.new_policy(wiring, seed)
params, curve = ppo.meta_train(params, train, config, seed, wiring)
returns = np.array([c["return"] for c in curve])
print(f"{len(curve)} episodes, return first half {returns[:len(returns) // 2].mean():.3f}, "
      f"second half {returns[len(returns) // 2:].mean():.3f}")

ckpt = out / "demo-policy.mdo1"
save_checkpoint(params, ckpt)
params = load_checkpoint(ckpt)           # round trip through the binary format
print(f"checkpoint {ckpt} ({params.n_parameters()} parameters)")

for inst in test:
    meta = np.mean([ppo.evaluate_policy(params, inst, s, wiring, pop_size=20)[1] for s in range(3)])
    fixed = np.mean([ppo.evaluate_fixed(inst, s, pop_size=20)[1] for s in range(3)])
    print(f"{inst.id:>8} {inst.category:<16} RP meta={meta:.3f} fixed={fixed:.3f}")
