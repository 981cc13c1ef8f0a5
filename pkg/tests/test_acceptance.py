"""Acceptance criteria 1-10.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line.  Criteria 7-10 share
one set of trainings built once per session (full system on three seeds plus
the binary- and linear-reward variants); expect this module to take about
an hour and a half on one CPU.
"""
import time

import numpy as np
import pytest

from metado import dynabench as db
from metado import navsim as nv
from metado import nbnc, ppo
from metado.mdp import RewardInputs, Wiring, extract_state, reward
from metado.policy import PolicyConfig, PolicyParams, forward
from metado.harness.report import ResultRow, rank_report
from conftest import ACCEPTANCE_LINES, instance, random_swarm, sphere
from gradcheck import check
from oracles import nbnc_oracle, offline_error_oracle

SEEDS = (0, 1, 2)
E2E = dict(dim=10, fe_max=10_000, n_train=16, n_test=8)
EPOCHS = 10
POP = 50
RUNS = 10
ABLATION_RUNS = 5
NAV_EPISODES = 10


def report(n, ok, detail=""):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    assert ok, detail


# 1 ---------------------------------------------------------------------------

def test_1_feature_bounds():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(10_000):
        sw = random_swarm(rng)
        ratio = 10.0 ** rng.uniform(-30, 30)
        fe_max = 10_000
        s = extract_state(sw, ratio, int(rng.integers(0, fe_max + 1)), fe_max)
        ok = (np.all(np.isfinite(s)) and np.all(np.abs(s[:, 0]) <= 1) and np.all(s[:, 0] == s[0, 0])
              and np.all((s[:, 3:9] >= 0) & (s[:, 3:9] <= 1)) and np.all(np.abs(s[:, 9]) <= 1))
        bad += not ok
    dt = time.time() - t0
    report(1, bad == 0 and dt < 60, f"violations={bad} runtime={dt:.1f}s")


# 2 ---------------------------------------------------------------------------

def test_2_reward_suite():
    rng = np.random.default_rng(7)
    eps = 1e-8
    out_of_range = 0
    for _ in range(100_000):
        f_base = rng.choice([-1, 1]) * 10.0 ** rng.uniform(-8, 8)
        cur = rng.choice([-1, 1]) * 10.0 ** rng.uniform(-8, 8)
        ratio = 10.0 ** rng.uniform(-4, 4)
        r = reward(RewardInputs(ratio, f_base / ratio, cur))
        out_of_range += not (0.0 <= r <= 1.0)
    derived = reward(RewardInputs(1.0, 100.0, 1.0))
    # monotonicity on the non-negative fitness domain the benchmark produces
    non_mono = 0
    for _ in range(10_000):
        ratio = 10.0 ** rng.uniform(-3, 3)
        prev = 10.0 ** rng.uniform(-7, 7)
        a, b = np.sort(10.0 ** rng.uniform(-8, 8, size=2))
        a, b = max(a, eps), max(b, eps)
        non_mono += reward(RewardInputs(ratio, prev, a)) < reward(RewardInputs(ratio, prev, b))
    ok = out_of_range == 0 and abs(derived - 0.2) <= 1e-6 and non_mono == 0
    report(2, ok, f"out_of_range={out_of_range} r(1,100->1)={derived:.9f} non_monotone={non_mono}")


# 3 ---------------------------------------------------------------------------

def _fe_after(step, n, cap=nbnc.ARCHIVE_SIZE):
    return n + sum(n + min(t, cap) for t in range(1, step + 1))


def test_3_change_detection():
    n, dim, k = POP, 10, 20
    period = _fe_after(k, n)
    shift = np.random.default_rng(0).uniform(-3, 3, dim)
    base = sphere(dim, shift)
    scaled = sphere(dim, shift, scale=100.0)
    inst = instance([base, scaled], period=period, order=[0, 1], fe_max=2 * period)
    run = db.DynamicRun(inst, np.random.default_rng(1))
    ep = ppo.Episode(run, n, ppo.rng_streams(0, 9))
    fea1 = []
    while not ep.done:
        ep.step(ppo.FixedController())
        fea1.append(float(ep.state[0, 0]))
    fea1 = np.array(fea1)
    at = fea1[k]          # state observed after step k+1, the first step fully in the new environment
    others = np.delete(fea1, k)
    ok = at >= 0.2 and np.all(np.abs(others) <= 0.05)
    report(3, ok, f"fea1_at_change={at:.4f} max_abs_elsewhere={np.abs(others).max():.2e} steps={len(fea1)}")


# 4 ---------------------------------------------------------------------------

def test_4_gradient_fidelity():
    t0 = time.time()
    errors = check(seed=0, n=3, step=1e-4)
    worst = max(errors, key=errors.get)
    dt = time.time() - t0
    ok = all(e <= 1e-3 for e in errors.values()) and dt < 120
    report(4, ok, f"tensors={len(errors)} worst={worst}:{errors[worst]:.2e} runtime={dt:.1f}s")


# 5 ---------------------------------------------------------------------------

def test_5_permutation_law():
    params = PolicyParams.init(PolicyConfig(), 11)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 33))
        s = rng.normal(size=(n, 10)) * rng.uniform(0.1, 10)
        perm = rng.permutation(n)
        h1, v1, _ = forward(params, s)
        h2, v2, _ = forward(params, s[perm])
        worst = max(worst, np.abs(h2.mu - h1.mu[perm]).max(), np.abs(h2.sigma - h1.sigma[perm]).max(),
                    abs(v2 - v1))
    report(5, worst <= 1e-5, f"max_deviation={worst:.2e}")


# 6 ---------------------------------------------------------------------------

def test_6_offline_error_and_clustering_oracles():
    rng = np.random.default_rng(6)
    mismatched = 0
    for trial in range(100):
        dim = int(rng.integers(1, 6))
        subs = [sphere(dim, rng.uniform(-4, 4, dim), scale=float(10 ** rng.uniform(-1, 1)))
                for _ in range(int(rng.integers(1, 4)))]
        sigma0 = float(rng.choice([0.0, 0.2]))
        inst = instance(subs, period=int(rng.integers(5, 80)), sigma0=sigma0 if len(subs) > 1 else 0.2,
                        growth=1.0, fe_max=int(rng.integers(50, 400)))
        run = db.DynamicRun(inst, np.random.default_rng(trial))
        observed = []
        while not run.exhausted:
            out = run.evaluate(rng.uniform(-5, 5, size=(int(rng.integers(1, 40)), dim)))
            observed.extend(out[np.isfinite(out)].tolist())
        active = [db.active_index(inst, fe) for fe in range(inst.fe_max)]
        direct = offline_error_oracle(observed, active, [s.optimum_value for s in subs])
        mismatched += run.offline_error() != direct
    disagree = 0
    for _ in range(500):
        n = int(rng.integers(1, 13))
        d = int(rng.integers(1, 5))
        X = rng.uniform(-1, 1, size=(n, d))
        f = rng.integers(0, 4, size=n).astype(float) if rng.random() < 0.3 else rng.normal(size=n)
        phi = float(rng.uniform(0.2, 4.0))
        got = {frozenset(s.tolist()) for s in nbnc.cluster_nbnc(X, f, phi)}
        disagree += got != nbnc_oracle(X, f, phi)
    report(6, mismatched == 0 and disagree == 0, f"ledger_mismatches={mismatched}/100 nbnc_disagreements={disagree}/500")


# shared trainings for 7-10 ---------------------------------------------------

class Study:
    def __init__(self):
        self.suites = {s: db.make_suite(s, **E2E) for s in SEEDS}
        self.cfg = ppo.TrainConfig(epochs=EPOCHS, pop_size=POP)
        self._trained = {}

    def trained(self, seed, variant="log"):
        key = (seed, variant)
        if key not in self._trained:
            wiring = Wiring(reward=variant)
            t0 = time.time()
            params, curve = ppo.meta_train(ppo.new_policy(wiring, seed), self.suites[seed][0], self.cfg, seed, wiring)
            print(f"\ntrained seed={seed} reward={variant} in {time.time() - t0:.0f}s")
            self._trained[key] = (params, curve, wiring)
        return self._trained[key]

    def rp_rows(self, seed, variant, runs):
        params, _, wiring = self.trained(seed, variant)
        rows = []
        for inst in self.suites[seed][1]:
            for run in range(runs):
                e_off, rp, _ = ppo.evaluate_policy(params, inst, 1000 * seed + run, wiring, POP)
                rows.append(ResultRow(inst.id, variant, run, 1000 * seed + run, e_off, e_off / rp if rp else 0, rp))
        return rows


@pytest.fixture(scope="session")
def study():
    return Study()


# 7 ---------------------------------------------------------------------------

def test_7_end_to_end_directional(study):
    params, _, wiring = study.trained(0)
    test = study.suites[0][1]
    wins, pure_ok, lines = 0, True, []
    for inst in test:
        meta = np.mean([ppo.evaluate_policy(params, inst, r, wiring, POP)[1] for r in range(RUNS)])
        fixed = np.mean([ppo.evaluate_fixed(inst, r, pop_size=POP)[1] for r in range(RUNS)])
        wins += meta < fixed
        if inst.category == "PureNoise":
            pure_ok &= meta < 1.0
        lines.append(f"{inst.id}:{inst.category[:5]} meta={meta:.4f} fixed={fixed:.4f}")
    print("\n" + "\n".join(lines))
    frac = wins / len(test)
    report(7, frac >= 0.6 and pure_ok, f"win_fraction={frac:.3f} purenoise_rp_below_1={pure_ok}")


# 8 ---------------------------------------------------------------------------

def test_8_training_signal(study):
    passes, detail = 0, []
    for seed in SEEDS:
        _, curve, _ = study.trained(seed)
        R = np.array([c["return"] for c in curve])
        q = len(R) // 4
        first, last = R[:q].mean(), R[-q:].mean()
        passes += last >= first
        detail.append(f"seed{seed}:{first:.3f}->{last:.3f}")
    report(8, passes >= 2, f"passing_seeds={passes}/3 " + " ".join(detail))


# 9 ---------------------------------------------------------------------------

def test_9_ablation_directionality(study):
    passes, detail = 0, []
    for seed in SEEDS:
        rows = []
        for variant in ("log", "binary", "linear"):
            rows += study.rp_rows(seed, variant, ABLATION_RUNS)
        avg = rank_report(rows).average_rank
        ok = avg["log"] <= avg["binary"] and avg["log"] <= avg["linear"]
        passes += ok
        detail.append(f"seed{seed}:full={avg['log']:.3f},binary={avg['binary']:.3f},linear={avg['linear']:.3f}")
    report(9, passes >= 2, f"passing_seeds={passes}/3 " + " ".join(detail))


# 10 --------------------------------------------------------------------------

def test_10_navigation(study):
    params, _, wiring = study.trained(0)
    opts = {"meta": nv.NavOptimizer(params, wiring), "fixed": nv.NavOptimizer()}
    wins, budget_ok, detail = 0, True, []
    for case in range(1, 7):
        sr = {}
        for name, opt in opts.items():
            results = [nv.run_episode(nv.make_scenario(case, 100 + e), opt) for e in range(NAV_EPISODES)]
            budget_ok &= all(r.t_step <= 500 and len(r.frames) == r.t_step and
                             all(f.fe_used == 1000 for f in r.frames) for r in results)
            sr[name] = nv.aggregate(results)[0]
        wins += sr["meta"] >= sr["fixed"]
        detail.append(f"case{case}:{sr['meta']:.1f}/{sr['fixed']:.1f}")
    report(10, wins >= 4 and budget_ok, f"cases_meta_ge_fixed={wins}/6 budgets_ok={budget_ok} " + " ".join(detail))
