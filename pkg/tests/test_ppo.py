import math

import numpy as np
import pytest

from metado import dynabench as db
from metado import ppo
from metado.mdp import Wiring
from metado.policy import PolicyParams
from conftest import instance, sphere
from gradcheck import TINY


def _tr(r, v, done=False):
    return ppo.Transition(np.zeros((1, 10)), np.zeros((1, 3)), 0.0, r, v, done)


def test_gae_lambda_zero():
    buf = [_tr(1.0, 0.5), _tr(0.0, 0.2), _tr(2.0, 1.0)]
    adv, ret = ppo.compute_advantages(buf, 0.9, 0.0, 0.7)
    np.testing.assert_allclose(adv, [1 + 0.9 * 0.2 - 0.5, 0 + 0.9 * 1.0 - 0.2, 2 + 0.9 * 0.7 - 1.0])
    np.testing.assert_allclose(ret, adv + [0.5, 0.2, 1.0])


def test_gae_gamma_zero():
    buf = [_tr(1.0, 0.5), _tr(0.3, 0.2)]
    adv, _ = ppo.compute_advantages(buf, 0.0, 0.95, 9.0)
    np.testing.assert_allclose(adv, [0.5, 0.1])


def test_gae_monte_carlo_oracle():
    r, v, boot = [0.2, 0.5, 0.1], [0.3, 0.1, 0.4], 0.6
    adv, _ = ppo.compute_advantages([_tr(a, b) for a, b in zip(r, v)], 1.0, 1.0, boot)
    assert adv[0] == pytest.approx(sum(r) + boot - v[0])
    adv, _ = ppo.compute_advantages([_tr(a, b) for a, b in zip(r, v)][:2] + [_tr(0.1, 0.4, True)], 1.0, 1.0, boot)
    assert adv[0] == pytest.approx(sum(r) - v[0])


def test_gae_normalized_and_empty():
    buf = [_tr(float(i), 0.0) for i in range(5)]
    adv, _ = ppo.compute_advantages(buf, 0.99, 0.95, 0.0, normalize=True)
    assert abs(adv.mean()) < 1e-12 and adv.std() == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        ppo.compute_advantages([], 0.9, 0.9, 0.0)


def _batch(seed=0, T=2, n=3):
    rng = np.random.default_rng(seed)
    params = PolicyParams.init(TINY, rng)
    states = rng.normal(size=(T, n, 10))
    actions = rng.uniform(0, 1, size=(T, n, 3))
    logp_old = rng.normal(size=T) * 0.5 - 2.0
    adv = rng.normal(size=T)
    ret = rng.normal(size=T)
    return params, states, actions, logp_old, adv, ret


def test_surrogate_gradient_finite_difference():
    cfg = ppo.TrainConfig()
    params, states, actions, logp_old, adv, ret = _batch()
    parts, grads = ppo.ppo_loss_and_grads(params, states, actions, logp_old, adv, ret, cfg)
    step = 1e-4
    for name, t in params.tensors.items():
        num = np.empty_like(t)
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + step
            lp = ppo.ppo_loss_and_grads(params, states, actions, logp_old, adv, ret, cfg)[0].total
            t[idx] = old - step
            lm = ppo.ppo_loss_and_grads(params, states, actions, logp_old, adv, ret, cfg)[0].total
            t[idx] = old
            num[idx] = (lp - lm) / (2 * step)
        err = np.linalg.norm(num - grads[name]) / max(np.linalg.norm(num) + np.linalg.norm(grads[name]), 1e-6)
        assert err <= 1e-3, (name, err)


def test_surrogate_gradient_inside_clip_band():
    cfg = ppo.TrainConfig()
    params, states, actions, _, adv, ret = _batch(1)
    from metado.policy import forward
    head, _, _ = forward(params, states)
    z = (actions - head.mu) / head.sigma
    logp = np.sum(-0.5 * z * z - np.log(head.sigma) - 0.5 * math.log(2 * math.pi), axis=(1, 2))
    parts, grads = ppo.ppo_loss_and_grads(params, states, actions, logp + np.array([0.1, -0.1]), adv, ret, cfg)
    t = params.tensors["mu.w"]
    old = t[0, 0]
    t[0, 0] = old + 1e-5
    lp = ppo.ppo_loss_and_grads(params, states, actions, logp + np.array([0.1, -0.1]), adv, ret, cfg)[0].total
    t[0, 0] = old - 1e-5
    lm = ppo.ppo_loss_and_grads(params, states, actions, logp + np.array([0.1, -0.1]), adv, ret, cfg)[0].total
    t[0, 0] = old
    assert (lp - lm) / 2e-5 == pytest.approx(grads["mu.w"][0, 0], rel=1e-4, abs=1e-9)


def test_first_epoch_ratio_is_one():
    cfg = ppo.TrainConfig(ent_coef=0.0)
    params, states, actions, _, adv, ret = _batch(2)
    from metado.policy import forward
    head, _, _ = forward(params, states)
    z = (actions - head.mu) / head.sigma
    logp = np.sum(-0.5 * z * z - np.log(head.sigma) - 0.5 * math.log(2 * math.pi), axis=(1, 2))
    parts, _ = ppo.ppo_loss_and_grads(params, states, actions, logp, adv, ret, cfg)
    assert parts.ratio_mean == pytest.approx(1.0)
    assert parts.policy == pytest.approx(-adv.mean())


def test_zero_advantage_no_policy_gradient():
    cfg = ppo.TrainConfig(ent_coef=0.0, vf_coef=0.0)
    params, states, actions, logp_old, _, ret = _batch(3)
    _, grads = ppo.ppo_loss_and_grads(params, states, actions, logp_old, np.zeros(2), ret, cfg)
    assert all(np.all(g == 0) for g in grads.values())


def test_clip_uses_upper_bound():
    rho, a, eps = 2.0, 1.0, 0.2
    assert min(rho * a, np.clip(rho, 1 - eps, 1 + eps) * a) == pytest.approx(1.2)


def _small_inst(fe_max=2000, dim=5, sigma0=0.0):
    return instance([sphere(dim, shift=[1.0] * dim)], fe_max=fe_max, sigma0=sigma0)


def test_rollout_step_fe_accounting_and_reward():
    inst = _small_inst()
    run = db.DynamicRun(inst, np.random.default_rng(0))
    streams = ppo.rng_streams(0, 1)
    ep = ppo.Episode(run, 20, streams)
    params = ppo.new_policy(config=TINY)
    ctrl = ppo.PolicyController(params, rng=streams["action"])
    buf = []
    fe0 = run.fe
    tr = ppo.rollout_step(params, ep, buf, ctrl)
    assert run.fe - fe0 == 20 + 1
    fe1 = run.fe
    ppo.rollout_step(params, ep, buf, ctrl)
    assert run.fe - fe1 == 20 + 2
    assert len(buf) == 2 and 0 <= tr.reward <= 1 and math.isfinite(tr.logp)
    assert tr.action.shape == (20, 3)


def test_frozen_no_improvement_zero_reward():
    inst = _small_inst()
    run = db.DynamicRun(inst, np.random.default_rng(0))
    ep = ppo.Episode(run, 10, ppo.rng_streams(0, 1))
    _, r, _ = ep.step(ppo.FixedController(0.0, 0.0, 0.0))
    assert r == 0.0 and ep.ratio == 1.0


def test_rollout_deterministic():
    def go():
        run = db.DynamicRun(_small_inst(), np.random.default_rng(0))
        streams = ppo.rng_streams(5, 1)
        ep = ppo.Episode(run, 20, streams)
        params = ppo.new_policy(config=TINY, seed=4)
        ctrl = ppo.PolicyController(params, rng=streams["action"])
        buf = []
        for _ in range(3):
            ppo.rollout_step(params, ep, buf, ctrl)
        return buf
    a, b = go(), go()
    for x, y in zip(a, b):
        assert np.array_equal(x.state, y.state) and np.array_equal(x.action, y.action) and x.reward == y.reward


def test_episode_respects_budget():
    inst = _small_inst(fe_max=1234)
    out = ppo.run_controller(inst, lambda s: ppo.FixedController(), 0, pop_size=20)
    assert out.fe_used == 1234


def test_meta_train_one_update_and_curve():
    pop, n = 10, 10
    inst = _small_inst(fe_max=pop * n)
    cfg = ppo.TrainConfig(epochs=1, pop_size=pop)
    params = ppo.new_policy(config=TINY)
    outs = []
    _, curve = ppo.meta_train(params, [inst], cfg, 0, on_episode=lambda e, o: outs.append(o))
    assert len(curve) == 1 and 1 <= outs[0].updates <= 1
    assert set(curve[0]) == {"epoch", "instance_id", "return", "e_off"}


def test_meta_train_curve_length_and_determinism():
    insts = [_small_inst(fe_max=300), instance([sphere(5, scale=3.0)], fe_max=300, iid="u")]
    cfg = ppo.TrainConfig(epochs=2, pop_size=10, batch=1)
    p1, c1 = ppo.meta_train(ppo.new_policy(config=TINY), insts, cfg, 7)
    p2, c2 = ppo.meta_train(ppo.new_policy(config=TINY), insts, cfg, 7)
    assert len(c1) == 4 and c1 == c2 and p1.equals(p2)
    assert not p1.equals(ppo.new_policy(config=TINY))


def test_meta_train_rejects_bad_inputs():
    with pytest.raises(ValueError):
        ppo.meta_train(ppo.new_policy(config=TINY), [], ppo.TrainConfig(), 0)
    with pytest.raises(ValueError):
        ppo.meta_train(ppo.new_policy(config=TINY), [_small_inst()], ppo.TrainConfig(), 0, Wiring(action="w_only"))


def test_train_config_validation():
    with pytest.raises(ValueError):
        ppo.TrainConfig(clip=1.0)
    with pytest.raises(ValueError):
        ppo.TrainConfig(lr=0.0)


def test_evaluate_policy_deterministic_and_beats_random():
    train, test = db.make_suite(0, fe_max=3000, n_train=4, n_test=8)
    params = ppo.new_policy(config=TINY)
    inst = test[0]
    assert inst.category == "PureNoise"
    rps = []
    for seed in range(10):
        e1, rp, trace = ppo.evaluate_policy(params, inst, seed, pop_size=20)
        rps.append(rp)
    e2, _, _ = ppo.evaluate_policy(params, inst, 9, pop_size=20)
    assert e1 == e2 and len(trace) > 0
    assert np.mean(rps) < 1.0


def test_fixed_baseline_constants():
    assert ppo.FIXED_PSO == (0.7298, 1.49618, 1.49618)
    dec = ppo.FixedController().decide(None, type("S", (), {"n": 4})(), 1.0)
    np.testing.assert_array_equal(dec.h, np.tile(ppo.FIXED_PSO, (4, 1)))


def test_oracle_at_optimum_rp_zero():
    inst = _small_inst()
    run = db.DynamicRun(inst, np.random.default_rng(0))
    while not run.exhausted:
        run.evaluate(np.ones((50, 5)))
    assert db.normalized_performance(run.offline_error(), db.random_baseline(inst, 0)) == 0.0
