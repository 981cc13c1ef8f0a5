"""Meta-training: the optimise-and-learn loop, GAE, clipped-surrogate PPO, evaluation.

One episode is one full FE budget of NBNC-PSO on one problem.  Each step the
controller sets per-particle (w, c1, c2), the swarm takes a generation, the
archive is refreshed, re-injected and re-evaluated, and the drift-aligned
reward is computed.  With a policy controller the steps are buffered and a PPO
update fires every ``n_rollout`` steps and at episode end.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Protocol

import numpy as np

from . import dynabench
from .mdp import HyperBounds, Wiring, extract_state
from .nbnc import (DEFAULT_FOLLOW, EliteArchive, Swarm, archive_reevaluate, archive_reinject,
                   archive_update, init_swarm, pso_step, recluster, trace_row)
from .policy import (GaussianHead, PolicyConfig, PolicyParams, backward, forward,
                     log_prob_and_entropy, sample)

log = logging.getLogger(__name__)

FIXED_PSO = (0.7298, 1.49618, 1.49618)
STREAMS = ("init", "pso", "action", "noise")


def rng_streams(seed: int, *key: int) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one seed and an episode key."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in key]])
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, ss.spawn(len(STREAMS)))}


@dataclass(frozen=True)
class TrainConfig:
    n_rollout: int = 10
    k_epochs: int = 3
    lr: float = 1e-5
    epochs: int = 20
    batch: int = 8
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    pop_size: int = 50
    follow_factor: float = DEFAULT_FOLLOW
    bounds: HyperBounds = HyperBounds()

    def __post_init__(self):
        for name in ("n_rollout", "k_epochs", "lr", "epochs", "batch", "gamma", "lam", "clip", "pop_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.clip < 1:
            raise ValueError("clip must be below 1")
        if self.ent_coef < 0 or self.vf_coef < 0:
            raise ValueError("loss coefficients must be non-negative")


class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    logp: float
    reward: float
    value: float
    done: bool


# ---------------------------------------------------------------------------
# controllers
# ---------------------------------------------------------------------------

class Decision(NamedTuple):
    h: np.ndarray
    raw: np.ndarray | None = None
    logp: float = 0.0
    value: float = 0.0


class Controller(Protocol):
    def decide(self, state: np.ndarray, swarm: Swarm, t_max: float) -> Decision: ...


@dataclass
class FixedController:
    """Same (w, c1, c2) for every particle at every step."""

    w: float = FIXED_PSO[0]
    c1: float = FIXED_PSO[1]
    c2: float = FIXED_PSO[2]

    def decide(self, state, swarm, t_max):
        return Decision(np.tile([self.w, self.c1, self.c2], (swarm.n, 1)))


@dataclass
class PolicyController:
    """Samples from the policy (or takes the mean when ``greedy``)."""

    params: PolicyParams
    wiring: Wiring = Wiring()
    bounds: HyperBounds = HyperBounds()
    rng: np.random.Generator | None = None
    greedy: bool = False
    last_head: GaussianHead | None = field(default=None, repr=False)

    def decide(self, state, swarm, t_max):
        head, value, _ = forward(self.params, state.astype(np.float32))
        self.last_head = head
        if self.greedy:
            a, raw = head.mu, head.mu
            logp, _ = log_prob_and_entropy(head, raw)
        else:
            a, raw, logp = sample(head, self.rng)
        h = self.wiring.hyper(a, self.bounds, swarm.generation, t_max)
        return Decision(h, raw, logp, float(value))


# ---------------------------------------------------------------------------
# episode
# ---------------------------------------------------------------------------

class Episode:
    """Alg. 1 inner loop state for one problem and one FE budget."""

    def __init__(self, problem, pop_size: int, streams: dict[str, np.random.Generator],
                 wiring: Wiring = Wiring(), follow_factor: float = DEFAULT_FOLLOW,
                 seed_positions: np.ndarray | None = None):
        self.problem = problem
        self.wiring = wiring
        self.follow_factor = follow_factor
        self.rng_pso = streams["pso"]
        self.fe_max = problem.fe_max
        self.fe_start = problem.fe
        self.swarm = init_swarm(problem, pop_size, streams["init"], seed_positions)
        recluster(self.swarm, follow_factor)
        self.archive = EliteArchive()
        self.ratio = 1.0
        self.t = 0
        self.t_max = self.budget / pop_size
        self.state = self.observe()

    @property
    def budget(self) -> int:
        return self.fe_max - self.fe_start

    @property
    def done(self) -> bool:
        return self.problem.remaining <= 0

    def observe(self) -> np.ndarray:
        raw = extract_state(self.swarm, self.ratio, self.problem.fe - self.fe_start, self.budget)
        return self.wiring.mask_state(raw)

    def step(self, controller: Controller) -> tuple[Decision, float, np.ndarray]:
        """One generation; returns (decision, reward, next state)."""
        dec = controller.decide(self.state, self.swarm, self.t_max)
        prev_best = self.swarm.gbest_f
        pso_step(self.swarm, dec.h, self.problem, self.rng_pso, self.follow_factor)
        archive_update(self.archive, self.swarm)
        archive_reinject(self.swarm, self.archive)
        if not self.done:
            self.ratio = archive_reevaluate(self.archive, self.problem)
        else:
            self.ratio = 1.0
        r = self.wiring.reward_value(self.ratio, prev_best, self.swarm.gbest_f)
        self.t += 1
        self.state = self.observe()
        return dec, r, self.state


def rollout_step(params: PolicyParams, episode: Episode, buffer: list[Transition],
                 controller: PolicyController) -> Transition:
    """One training step: act, evolve, reward, store."""
    state = episode.state
    dec, r, _ = episode.step(controller)
    tr = Transition(state, dec.raw, dec.logp, r, dec.value, episode.done)
    buffer.append(tr)
    return tr


# ---------------------------------------------------------------------------
# advantage estimation and PPO
# ---------------------------------------------------------------------------

def compute_advantages(buffer: list[Transition], gamma: float, lam: float, bootstrap_value: float,
                       normalize: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and value targets (returns = advantages + values)."""
    if not buffer:
        raise ValueError("empty buffer")
    rewards = np.array([t.reward for t in buffer], dtype=float)
    values = np.array([t.value for t in buffer], dtype=float)
    dones = np.array([t.done for t in buffer], dtype=float)
    T = len(buffer)
    adv = np.zeros(T)
    last = 0.0
    for t in reversed(range(T)):
        next_v = bootstrap_value if t == T - 1 else values[t + 1]
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    returns = adv + values
    if normalize and T > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


class Adam:
    def __init__(self, params: PolicyParams, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: PolicyParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        new = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            new[k] = p - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        params.assign(new)


@dataclass
class LossParts:
    policy: float
    value: float
    entropy: float
    total: float
    ratio_mean: float


def ppo_loss_and_grads(params: PolicyParams, states: np.ndarray, actions: np.ndarray, logp_old: np.ndarray,
                       advantages: np.ndarray, returns: np.ndarray, config: TrainConfig,
                       ) -> tuple[LossParts, dict[str, np.ndarray]]:
    """Clipped-surrogate loss over a stacked (T, N, ...) batch and its exact gradient."""
    head, value, cache = forward(params, states)
    mu, sigma = head
    T = states.shape[0]
    axes = tuple(range(1, mu.ndim))
    z = (actions - mu) / sigma
    logp = np.sum(-0.5 * z * z - np.log(sigma) - 0.5 * math.log(2 * math.pi), axis=axes)
    ent = np.sum(0.5 + 0.5 * math.log(2 * math.pi) + np.log(sigma), axis=axes)
    rho = np.exp(logp - logp_old)
    clipped = np.clip(rho, 1.0 - config.clip, 1.0 + config.clip)
    surr = np.minimum(rho * advantages, clipped * advantages)
    value = np.atleast_1d(value)
    pol = -float(np.mean(surr))
    vloss = float(np.mean((value - returns) ** 2))
    hmean = float(np.mean(ent))
    total = pol + config.vf_coef * vloss - config.ent_coef * hmean

    inside = (rho >= 1.0 - config.clip) & (rho <= 1.0 + config.clip)
    active = (rho * advantages <= clipped * advantages) | inside
    g_logp = np.where(active, -advantages * rho / T, 0.0)
    g_logp = g_logp.reshape((T,) + (1,) * (mu.ndim - 1))
    dmu = g_logp * (actions - mu) / sigma ** 2
    dsigma = g_logp * (-1.0 / sigma + (actions - mu) ** 2 / sigma ** 3) - config.ent_coef / T / sigma
    dvalue = config.vf_coef * 2.0 * (value - returns) / T
    grads = backward(params, cache, dmu, dsigma, dvalue)
    return LossParts(pol, vloss, hmean, total, float(np.mean(rho))), grads


def ppo_update(params: PolicyParams, optimizer: Adam, buffer: list[Transition], config: TrainConfig,
               bootstrap_value: float = 0.0) -> list[LossParts]:
    """k_epochs of clipped-surrogate steps on the buffer, which is cleared afterwards."""
    if not buffer:
        return []
    adv, ret = compute_advantages(buffer, config.gamma, config.lam, bootstrap_value, normalize=True)
    states = np.stack([t.state for t in buffer]).astype(np.float32)
    actions = np.stack([t.action for t in buffer])
    logp_old = np.array([t.logp for t in buffer])
    diags = []
    for _ in range(config.k_epochs):
        parts, grads = ppo_loss_and_grads(params, states, actions, logp_old, adv, ret, config)
        diags.append(parts)
        if not math.isfinite(parts.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            log.warning("non-finite PPO loss; update skipped")
            break
        optimizer.step(params, grads)
    buffer.clear()
    return diags


# ---------------------------------------------------------------------------
# training and evaluation drivers
# ---------------------------------------------------------------------------

@dataclass
class EpisodeOutcome:
    instance_id: str
    ret: float
    e_off: float
    steps: int
    updates: int
    fe_used: int
    trace: list[dict] = field(default_factory=list)


def train_episode(params: PolicyParams, optimizer: Adam, instance: dynabench.DynamicInstance,
                  config: TrainConfig, streams: dict[str, np.random.Generator], wiring: Wiring = Wiring(),
                  ) -> EpisodeOutcome:
    run = dynabench.DynamicRun(instance, streams["noise"])
    ep = Episode(run, config.pop_size, streams, wiring, config.follow_factor)
    ctrl = PolicyController(params, wiring, config.bounds, streams["action"])
    buffer: list[Transition] = []
    ret = 0.0
    updates = 0
    while not ep.done:
        tr = rollout_step(params, ep, buffer, ctrl)
        ret += tr.reward
        if len(buffer) >= config.n_rollout or tr.done:
            boot = 0.0 if tr.done else float(forward(params, ep.state.astype(np.float32))[1])
            ppo_update(params, optimizer, buffer, config, boot)
            updates += 1
    return EpisodeOutcome(instance.id, ret, run.offline_error(), ep.t, updates, run.fe)


def meta_train(params: PolicyParams, train: list[dynabench.DynamicInstance], config: TrainConfig,
               seed: int, wiring: Wiring = Wiring(),
               on_episode: Callable[[int, EpisodeOutcome], None] | None = None,
               ) -> tuple[PolicyParams, list[dict]]:
    """Epochs over the training set; returns the trained parameters and the learning curve.

    Instances are reshuffled every epoch and consumed in chunks of
    ``config.batch``; updates stay per instance, in a fixed order.
    """
    if not train:
        raise ValueError("empty training set")
    if params.config.n_out != wiring.n_out:
        raise ValueError("policy head width does not match the action wiring")
    optimizer = Adam(params, config.lr)
    order_rng = np.random.default_rng([seed, 7])
    curve = []
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(train))
        for start in range(0, len(order), config.batch):
            for idx in order[start:start + config.batch]:
                inst = train[idx]
                streams = rng_streams(seed, 1, epoch, int(idx))
                out = train_episode(params, optimizer, inst, config, streams, wiring)
                curve.append({"epoch": epoch, "instance_id": inst.id, "return": out.ret, "e_off": out.e_off})
                if on_episode is not None:
                    on_episode(epoch, out)
        log.info("epoch %d mean return %.4f", epoch,
                 np.mean([c["return"] for c in curve if c["epoch"] == epoch]))
    return params, curve


def run_controller(instance: dynabench.DynamicInstance, controller_factory, seed: int, pop_size: int = 50,
                   wiring: Wiring = Wiring(), follow_factor: float = DEFAULT_FOLLOW, keep_trace: bool = False,
                   ) -> EpisodeOutcome:
    """Run any controller on one instance; ``controller_factory(streams)`` builds it."""
    streams = rng_streams(seed, 2)
    run = dynabench.DynamicRun(instance, streams["noise"])
    ep = Episode(run, pop_size, streams, wiring, follow_factor)
    ctrl = controller_factory(streams)
    ret = 0.0
    trace = []
    while not ep.done:
        dec, r, _ = ep.step(ctrl)
        ret += r
        if keep_trace:
            row = trace_row(ep.swarm, ep.ratio)
            row.update(step=ep.t, fe=run.fe, reward=r, e_off=run.offline_error(),
                       w=float(dec.h[:, 0].mean()), c1=float(dec.h[:, 1].mean()), c2=float(dec.h[:, 2].mean()))
            trace.append(row)
    return EpisodeOutcome(instance.id, ret, run.offline_error(), ep.t, 0, run.fe, trace)


def evaluate_policy(params: PolicyParams, instance: dynabench.DynamicInstance, seed: int,
                    wiring: Wiring = Wiring(), pop_size: int = 50, bounds: HyperBounds = HyperBounds(),
                    follow_factor: float = DEFAULT_FOLLOW) -> tuple[float, float, list[dict]]:
    """Greedy (mean-action) run; returns (offline error, RP, per-step trace)."""
    out = run_controller(instance, lambda s: PolicyController(params, wiring, bounds, greedy=True), seed,
                         pop_size, wiring, follow_factor, keep_trace=True)
    e_rand = dynabench.random_baseline(instance, seed)
    return out.e_off, dynabench.normalized_performance(out.e_off, e_rand), out.trace


def evaluate_fixed(instance: dynabench.DynamicInstance, seed: int, hyper=FIXED_PSO, pop_size: int = 50,
                   follow_factor: float = DEFAULT_FOLLOW) -> tuple[float, float, list[dict]]:
    out = run_controller(instance, lambda s: FixedController(*hyper), seed, pop_size,
                         follow_factor=follow_factor, keep_trace=True)
    e_rand = dynabench.random_baseline(instance, seed)
    return out.e_off, dynabench.normalized_performance(out.e_off, e_rand), out.trace


def new_policy(wiring: Wiring = Wiring(), seed: int = 0, config: PolicyConfig | None = None) -> PolicyParams:
    config = replace(config or PolicyConfig(), n_out=wiring.n_out)
    return PolicyParams.init(config, seed)
