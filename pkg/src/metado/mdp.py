"""State features, action mapping and reward for the meta-level controller."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nbnc import Swarm

EPS = 1e-8
N_FEATURES = 10


@dataclass(frozen=True)
class HyperBounds:
    lower: tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: tuple[float, float, float] = (1.0, 4.1, 4.1)

    def __post_init__(self):
        if len(self.lower) != len(self.upper) or any(l >= u for l, u in zip(self.lower, self.upper)):
            raise ValueError("hyper-parameter bounds need lower < upper componentwise")


@dataclass(frozen=True)
class RewardInputs:
    ratio: float
    gbest_prev_f: float
    gbest_cur_f: float
    epsilon: float = EPS


def _zscore(f: np.ndarray) -> np.ndarray:
    return (f - f.mean()) / (f.std() + EPS)


def extract_state(swarm: Swarm, ratio: float, fe: int, fe_max: int) -> np.ndarray:
    """N x 10 feature matrix; column k holds feature k+1."""
    n = swarm.n
    f = swarm.f
    t_max = fe_max / n
    diam = swarm.diameter
    s = np.empty((n, N_FEATURES))

    s[:, 0] = np.clip(math.log10(max(ratio, 1e-300)) / 8.0, -1.0, 1.0)
    # rows not evaluated (budget cut mid-batch) carry inf; score them as the worst finite value
    ff = np.where(np.isfinite(f), f, np.nan)
    if np.isnan(ff).all():
        ff = np.zeros(n)
    ff = np.where(np.isnan(ff), np.nanmax(ff), ff)
    s[:, 1] = _zscore(ff)
    for members in swarm.species:
        s[members, 2] = _zscore(ff[members])
    s[:, 3] = (fe_max - fe) / fe_max
    s[:, 4] = np.minimum(swarm.stagnation_p / t_max, 1.0)
    s[:, 5] = min(swarm.stagnation_g / t_max, 1.0)

    to_g = swarm.gbest[None, :] - swarm.x
    to_p = swarm.pbest - swarm.x
    s[:, 6] = np.linalg.norm(to_g, axis=1) / diam
    s[:, 7] = np.linalg.norm(swarm.sbest_positions() - swarm.x, axis=1) / diam
    s[:, 8] = np.linalg.norm(to_p, axis=1) / diam
    ng = np.linalg.norm(to_g, axis=1)
    npb = np.linalg.norm(to_p, axis=1)
    denom = ng * npb
    cos = np.zeros(n)
    ok = denom > 0
    cos[ok] = np.sum(to_g[ok] * to_p[ok], axis=1) / denom[ok]
    s[:, 9] = np.clip(cos, -1.0, 1.0)
    np.clip(s[:, 6:9], 0.0, 1.0, out=s[:, 6:9])
    return s


def map_action(a: np.ndarray, bounds: HyperBounds = HyperBounds()) -> np.ndarray:
    """Affine map of [0, 1] actions onto the hyper-parameter box, row by row."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0.0) or np.any(a > 1.0) or not np.all(np.isfinite(a)):
        raise ValueError("actions must lie in [0, 1]; clip samples before mapping")
    lo = np.asarray(bounds.lower, dtype=float)
    hi = np.asarray(bounds.upper, dtype=float)
    return a * (hi - lo) + lo


def reward(inp: RewardInputs) -> float:
    """Log-scale improvement over the drift-adjusted previous best, normalised to [0, 1]."""
    eps = inp.epsilon
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    base = inp.ratio * inp.gbest_prev_f
    log_base = math.log10(max(abs(base), eps))
    delta = log_base - math.log10(max(abs(inp.gbest_cur_f), eps))
    return max(delta, 0.0) / (log_base - math.log10(eps) + eps)


# ---------------------------------------------------------------------------
# component wiring (full system and ablation variants)
# ---------------------------------------------------------------------------

ACTION_MODES = ("full", "c_only", "w_only")
REWARD_MODES = ("log", "binary", "linear")
FIXED_C = 2.05


@dataclass(frozen=True)
class Wiring:
    """Which features the policy sees, which coefficients it sets, how it is rewarded."""

    feature_mask: tuple[bool, ...] = (True,) * N_FEATURES
    action: str = "full"
    reward: str = "log"

    def __post_init__(self):
        if len(self.feature_mask) != N_FEATURES:
            raise ValueError("feature mask needs one flag per feature")
        if self.action not in ACTION_MODES or self.reward not in REWARD_MODES:
            raise ValueError(f"bad wiring {self.action!r}/{self.reward!r}")

    @property
    def n_out(self) -> int:
        return {"full": 3, "c_only": 2, "w_only": 1}[self.action]

    def mask_state(self, state: np.ndarray) -> np.ndarray:
        if all(self.feature_mask):
            return state
        return state * np.asarray(self.feature_mask, dtype=float)

    def hyper(self, a: np.ndarray, bounds: HyperBounds, generation: int, t_max: float) -> np.ndarray:
        """Full (w, c1, c2) matrix from the policy's clipped actions."""
        n = a.shape[0]
        if self.action == "full":
            return map_action(a, bounds)
        if self.action == "c_only":
            sub = HyperBounds(bounds.lower[1:], bounds.upper[1:])
            c = map_action(a, sub)
            w = np.full((n, 1), linear_decay_w(generation, t_max))
            return np.hstack([w, c])
        sub = HyperBounds(bounds.lower[:1], bounds.upper[:1])
        w = map_action(a, sub)
        return np.hstack([w, np.full((n, 2), FIXED_C)])

    def reward_value(self, ratio: float, gbest_prev_f: float, gbest_cur_f: float) -> float:
        if self.reward == "log":
            return reward(RewardInputs(ratio, gbest_prev_f, gbest_cur_f))
        base = ratio * gbest_prev_f
        if self.reward == "binary":
            return 1.0 if gbest_cur_f < base else 0.0
        return max(base - gbest_cur_f, 0.0)


def linear_decay_w(generation: int, t_max: float) -> float:
    return 0.9 - 0.5 * min(generation / t_max, 1.0)
