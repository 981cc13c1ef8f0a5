"""Synthetic dynamic benchmark: non-stationary instances, evaluation and offline error.

An instance is a small list of shifted base functions that take turns being
active on a fixed FE schedule, optionally observed through Gaussian noise whose
standard deviation grows linearly with the consumed budget.  Every base
function has its minimum (0 before scaling) at its ``shift`` vector, so the
noiseless optimum of the active sub-problem is always known.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FUNCTION_IDS",
    "CATEGORIES",
    "BudgetExhausted",
    "BaseFunction",
    "SwitchSchedule",
    "NoiseSchedule",
    "DynamicInstance",
    "EvaluationLedger",
    "DynamicRun",
    "make_suite",
    "active_index",
    "evaluate",
    "offline_error",
    "random_baseline",
    "normalized_performance",
    "suite_to_dict",
    "suite_from_dict",
    "write_suite",
    "read_suite",
]

FUNCTION_IDS = (
    "sphere",
    "ackley",
    "rastrigin",
    "griewank",
    "rosenbrock",
    "schwefel222",
    "levy",
    "happycat",
)
CATEGORIES = ("PureNoise", "LandscapeSwitch", "Hybrid")

RANDOM_SAMPLES = 100


class BudgetExhausted(RuntimeError):
    """Raised when an evaluation is requested at or beyond ``fe_max``."""


# ---------------------------------------------------------------------------
# base functions, all written so that the minimum 0 sits at z = 0
# ---------------------------------------------------------------------------

def _sphere(z):
    return np.sum(z * z, axis=-1)


def _ackley(z):
    d = z.shape[-1]
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(z * z, axis=-1) / d))
    b = -np.exp(np.sum(np.cos(2.0 * np.pi * z), axis=-1) / d)
    return a + b + 20.0 + np.e


def _rastrigin(z):
    d = z.shape[-1]
    return 10.0 * d + np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z), axis=-1)


def _griewank(z):
    idx = np.sqrt(np.arange(1, z.shape[-1] + 1))
    return 1.0 + np.sum(z * z, axis=-1) / 4000.0 - np.prod(np.cos(z / idx), axis=-1)


def _rosenbrock(z):
    y = z + 1.0
    return np.sum(100.0 * (y[..., 1:] - y[..., :-1] ** 2) ** 2 + (1.0 - y[..., :-1]) ** 2, axis=-1)


def _schwefel222(z):
    a = np.abs(z)
    return np.sum(a, axis=-1) + np.prod(a, axis=-1)


def _levy(z):
    w = 1.0 + z / 4.0
    head = np.sin(np.pi * w[..., 0]) ** 2
    mid = np.sum((w[..., :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[..., :-1] + 1.0) ** 2), axis=-1)
    tail = (w[..., -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[..., -1]) ** 2)
    return head + mid + tail


def _happycat(z):
    d = z.shape[-1]
    y = z - 1.0
    sq = np.sum(y * y, axis=-1)
    return np.abs(sq - d) ** 0.25 + (0.5 * sq + np.sum(y, axis=-1)) / d + 0.5


_RAW = {
    "sphere": _sphere,
    "ackley": _ackley,
    "rastrigin": _rastrigin,
    "griewank": _griewank,
    "rosenbrock": _rosenbrock,
    "schwefel222": _schwefel222,
    "levy": _levy,
    "happycat": _happycat,
}


def _clean(values: np.ndarray) -> np.ndarray:
    # sin(pi)**2 and e - e leave ~1e-16 residues; the floor is exactly 0
    return np.maximum(values, 0.0)


@dataclass(frozen=True)
class BaseFunction:
    """A shifted, scaled base function with a known minimum at ``shift``.

    ``blend`` turns the sub-problem into ``weight * f_id + (1 - weight) * f_other``
    sharing the same shift, which keeps the optimum location and value exact.
    """

    id: str
    dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shift: tuple[float, ...]
    optimum_value: float = 0.0
    scale: float = 1.0
    blend: tuple[str, float] | None = None

    def __post_init__(self):
        if self.id not in _RAW:
            raise ValueError(f"unknown base function {self.id!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        for name in ("lower", "upper", "shift"):
            if len(getattr(self, name)) != self.dim:
                raise ValueError(f"{name} must have length {self.dim}")
        lo, hi, s = np.asarray(self.lower), np.asarray(self.upper), np.asarray(self.shift)
        if np.any(lo >= hi):
            raise ValueError("lower bound must be strictly below upper bound")
        if np.any(s < lo) or np.any(s > hi):
            raise ValueError("shift must lie inside the bounds")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.blend is not None:
            other, weight = self.blend
            if other not in _RAW or not 0.0 <= weight <= 1.0:
                raise ValueError(f"invalid blend {self.blend!r}")

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)

    @property
    def optimum(self) -> np.ndarray:
        return np.asarray(self.shift, dtype=float)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = x - np.asarray(self.shift)
        val = _clean(_RAW[self.id](z))
        if self.blend is not None:
            other, weight = self.blend
            val = weight * val + (1.0 - weight) * _clean(_RAW[other](z))
        return self.scale * val + self.optimum_value

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "dim": self.dim,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "shift": list(self.shift),
            "optimum_value": self.optimum_value,
            "scale": self.scale,
        }
        if self.blend is not None:
            d["blend"] = [self.blend[0], self.blend[1]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BaseFunction":
        blend = d.get("blend")
        return cls(
            id=d["id"],
            dim=int(d["dim"]),
            lower=tuple(float(v) for v in d["lower"]),
            upper=tuple(float(v) for v in d["upper"]),
            shift=tuple(float(v) for v in d["shift"]),
            optimum_value=float(d.get("optimum_value", 0.0)),
            scale=float(d.get("scale", 1.0)),
            blend=None if blend is None else (str(blend[0]), float(blend[1])),
        )


@dataclass(frozen=True)
class SwitchSchedule:
    period_fe: int
    order: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.period_fe < 1:
            raise ValueError("period_fe must be >= 1")
        if len(self.order) == 0:
            raise ValueError("order must be non-empty")


@dataclass(frozen=True)
class NoiseSchedule:
    sigma0: float = 0.0
    growth: float = 0.0

    def __post_init__(self):
        if self.sigma0 < 0 or self.growth < 0:
            raise ValueError("noise parameters must be non-negative")

    def sigma(self, fe, fe_max: int):
        """Noise standard deviation after ``fe`` evaluations (vectorised in ``fe``)."""
        return self.sigma0 * (1.0 + self.growth * np.asarray(fe, dtype=float) / fe_max)


@dataclass(frozen=True)
class DynamicInstance:
    id: str
    sub_problems: tuple[BaseFunction, ...]
    switch: SwitchSchedule
    noise: NoiseSchedule
    fe_max: int
    category: str
    seed: int = 0

    def __post_init__(self):
        k = len(self.sub_problems)
        if k == 0:
            raise ValueError("an instance needs at least one sub-problem")
        if self.fe_max < 1:
            raise ValueError("fe_max must be positive")
        if any(i < 0 or i >= k for i in self.switch.order):
            raise ValueError("switch order refers to a missing sub-problem")
        dims = {p.dim for p in self.sub_problems}
        bounds = {(p.lower, p.upper) for p in self.sub_problems}
        if len(dims) != 1 or len(bounds) != 1:
            raise ValueError("all sub-problems must share dimension and bounds")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.category == "PureNoise" and k != 1:
            raise ValueError("PureNoise instances have exactly one sub-problem")
        if self.category == "LandscapeSwitch" and (k < 2 or self.noise.sigma0 != 0):
            raise ValueError("LandscapeSwitch instances are noiseless with >= 2 sub-problems")
        if self.category == "Hybrid" and (k < 2 or self.noise.sigma0 <= 0):
            raise ValueError("Hybrid instances are noisy with >= 2 sub-problems")

    @property
    def dim(self) -> int:
        return self.sub_problems[0].dim

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.sub_problems[0].lower, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.sub_problems[0].upper, dtype=float)

    def sigma(self, fe):
        return self.noise.sigma(fe, self.fe_max)

    def epochs(self) -> list[tuple[int, int, int]]:
        """``(start_fe, stop_fe, active)`` segments of constant active sub-problem."""
        out = []
        start = 0
        cur = active_index(self, 0)
        step = self.switch.period_fe
        fe = step
        while fe < self.fe_max:
            nxt = active_index(self, fe)
            if nxt != cur:
                out.append((start, fe, cur))
                start, cur = fe, nxt
            fe += step
        out.append((start, self.fe_max, cur))
        return out

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "seed": self.seed,
            "fe_max": self.fe_max,
            "switch": {"period_fe": self.switch.period_fe, "order": list(self.switch.order)},
            "noise": {"sigma0": self.noise.sigma0, "growth": self.noise.growth},
            "sub_problems": [p.to_dict() for p in self.sub_problems],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicInstance":
        return cls(
            id=str(d["id"]),
            sub_problems=tuple(BaseFunction.from_dict(p) for p in d["sub_problems"]),
            switch=SwitchSchedule(int(d["switch"]["period_fe"]), tuple(int(i) for i in d["switch"]["order"])),
            noise=NoiseSchedule(float(d["noise"]["sigma0"]), float(d["noise"]["growth"])),
            fe_max=int(d["fe_max"]),
            category=str(d["category"]),
            seed=int(d.get("seed", 0)),
        )


def active_index(instance: DynamicInstance, fe: int) -> int:
    """Index of the sub-problem active at evaluation number ``fe`` (0-based)."""
    if not 0 <= fe < instance.fe_max:
        raise ValueError(f"fe={fe} outside [0, {instance.fe_max})")
    if len(instance.sub_problems) == 1:
        return 0
    order = instance.switch.order
    return order[(fe // instance.switch.period_fe) % len(order)]


# ---------------------------------------------------------------------------
# offline-error bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class EvaluationLedger:
    """Running offline-error state of one run.

    The per-evaluation error is the gap between the best fitness observed so
    far in the current environment epoch and the active optimum, floored at 0.
    """

    fe_max: int
    fe_used: int = 0
    error_sum: float = 0.0
    best_so_far: float = math.inf
    active: int = -1
    trace: list[float] | None = None

    def record(self, fitness: float, active: int, optimum_value: float) -> float:
        if self.fe_used >= self.fe_max:
            raise BudgetExhausted("evaluation budget exhausted")
        if active != self.active:
            self.best_so_far = math.inf
            self.active = active
        if fitness < self.best_so_far:
            self.best_so_far = fitness
        err = self.best_so_far - optimum_value
        if err < 0.0:
            err = 0.0
        self.error_sum += err
        self.fe_used += 1
        if self.trace is not None:
            self.trace.append(err)
        return err


def evaluate(instance: DynamicInstance, x, fe: int, rng: np.random.Generator,
             ledger: EvaluationLedger | None = None) -> float:
    """Observed fitness of a single point at evaluation number ``fe``."""
    if fe >= instance.fe_max:
        raise BudgetExhausted(f"fe={fe} >= fe_max={instance.fe_max}")
    k = active_index(instance, fe)
    prob = instance.sub_problems[k]
    f = float(prob(np.asarray(x, dtype=float)[None, :])[0])
    if instance.noise.sigma0 > 0:
        f += float(instance.sigma(fe)) * float(rng.standard_normal())
    if ledger is not None:
        ledger.record(f, k, prob.optimum_value)
    return f


class DynamicRun:
    """One optimisation run on an instance: owns the ledger and the noise stream.

    ``evaluate`` takes a batch of rows.  When the batch is larger than the
    remaining budget only the leading rows are evaluated and the rest come back
    as ``inf``; ``exhausted`` then turns true.
    """

    def __init__(self, instance: DynamicInstance, rng: np.random.Generator, keep_trace: bool = False):
        self.instance = instance
        self.rng = rng
        self.ledger = EvaluationLedger(instance.fe_max, trace=[] if keep_trace else None)
        self.lower = instance.lower
        self.upper = instance.upper
        self.dim = instance.dim
        self.fe_max = instance.fe_max

    @property
    def fe(self) -> int:
        return self.ledger.fe_used

    @property
    def remaining(self) -> int:
        return self.fe_max - self.ledger.fe_used

    @property
    def exhausted(self) -> bool:
        return self.ledger.fe_used >= self.fe_max

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        if self.remaining <= 0:
            raise BudgetExhausted("evaluation budget exhausted")
        m = min(n, self.remaining)
        inst = self.instance
        fes = np.arange(self.fe, self.fe + m)
        if len(inst.sub_problems) == 1:
            act = np.zeros(m, dtype=int)
        else:
            order = np.asarray(inst.switch.order)
            act = order[(fes // inst.switch.period_fe) % len(order)]
        out = np.full(n, np.inf)
        vals = np.empty(m)
        for k in np.unique(act):
            sel = act == k
            vals[sel] = inst.sub_problems[k](X[:m][sel])
        if inst.noise.sigma0 > 0:
            vals = vals + inst.sigma(fes) * self.rng.standard_normal(m)
        opt = [p.optimum_value for p in inst.sub_problems]
        record = self.ledger.record
        for v, k in zip(vals.tolist(), act.tolist()):
            record(v, k, opt[k])
        out[:m] = vals
        return out

    def offline_error(self) -> float:
        return offline_error(self.ledger)


def offline_error(ledger: EvaluationLedger) -> float:
    if ledger.fe_used < 1:
        raise ValueError("offline error of an empty ledger is undefined")
    return ledger.error_sum / ledger.fe_used


def random_baseline(instance: DynamicInstance, seed: int) -> float:
    """Offline error of best-of-100 uniform samples drawn at the start of every epoch.

    Samples come from ``np.random.default_rng(seed)``, one ``uniform(lower,
    upper, size=(100, D))`` call per epoch in schedule order, evaluated without
    noise.
    """
    rng = np.random.default_rng(seed)
    lo, hi = instance.lower, instance.upper
    total = 0.0
    for start, stop, k in instance.epochs():
        prob = instance.sub_problems[k]
        pts = rng.uniform(lo, hi, size=(RANDOM_SAMPLES, instance.dim))
        err = max(float(np.min(prob(pts))) - prob.optimum_value, 0.0)
        total += err * (stop - start)
    return total / instance.fe_max


def normalized_performance(e_off: float, e_rand: float) -> float:
    if e_rand <= 0:
        raise ValueError("random baseline error is zero: degenerate instance")
    return e_off / e_rand


# ---------------------------------------------------------------------------
# suite generation
# ---------------------------------------------------------------------------

TEST_LAYOUT = (("PureNoise", 14), ("LandscapeSwitch", 10), ("Hybrid", 8))
TRAIN_LAYOUT = (("PureNoise", 28), ("LandscapeSwitch", 20), ("Hybrid", 16))


def _base(rng, fid, dim, lower, upper, scale, blend=None) -> BaseFunction:
    lo = np.full(dim, lower)
    hi = np.full(dim, upper)
    shift = rng.uniform(0.8 * lo, 0.8 * hi)
    return BaseFunction(
        id=fid,
        dim=dim,
        lower=tuple(lo.tolist()),
        upper=tuple(hi.tolist()),
        shift=tuple(float(v) for v in shift),
        scale=float(scale),
        blend=blend,
    )


def _make_instance(rng, iid, category, dim, fe_max, period_fe, lower, upper, allow_blend):
    def sub(fid, scale):
        blend = None
        if allow_blend and rng.random() < 0.5:
            other = str(rng.choice([f for f in FUNCTION_IDS if f != fid]))
            blend = (other, float(np.round(rng.uniform(0.2, 0.8), 6)))
        return _base(rng, fid, dim, lower, upper, scale, blend)

    if category == "PureNoise":
        fids = [str(rng.choice(FUNCTION_IDS))]
    else:
        k = int(rng.integers(2, 5))
        fids = [str(f) for f in rng.choice(FUNCTION_IDS, size=k, replace=False)]
    scales = [1.0] if len(fids) == 1 else [float(10.0 ** rng.uniform(-1, 1)) for _ in fids]
    subs = tuple(sub(f, s) for f, s in zip(fids, scales))
    if category == "LandscapeSwitch":
        noise = NoiseSchedule(0.0, 0.0)
    else:
        noise = NoiseSchedule(float(10.0 ** rng.uniform(-2, -0.5)), float(rng.uniform(0.5, 2.0)))
    period = max(1, int(period_fe * rng.choice([0.5, 1.0, 2.0])))
    return DynamicInstance(
        id=iid,
        sub_problems=subs,
        switch=SwitchSchedule(period, tuple(range(len(subs)))),
        noise=noise,
        fe_max=fe_max,
        category=category,
        seed=int(rng.integers(0, 2**63 - 1)),
    )


def _layout(total: int, base: Sequence[tuple[str, int]]) -> list[str]:
    # scale the canonical category split to ``total`` while keeping every category
    full = sum(n for _, n in base)
    counts = [max(1, round(n * total / full)) for _, n in base]
    counts[0] += total - sum(counts)
    return [c for (c, _), n in zip(base, counts) for _ in range(n)]


def make_suite(seed: int, *, dim: int = 10, fe_max: int = 25_000, period_fe: int | None = None,
               n_train: int = 64, n_test: int = 32, lower: float = -5.0, upper: float = 5.0,
               ) -> tuple[list[DynamicInstance], list[DynamicInstance]]:
    """Deterministic train/test split of dynamic instances.

    With the default 32 test instances the split is f1-f14 PureNoise, f15-f24
    LandscapeSwitch and f25-f32 Hybrid.  Training sub-problems may be blends of
    two base functions; test sub-problems never are.
    """
    if period_fe is None:
        period_fe = max(1, fe_max // 10)
    rng = np.random.default_rng(seed)
    test_cats = _layout(n_test, TEST_LAYOUT) if n_test != 32 else [c for c, n in TEST_LAYOUT for _ in range(n)]
    train_cats = _layout(n_train, TRAIN_LAYOUT)
    test = [
        _make_instance(rng, f"f{i + 1}", cat, dim, fe_max, period_fe, lower, upper, allow_blend=False)
        for i, cat in enumerate(test_cats)
    ]
    train = [
        _make_instance(rng, f"t{i + 1}", cat, dim, fe_max, period_fe, lower, upper, allow_blend=True)
        for i, cat in enumerate(train_cats)
    ]
    test_keys = {_param_key(t) for t in test}
    if any(_param_key(t) in test_keys for t in train):
        raise RuntimeError("train and test instances collided")
    return train, test


def _param_key(inst: DynamicInstance) -> str:
    d = inst.to_dict()
    d.pop("id")
    d.pop("seed")
    return json.dumps(d, sort_keys=True)


def suite_to_dict(train: Iterable[DynamicInstance], test: Iterable[DynamicInstance], seed: int | None = None) -> dict:
    return {
        "format": "metado-suite/1",
        "seed": seed,
        "train": [t.to_dict() for t in train],
        "test": [t.to_dict() for t in test],
    }


def suite_from_dict(d: dict) -> tuple[list[DynamicInstance], list[DynamicInstance]]:
    if d.get("format") != "metado-suite/1":
        raise ValueError(f"unsupported suite format {d.get('format')!r}")
    return ([DynamicInstance.from_dict(t) for t in d["train"]],
            [DynamicInstance.from_dict(t) for t in d["test"]])


def write_suite(path, train, test, seed: int | None = None) -> None:
    Path(path).write_text(json.dumps(suite_to_dict(train, test, seed), indent=1))


def read_suite(path) -> tuple[list[DynamicInstance], list[DynamicInstance]]:
    return suite_from_dict(json.loads(Path(path).read_text()))
