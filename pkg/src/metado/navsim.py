"""Moving-obstacle path planning, re-solved every frame with the same optimiser stack.

Each frame the vehicle's remaining route (start -> S-1 free waypoints -> goal)
is optimised for a fixed number of evaluations under a penalised-length
objective that looks one frame ahead at obstacle motion.  The vehicle then
advances a fixed distance along the best route and the obstacles move.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .dynabench import BudgetExhausted
from .mdp import HyperBounds, Wiring
from .nbnc import DEFAULT_FOLLOW
from .policy import PolicyParams
from .ppo import FIXED_PSO, Episode, FixedController, PolicyController, rng_streams

ARENA = 500.0
MAX_FRAMES = 500
FE_PER_FRAME = 1000
STEP_LENGTH = 10.0
SEGMENTS = {1: 4, 2: 6, 3: 10, 4: 4, 5: 6, 6: 10}
MODES = ("Consistent", "Random")


@dataclass
class Obstacle:
    center: np.ndarray
    radius: float
    velocity: np.ndarray
    mode: str = "Consistent"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown obstacle mode {self.mode!r}")

    def predicted(self) -> np.ndarray:
        return self.center + self.velocity

    def advance(self, rng: np.random.Generator, arena: float = ARENA) -> None:
        if self.mode == "Random":
            speed = float(np.hypot(*self.velocity))
            heading = rng.uniform(0.0, 2.0 * math.pi)
            self.velocity = speed * np.array([math.cos(heading), math.sin(heading)])
        c = self.center + self.velocity
        lo, hi = self.radius, arena - self.radius
        for d in range(2):
            if c[d] < lo:
                c[d] = 2 * lo - c[d]
                self.velocity[d] = -self.velocity[d]
            elif c[d] > hi:
                c[d] = 2 * hi - c[d]
                self.velocity[d] = -self.velocity[d]
        self.center = np.clip(c, lo, hi)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "radius": self.radius,
                "velocity": self.velocity.tolist(), "mode": self.mode}

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        return cls(np.array(d["center"]), float(d["radius"]), np.array(d["velocity"]), d["mode"])


@dataclass
class Scenario:
    case_id: int
    start: np.ndarray
    goal: np.ndarray
    goal_radius: float
    segments: int
    obstacles: list[Obstacle]
    arena: float = ARENA
    max_frames: int = MAX_FRAMES
    fe_per_frame: int = FE_PER_FRAME
    step_length: float = STEP_LENGTH
    clearance: float = 10.0
    seed: int = 0

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.segments < 1:
            raise ValueError("need at least one segment")

    @property
    def dim(self) -> int:
        return 2 * (self.segments - 1)

    @property
    def penalty(self) -> float:
        return 10.0 * self.arena * math.sqrt(2.0)

    def copy(self) -> "Scenario":
        return replace(self, start=self.start.copy(), goal=self.goal.copy(),
                       obstacles=[Obstacle(o.center.copy(), o.radius, o.velocity.copy(), o.mode)
                                  for o in self.obstacles])

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id, "start": self.start.tolist(), "goal": self.goal.tolist(),
            "goal_radius": self.goal_radius, "segments": self.segments,
            "obstacles": [o.to_dict() for o in self.obstacles], "arena": self.arena,
            "max_frames": self.max_frames, "fe_per_frame": self.fe_per_frame,
            "step_length": self.step_length, "clearance": self.clearance, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["obstacles"] = [Obstacle.from_dict(o) for o in d["obstacles"]]
        return cls(**d)


def make_scenario(case_id: int, seed: int, n_obstacles: int = 10) -> Scenario:
    """Cases 1-3: constant-velocity obstacles; 4-6: random headings. 4/6/10 segments."""
    if case_id not in SEGMENTS:
        raise ValueError("case_id must be 1..6")
    rng = np.random.default_rng([seed, case_id])
    mode = "Consistent" if case_id <= 3 else "Random"
    start = np.array([40.0, 40.0])
    goal = np.array([460.0, 460.0])
    obstacles = []
    while len(obstacles) < n_obstacles:
        r = float(rng.uniform(15.0, 35.0))
        c = rng.uniform(r, ARENA - r, size=2)
        if min(np.linalg.norm(c - start), np.linalg.norm(c - goal)) < r + 60.0:
            continue
        speed = float(rng.uniform(1.0, 4.0))
        heading = rng.uniform(0.0, 2.0 * math.pi)
        obstacles.append(Obstacle(c, r, speed * np.array([math.cos(heading), math.sin(heading)]), mode))
    return Scenario(case_id, start, goal, 15.0, SEGMENTS[case_id], obstacles, seed=seed)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def _segment_hits(a: np.ndarray, b: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """(P, S, M) flags: segment a->b passes within radius of center."""
    ax, ay = a[..., 0, None], a[..., 1, None]
    dx, dy = b[..., 0, None] - ax, b[..., 1, None] - ay
    cx, cy = centers[:, 0] - ax, centers[:, 1] - ay
    L2 = dx * dx + dy * dy
    t = np.clip((cx * dx + cy * dy) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    ex, ey = cx - t * dx, cy - t * dy
    return ex * ex + ey * ey <= radii * radii


def path_points(genome: np.ndarray, start: np.ndarray, goal: np.ndarray) -> np.ndarray:
    g = np.atleast_2d(genome)
    wp = g.reshape(g.shape[0], -1, 2)
    n = g.shape[0]
    return np.concatenate([np.broadcast_to(start, (n, 1, 2)), wp, np.broadcast_to(goal, (n, 1, 2))], axis=1)


def obstacle_discs(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Current and one-frame-ahead obstacle discs (inflated by the clearance), stacked."""
    if not scenario.obstacles:
        return np.empty((0, 2)), np.empty(0)
    r = np.array([o.radius for o in scenario.obstacles]) + scenario.clearance
    now = np.stack([o.center for o in scenario.obstacles])
    ahead = np.stack([o.predicted() for o in scenario.obstacles])
    return np.vstack([now, ahead]), np.concatenate([r, r])


def path_fitness(genome: np.ndarray, scenario: Scenario, position: np.ndarray | None = None,
                 discs: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Route length plus a penalty per segment-obstacle conflict (now or one frame ahead)."""
    pos = scenario.start if position is None else position
    pts = path_points(genome, pos, scenario.goal)
    a, b = pts[:, :-1], pts[:, 1:]
    length = np.sqrt(np.sum((b - a) ** 2, axis=-1)).sum(axis=-1)
    if not scenario.obstacles:
        return length
    centers, radii = obstacle_discs(scenario) if discs is None else discs
    m = len(scenario.obstacles)
    hits = _segment_hits(a, b, centers, radii)
    conflicts = hits[..., :m] | hits[..., m:]
    return length + scenario.penalty * conflicts.sum(axis=(-1, -2))


class PathProblem:
    """Per-frame objective with its own hard evaluation budget."""

    def __init__(self, scenario: Scenario, position: np.ndarray, fe_max: int):
        self.scenario = scenario
        self.position = position
        self.fe_max = fe_max
        self.fe = 0
        self.dim = scenario.dim
        self.lower = np.zeros(self.dim)
        self.upper = np.full(self.dim, scenario.arena)
        self.discs = obstacle_discs(scenario)

    @property
    def remaining(self) -> int:
        return self.fe_max - self.fe

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.remaining <= 0:
            raise BudgetExhausted("frame budget exhausted")
        m = min(X.shape[0], self.remaining)
        out = np.full(X.shape[0], np.inf)
        out[:m] = path_fitness(X[:m], self.scenario, self.position, self.discs)
        self.fe += m
        return out


# ---------------------------------------------------------------------------
# episode loop
# ---------------------------------------------------------------------------

@dataclass
class NavOptimizer:
    """Fixed-parameter NBNC-PSO (``params is None``) or the meta-controlled one."""

    params: PolicyParams | None = None
    wiring: Wiring = Wiring()
    bounds: HyperBounds = HyperBounds()
    hyper: tuple[float, float, float] = FIXED_PSO
    pop_size: int = 20
    follow_factor: float = DEFAULT_FOLLOW

    @property
    def name(self) -> str:
        return "fixed-pso" if self.params is None else "meta"

    def controller(self):
        if self.params is None:
            return FixedController(*self.hyper)
        return PolicyController(self.params, self.wiring, self.bounds, greedy=True)


@dataclass
class FrameOutcome:
    frame: int
    x: float
    y: float
    best_fitness: float
    fe_used: int


@dataclass
class EpisodeResult:
    success: bool
    d_target: float
    t_step: int
    frames: list[FrameOutcome] = field(default_factory=list)


def _advance(points: np.ndarray, dist: float) -> tuple[np.ndarray, int]:
    """Move ``dist`` along the polyline; returns the new point and how many waypoints were passed."""
    pos = points[0]
    for k, nxt in enumerate(points[1:]):
        seg = nxt - pos
        L = float(np.hypot(*seg))
        if L >= dist:
            return (pos + seg * (dist / L) if L > 0 else pos), k
        dist -= L
        pos = nxt
    return pos, len(points) - 1


def _collides(pos: np.ndarray, obstacles: Iterable[Obstacle]) -> bool:
    return any(np.linalg.norm(pos - o.center) < o.radius for o in obstacles)


def step_frame(state: Scenario, position: np.ndarray, optimizer: NavOptimizer, frame: int,
               warm: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, FrameOutcome]:
    """Optimise the route for one frame and move the vehicle and obstacles.

    Mutates the obstacles in ``state``; returns (new position, best genome, outcome).
    """
    streams = rng_streams(state.seed, 3, state.case_id, frame)
    problem = PathProblem(state, position, state.fe_per_frame)
    ep = Episode(problem, optimizer.pop_size, streams, optimizer.wiring, optimizer.follow_factor,
                 seed_positions=warm)
    ctrl = optimizer.controller()
    while not ep.done:
        ep.step(ctrl)
    best = ep.swarm.gbest.copy()
    pts = path_points(best, position, state.goal)[0]
    new_pos, passed = _advance(pts, state.step_length)
    # waypoints already behind the vehicle collapse onto it for the next warm start
    wp = best.reshape(-1, 2)
    wp[:min(passed, len(wp))] = new_pos
    for o in state.obstacles:
        o.advance(streams["noise"], state.arena)
    return new_pos, best, FrameOutcome(frame, float(new_pos[0]), float(new_pos[1]), ep.swarm.gbest_f, problem.fe)


def run_episode(scenario: Scenario, optimizer: NavOptimizer) -> EpisodeResult:
    """Frames until the goal is reached, a collision happens, or the frame limit."""
    state = scenario.copy()
    pos = state.start.copy()
    frames: list[FrameOutcome] = []
    warm = None
    d = float(np.linalg.norm(pos - state.goal))
    if d <= state.goal_radius:
        return EpisodeResult(True, d, 0, frames)
    for frame in range(state.max_frames):
        pos, warm, out = step_frame(state, pos, optimizer, frame, warm)
        frames.append(out)
        d = float(np.linalg.norm(pos - state.goal))
        if _collides(pos, state.obstacles):
            return EpisodeResult(False, d, frame + 1, frames)
        if d <= state.goal_radius:
            return EpisodeResult(True, d, frame + 1, frames)
    return EpisodeResult(False, d, state.max_frames, frames)


def aggregate(results: list[EpisodeResult]) -> tuple[float, float, float]:
    if not results:
        raise ValueError("no episodes to aggregate")
    sr = sum(r.success for r in results) / len(results)
    return sr, float(np.mean([r.d_target for r in results])), float(np.mean([r.t_step for r in results]))


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def write_scenarios(path, scenarios: list[Scenario]) -> None:
    Path(path).write_text(json.dumps({"format": "metado-scenarios/1",
                                      "scenarios": [s.to_dict() for s in scenarios]}, indent=1))


def read_scenarios(path) -> list[Scenario]:
    d = json.loads(Path(path).read_text())
    if d.get("format") != "metado-scenarios/1":
        raise ValueError(f"unsupported scenario format {d.get('format')!r}")
    return [Scenario.from_dict(s) for s in d["scenarios"]]


def write_frame_trace(path, result: EpisodeResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "best_fitness"])
        for f in result.frames:
            w.writerow([f.frame, f.x, f.y, f.best_fitness])
