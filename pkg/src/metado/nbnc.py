"""Nearest-better-neighbour clustering PSO with an elite archive.

The swarm is stored as parallel arrays (one row per particle).  Any object
with ``lower``, ``upper`` and a batch ``evaluate(X)`` can act as the problem;
``dynabench.DynamicRun`` and ``navsim.PathProblem`` both qualify.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

EPS = 1e-8
ARCHIVE_SIZE = 5
VELOCITY_FRACTION = 0.2
DEFAULT_FOLLOW = 2.0


class Particle(NamedTuple):
    x: np.ndarray
    v: np.ndarray
    f: float
    pbest: np.ndarray
    pbest_f: float
    stagnation_p: int


@dataclass
class Swarm:
    x: np.ndarray
    v: np.ndarray
    f: np.ndarray
    pbest: np.ndarray
    pbest_f: np.ndarray
    stagnation_p: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    gbest: np.ndarray = None
    gbest_f: float = np.inf
    stagnation_g: int = 0
    species: list[np.ndarray] = field(default_factory=list)
    generation: int = 0

    def __post_init__(self):
        if self.gbest is None:
            i = int(np.argmin(self.pbest_f))
            self.gbest = self.pbest[i].copy()
            self.gbest_f = float(self.pbest_f[i])
        if not self.species:
            self.species = [np.arange(self.n)]

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def diameter(self) -> float:
        return float(np.sqrt(np.sum((self.upper - self.lower) ** 2)))

    def particle(self, i: int) -> Particle:
        return Particle(self.x[i], self.v[i], float(self.f[i]), self.pbest[i],
                        float(self.pbest_f[i]), int(self.stagnation_p[i]))

    def species_of(self) -> np.ndarray:
        lab = np.empty(self.n, dtype=int)
        for j, members in enumerate(self.species):
            lab[members] = j
        return lab

    def sbest_index(self) -> np.ndarray:
        """Per species, the member with the lowest personal-best fitness."""
        return np.array([m[np.argmin(self.pbest_f[m])] for m in self.species], dtype=int)

    def sbest_positions(self) -> np.ndarray:
        """Row i holds the social attractor of particle i (its species' best pbest)."""
        out = np.empty_like(self.x)
        for m, b in zip(self.species, self.sbest_index()):
            out[m] = self.pbest[b]
        return out

    def refresh_gbest(self) -> bool:
        """Re-derive gbest from pbests; returns True on strict improvement."""
        i = int(np.argmin(self.pbest_f))
        improved = self.pbest_f[i] < self.gbest_f
        self.gbest = self.pbest[i].copy()
        self.gbest_f = float(self.pbest_f[i])
        return bool(improved)

    def copy(self) -> "Swarm":
        return Swarm(
            x=self.x.copy(), v=self.v.copy(), f=self.f.copy(), pbest=self.pbest.copy(),
            pbest_f=self.pbest_f.copy(), stagnation_p=self.stagnation_p.copy(),
            lower=self.lower, upper=self.upper, gbest=self.gbest.copy(), gbest_f=self.gbest_f,
            stagnation_g=self.stagnation_g, species=[s.copy() for s in self.species],
            generation=self.generation,
        )


def init_swarm(problem, n: int, rng: np.random.Generator, seed_positions: np.ndarray | None = None) -> Swarm:
    """Uniform initial swarm with zero velocity; optional rows replace the first positions."""
    if n < 2:
        raise ValueError("population size must be at least 2")
    lo = np.asarray(problem.lower, dtype=float)
    hi = np.asarray(problem.upper, dtype=float)
    x = rng.uniform(lo, hi, size=(n, lo.size))
    if seed_positions is not None:
        seed_positions = np.atleast_2d(seed_positions)[:n]
        x[: len(seed_positions)] = np.clip(seed_positions, lo, hi)
    f = problem.evaluate(x)
    return Swarm(
        x=x, v=np.zeros_like(x), f=f.copy(), pbest=x.copy(), pbest_f=f.copy(),
        stagnation_p=np.zeros(n, dtype=int), lower=lo, upper=hi,
    )


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def _rank(fitness: np.ndarray) -> np.ndarray:
    n = len(fitness)
    order = np.lexsort((np.arange(n), fitness))
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    return rank


def cluster_nbnc(positions: np.ndarray, fitness: np.ndarray, follow_factor: float = DEFAULT_FOLLOW,
                 ) -> list[np.ndarray]:
    """Raw species from nearest-better links.

    Every particle but the best links to its nearest strictly better particle
    (fitness ties go to the lower index).  Links longer than ``follow_factor``
    times the mean nearest-neighbour distance are cut; species are the trees
    that remain.  Species come back best-seed first, members in index order.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    fitness = np.asarray(fitness, dtype=float)
    n = len(fitness)
    if n == 1:
        return [np.array([0])]
    dist = cdist(positions, positions)
    rank = _rank(fitness)
    off = dist + np.diag(np.full(n, np.inf))
    mean_nn = off.min(axis=1).mean()
    better = rank[None, :] < rank[:, None]
    db = np.where(better, dist, np.inf)
    parent = np.argmin(db, axis=1)
    link_len = db[np.arange(n), parent]
    linked = np.isfinite(link_len) & (link_len <= follow_factor * mean_nn)
    root = np.arange(n)
    for i in np.argsort(rank):
        if linked[i]:
            root[i] = root[parent[i]]
    seeds = sorted(set(root.tolist()), key=lambda r: rank[r])
    return [np.flatnonzero(root == s) for s in seeds]


def _seed(members: np.ndarray, rank: np.ndarray) -> int:
    return int(members[np.argmin(rank[members])])


def merge_species(raw: list[np.ndarray], positions: np.ndarray, fitness: np.ndarray) -> list[np.ndarray]:
    """Fold dominated raw species into their dominators until nothing changes.

    Species B dominates A when B's seed is better than A's seed and A's seed
    is strictly closer to B's seed than B's farthest member.  Each round merges
    the dominated species with the worst seed into its nearest dominator.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    rank = _rank(np.asarray(fitness, dtype=float))
    species = [np.sort(np.asarray(s, dtype=int)) for s in raw]
    while len(species) > 1:
        seeds = np.array([_seed(s, rank) for s in species])
        radius = np.array([np.max(np.linalg.norm(positions[s] - positions[b], axis=1))
                           for s, b in zip(species, seeds)])
        seed_d = cdist(positions[seeds], positions[seeds])
        dom = (rank[seeds][None, :] < rank[seeds][:, None]) & (seed_d < radius[None, :])
        victims = np.flatnonzero(dom.any(axis=1))
        if victims.size == 0:
            break
        a = victims[np.argmax(rank[seeds[victims]])]
        cands = np.flatnonzero(dom[a])
        key = np.lexsort((rank[seeds[cands]], seed_d[a, cands]))
        b = cands[key[0]]
        species[b] = np.sort(np.concatenate([species[b], species[a]]))
        del species[a]
    seeds = [_seed(s, rank) for s in species]
    return [species[i] for i in np.argsort([rank[s] for s in seeds])]


def recluster(swarm: Swarm, follow_factor: float = DEFAULT_FOLLOW) -> list[np.ndarray]:
    raw = cluster_nbnc(swarm.x, swarm.f, follow_factor)
    swarm.species = merge_species(raw, swarm.x, swarm.f)
    return swarm.species


# ---------------------------------------------------------------------------
# one generation
# ---------------------------------------------------------------------------

def pso_step(swarm: Swarm, h: np.ndarray, problem, rng: np.random.Generator,
             follow_factor: float = DEFAULT_FOLLOW) -> Swarm:
    """Move every particle with its own (w, c1, c2), evaluate, update bests, re-cluster.

    Mutates and returns ``swarm``.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (swarm.n, 3):
        raise ValueError(f"hyper-parameter matrix must be ({swarm.n}, 3), got {h.shape}")
    w, c1, c2 = h[:, 0:1], h[:, 1:2], h[:, 2:3]
    x = swarm.x
    r1 = rng.random(x.shape)
    r2 = rng.random(x.shape)
    social = swarm.sbest_positions()
    v = w * swarm.v + c1 * r1 * (swarm.pbest - x) + c2 * r2 * (social - x)
    vmax = VELOCITY_FRACTION * (swarm.upper - swarm.lower)
    v = np.clip(v, -vmax, vmax)
    xn = x + v
    out = (xn < swarm.lower) | (xn > swarm.upper)
    xn = np.clip(xn, swarm.lower, swarm.upper)
    v[out] = 0.0

    f = problem.evaluate(xn)
    swarm.x, swarm.v, swarm.f = xn, v, f
    better = f < swarm.pbest_f
    swarm.pbest[better] = xn[better]
    swarm.pbest_f[better] = f[better]
    swarm.stagnation_p = np.where(better, 0, swarm.stagnation_p + 1)
    if swarm.refresh_gbest():
        swarm.stagnation_g = 0
    else:
        swarm.stagnation_g += 1
    swarm.generation += 1
    recluster(swarm, follow_factor)
    return swarm


# ---------------------------------------------------------------------------
# elite archive
# ---------------------------------------------------------------------------

@dataclass
class ArchiveEntry:
    position: np.ndarray
    f_prev: float
    f_cur: float
    generation: int


class EliteArchive:
    """Per-generation best solutions of the most recent generations."""

    def __init__(self, capacity: int = ARCHIVE_SIZE):
        self.entries: deque[ArchiveEntry] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def best(self) -> ArchiveEntry:
        return min(self.entries, key=lambda e: e.f_cur)


def archive_update(archive: EliteArchive, swarm: Swarm) -> EliteArchive:
    finite = np.isfinite(swarm.f)
    if not finite.any():
        return archive
    i = int(np.argmin(np.where(finite, swarm.f, np.inf)))
    f = float(swarm.f[i])
    archive.entries.append(ArchiveEntry(swarm.x[i].copy(), f, f, swarm.generation))
    return archive


def archive_ratio(f_new: np.ndarray, f_old: np.ndarray) -> float:
    num = np.maximum(f_new, EPS) + EPS
    den = np.maximum(f_old, EPS) + EPS
    return float(np.mean(num / den))


def archive_reevaluate(archive: EliteArchive, problem) -> float:
    """Re-evaluate every entry under the current environment; return the drift ratio.

    Entries the budget could not cover keep their old values and are left out
    of the ratio.
    """
    if len(archive) == 0:
        return 1.0
    entries = list(archive.entries)
    f_new = problem.evaluate(np.stack([e.position for e in entries]))
    done = np.isfinite(f_new)
    if not done.any():
        return 1.0
    f_old = np.array([e.f_cur for e in entries])
    ratio = archive_ratio(f_new[done], f_old[done])
    for e, fn, ok in zip(entries, f_new, done):
        if ok:
            e.f_prev, e.f_cur = e.f_cur, float(fn)
    return ratio


def archive_reinject(swarm: Swarm, archive: EliteArchive) -> Swarm:
    """Overwrite the worst member of each species with the archive's best entry.

    The global-best holder is never overwritten, and a species is only touched
    when the entry is strictly better than its worst member.
    """
    if len(archive) == 0:
        return swarm
    best = archive.best()
    holder = int(np.argmin(swarm.pbest_f))
    for members in swarm.species:
        cand = members[members != holder]
        if cand.size == 0:
            continue
        worst = int(cand[np.argmax(swarm.f[cand])])
        if not best.f_cur < swarm.f[worst]:
            continue
        swarm.x[worst] = best.position
        swarm.v[worst] = 0.0
        swarm.f[worst] = best.f_cur
        swarm.pbest[worst] = best.position
        swarm.pbest_f[worst] = best.f_cur
        swarm.stagnation_p[worst] = 0
    if swarm.refresh_gbest():
        swarm.stagnation_g = 0
    return swarm


# ---------------------------------------------------------------------------
# debugging trace
# ---------------------------------------------------------------------------

TRACE_FIELDS = ("generation", "gbest_f", "n_species", "ratio")


def trace_row(swarm: Swarm, ratio: float) -> dict:
    return {"generation": swarm.generation, "gbest_f": swarm.gbest_f,
            "n_species": len(swarm.species), "ratio": ratio}


def write_trace_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
