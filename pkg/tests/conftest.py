import numpy as np
import pytest

from metado import dynabench as db


def sphere(dim=10, shift=None, scale=1.0, lo=-5.0, hi=5.0, fid="sphere"):
    shift = tuple(np.zeros(dim) if shift is None else shift)
    return db.BaseFunction(fid, dim, (lo,) * dim, (hi,) * dim, shift, scale=scale)


def instance(subs, period=100, order=None, sigma0=0.0, growth=0.0, fe_max=1000, category=None, iid="t"):
    if category is None:
        category = "PureNoise" if len(subs) == 1 else ("LandscapeSwitch" if sigma0 == 0 else "Hybrid")
    order = tuple(range(len(subs))) if order is None else tuple(order)
    return db.DynamicInstance(iid, tuple(subs), db.SwitchSchedule(period, order), db.NoiseSchedule(sigma0, growth),
                              fe_max, category, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_swarm(rng, n=None, dim=None, species=True):
    """A structurally valid swarm with arbitrary (possibly degenerate) contents."""
    from metado import nbnc
    n = int(rng.integers(2, 40)) if n is None else n
    dim = int(rng.integers(1, 12)) if dim is None else dim
    lo = rng.uniform(-100, 0, size=dim)
    hi = lo + rng.uniform(1e-3, 200, size=dim)
    x = rng.uniform(lo, hi, size=(n, dim))
    pbest = rng.uniform(lo, hi, size=(n, dim))
    mode = rng.integers(0, 4)
    if mode == 0:
        pbest = x.copy()
    elif mode == 1:
        pbest[: n // 2] = x[: n // 2]
    scale = 10.0 ** rng.uniform(-6, 6)
    f = rng.normal(size=n) * scale
    if rng.random() < 0.2:
        f[:] = f[0]
    pbest_f = np.minimum(f, f - np.abs(rng.normal(size=n)) * scale)
    t_max = 10_000 / n
    sw = nbnc.Swarm(x=x, v=np.zeros_like(x), f=f, pbest=pbest, pbest_f=pbest_f,
                    stagnation_p=rng.integers(0, int(t_max) + 1, size=n), lower=lo, upper=hi)
    if rng.random() < 0.3:
        sw.gbest = x[int(rng.integers(n))].copy()
    sw.stagnation_g = int(rng.integers(0, int(t_max) + 1))
    if species:
        labels = rng.integers(0, max(1, n // 3), size=n)
        sw.species = [np.flatnonzero(labels == k) for k in np.unique(labels)]
    return sw


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
