"""Random draws shared by the plant sampler and the Hankel generators.

Both training modes draw the initial condition and the perturbations of
trajectory ``index`` in ``episode`` from the same stream, so a generated
trajectory and its sampled counterpart see identical randomness.
"""

import numpy as np


def trajectory_rng(seed, episode, index):
    """Independent stream keyed by (seed, episode, index)."""
    return np.random.default_rng([int(seed), int(episode), int(index)])


class GaussianPerturbation:
    """Exploration noise w(k) ~ N(0, sigma^2 I)."""

    def __init__(self, sigma):
        if sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        self.sigma = float(sigma)

    def sample(self, rng, horizon, m):
        return rng.normal(0.0, 1.0, size=(horizon, m)) * self.sigma


class PoolSampler:
    """Uniform draw from a finite pool of initial conditions.

    With ``unit_scale`` set, the drawn vector is rescaled to that norm; the
    pools used here (historic states, historic extended windows) are subsets of
    linear subspaces, so rescaling keeps a window reachable.
    """

    def __init__(self, pool, unit_scale=None):
        pool = np.asarray(pool, dtype=float)
        if pool.ndim != 2 or pool.shape[0] == 0:
            raise ValueError("initial-condition pool is empty")
        self.pool = pool
        self.unit_scale = unit_scale

    @property
    def dim(self):
        return self.pool.shape[1]

    def __call__(self, rng):
        vec = self.pool[rng.integers(self.pool.shape[0])].copy()
        if self.unit_scale is not None:
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec *= self.unit_scale / norm
        return vec


class BoxSampler:
    """Uniform draw from the box [-scale, scale]^dim."""

    def __init__(self, dim, scale=1.0):
        self.dim = int(dim)
        self.scale = float(scale)

    def __call__(self, rng):
        return rng.uniform(-self.scale, self.scale, size=self.dim)


def make_sampler(kind, pool, scale=1.0):
    """Build an initial-condition sampler by config name.

    Args:
        kind: ``"historic"``, ``"historic_unit"`` or ``"box"``.
        pool: Historic states or windows, one per row.
        scale: Norm for ``historic_unit``, half-width for ``box``.
    """
    if kind == "historic":
        return PoolSampler(pool)
    if kind == "historic_unit":
        return PoolSampler(pool, unit_scale=scale)
    if kind == "box":
        return BoxSampler(np.asarray(pool).shape[1], scale)
    raise ValueError(f"unknown initial-condition sampler {kind!r}")


def draw_condition(seed, episode, index, init_sampler, noise, horizon, m):
    """Draw (initial condition, perturbations) for one trajectory.

    The initial condition is drawn first, then the perturbations, from the
    stream of :func:`trajectory_rng`.
    """
    rng = trajectory_rng(seed, episode, index)
    start = init_sampler(rng)
    return start, noise.sample(rng, horizon, m)
