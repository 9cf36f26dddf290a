"""Bounded particle swarm optimizer with penalty-based constraint handling."""

import logging

import numpy as np

from config.config import PsoHyperparams

logger = logging.getLogger(__name__)


def spacing_penalty(X, delta, counts, bounds=None):
    """
    Spacing/boundary violation of a flattened layout, or of every row of a batch.

    Each waveguide group is sorted before its gaps are measured; the penalty is
    Σ max(0, Δ − gap) plus the total overshoot beyond `bounds`. A 1-D `X` gives a
    float, a 2-D `X` one penalty per row.
    """
    X = np.asarray(X, dtype=float)
    batch = np.atleast_2d(X)
    penalty = np.zeros(batch.shape[0])
    start = 0
    for count in counts:
        group = np.sort(batch[:, start:start + count], axis=-1)
        start += count
        penalty += np.clip(delta - np.diff(group, axis=-1), 0.0, None).sum(axis=-1)
    if bounds is not None:
        lo, hi = bounds
        penalty += np.clip(lo - batch, 0.0, None).sum(axis=-1) + np.clip(batch - hi, 0.0, None).sum(axis=-1)
    return float(penalty[0]) if X.ndim == 1 else penalty


def spread_groups(X, delta, counts, bounds):
    """Sorts each waveguide group and spreads it to Δ spacing inside `bounds`."""
    lo, hi = bounds
    out = np.array(X, dtype=float)
    start = 0
    for count in counts:
        group = np.sort(out[start:start + count])
        for n in range(1, count):
            group[n] = max(group[n], group[n - 1] + delta)
        overflow = group[-1] - hi
        if overflow > 0.0:
            group -= overflow
        group = np.clip(group, lo, hi)
        out[start:start + count] = group
        start += count
    return out


class ParticleSwarmOptimizer:
    """
    Maximizes a fitness over a box with inertia-weighted PSO.

    The optimizer owns its RNG; use one instance per thread.
    """

    def __init__(self, hyperparams: PsoHyperparams = None, rng_seed=None):
        self.hp = hyperparams or PsoHyperparams()
        self.rng = np.random.default_rng(rng_seed)

    def optimize(self, fitness, dimension, bounds, initial=None, counts=None, delta=None, evaluate=map):
        """
        Runs the swarm.

        Args:
            fitness: callable position -> finite scalar (maximized).
            dimension: D, the length of a position.
            bounds: (lo, hi) applied to every coordinate.
            initial: optional warm-start position used as particle 0.
            counts, delta: waveguide grouping; random particles are sorted and
                spread to Δ spacing per group when given.
            evaluate: map-like callable used for fitness evaluation of a swarm.

        Returns:
            tuple[np.ndarray, np.ndarray]: global best position and the best
            fitness after initialization followed by one entry per iteration.
        """
        hp = self.hp
        lo, hi = (float(b) for b in bounds)
        width = hi - lo
        v_max = hp.v_max_frac * width

        X = self.rng.uniform(lo, hi, size=(hp.swarm_size, dimension))
        if counts is not None and delta is not None:
            X = np.vstack([spread_groups(x, delta, counts, (lo, hi)) for x in X])
        if initial is not None:
            X[0] = np.clip(np.asarray(initial, dtype=float), lo, hi)
        V = self.rng.uniform(-v_max, v_max, size=X.shape)

        fit = np.fromiter(evaluate(fitness, X), dtype=float, count=hp.swarm_size)
        personal, personal_fit = X.copy(), fit.copy()
        best = int(np.argmax(fit))
        g_best, g_fit = X[best].copy(), float(fit[best])
        history = [g_fit]

        for _ in range(hp.max_iterations):
            beta1 = self.rng.uniform(0.0, 1.0, size=(hp.swarm_size, 1))
            beta2 = self.rng.uniform(0.0, 1.0, size=(hp.swarm_size, 1))
            V = hp.inertia * V + hp.c1 * beta1 * (personal - X) + hp.c2 * beta2 * (g_best - X)
            V = np.clip(V, -v_max, v_max)
            X = np.clip(X + V, lo, hi)

            fit = np.fromiter(evaluate(fitness, X), dtype=float, count=hp.swarm_size)
            improved = fit > personal_fit
            personal[improved] = X[improved]
            personal_fit[improved] = fit[improved]
            best = int(np.argmax(personal_fit))
            if personal_fit[best] > g_fit:
                g_best, g_fit = personal[best].copy(), float(personal_fit[best])
            history.append(g_fit)

        logger.debug("PSO finished: best fitness %.6f", g_fit)
        return g_best, np.asarray(history)


def pso_optimize(fitness, dimension, bounds, hyperparams: PsoHyperparams = None, rng_seed=None, **kwargs):
    """Functional front end of `ParticleSwarmOptimizer.optimize`."""
    return ParticleSwarmOptimizer(hyperparams, rng_seed).optimize(fitness, dimension, bounds, **kwargs)
