"""
Waveguide multiplexing: all M waveguides transmit concurrently and baseband
beams {w_k} separate the users. The power-minimization problem under the SE
floor is solved by alternating SCA baseband design with PSO pinching design.
"""

import logging

import numpy as np

from config.config import Settings
from interfaces.geometry import PinchingLayout
from interfaces.solutions import WmSolution
from services.channel import channel_matrix, dense_channel_matrix
from services.convex_core import (
    rates_from_received,
    received_from_beams,
    recover_beams,
    run_sca,
)
from services.pso import ParticleSwarmOptimizer, spacing_penalty
from utils.exceptions import InfeasibleError, InfeasibleGeometryError
from utils.logging_helpers import ExecutionTimer

logger = logging.getLogger(__name__)


def wm_rates(H, beams, sigma2):
    """R_k = log2(1 + |h_kᴴ w_k|² / (Σ_{i≠k} |h_kᴴ w_i|² + σ²))."""
    return rates_from_received(received_from_beams(np.asarray(H), np.asarray(beams)), sigma2)


def wm_se(rates):
    return float(np.sum(rates))


def wm_ee(se, beams, cfg):
    """SE / (Σ ||w_k||² + K P_RF)."""
    power = float(np.sum(np.abs(np.asarray(beams)) ** 2))
    return float(se) / (power + cfg.K * cfg.P_RF)


# ---------------------------------------------------------------------------
# Pinching design
# ---------------------------------------------------------------------------

def swarm_fitness(Xs, beams, users, cfg, eps_se, hp):
    """
    Vectorized fitness F = f_SE − ξ P1 − η P2 for a batch of flattened layouts.

    P1 = Σ_k max(0, γ_k − R_k) + max(0, ε_SE − f_SE) (QoS and SE shortfall);
    P2 = spacing/boundary penalty with each waveguide group sorted.
    """
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    layouts = Xs.reshape(Xs.shape[0], cfg.M, -1)
    H = dense_channel_matrix(users.positions, layouts, cfg)  # (I, K, M)

    received = np.abs(H.conj() @ np.asarray(beams).T) ** 2  # (I, K, K)
    signal = np.diagonal(received, axis1=-2, axis2=-1)
    interference = received.sum(axis=-1) - signal
    rates = np.log2(1.0 + signal / (interference + cfg.sigma2))
    se = rates.sum(axis=-1)

    shortfall = np.clip(cfg.qos[None, :] - rates, 0.0, None).sum(axis=-1) + np.clip(eps_se - se, 0.0, None)

    placement = spacing_penalty(Xs, cfg.spacing, (layouts.shape[-1],) * cfg.M, cfg.bounds)

    return se - hp.xi * shortfall - hp.eta * placement


def pinching_fitness(X, beams, users, cfg, eps_se, hp):
    """Fitness of one flattened layout X (length M*N) at fixed beams."""
    return float(swarm_fitness(np.asarray(X)[None, :], beams, users, cfg, eps_se, hp)[0])


def repair_layout(X, cfg, counts):
    """
    Projects a flattened layout onto the feasible set: sort each waveguide,
    push left-to-right to enforce Δ, then pull back from +L/2 if needed.

    Raises:
        InfeasibleGeometryError: a waveguide cannot hold its PAs at spacing Δ.
    """
    lo, hi = cfg.bounds
    delta = cfg.spacing
    groups = []
    start = 0
    for count in counts:
        group = np.sort(np.asarray(X[start:start + count], dtype=float))
        start += count
        group[0] = max(group[0], lo)
        for n in range(1, count):
            group[n] = max(group[n], group[n - 1] + delta)
        if group[-1] > hi:
            group[-1] = hi
            for n in range(count - 2, -1, -1):
                group[n] = min(group[n], group[n + 1] - delta)
        if group[0] < lo - 1e-12:
            raise InfeasibleGeometryError(f"{count} PAs at spacing {delta:.4g} m do not fit in L={cfg.L} m")
        groups.append(group)
    return PinchingLayout(tuple(groups))


def initial_layout(users, cfg):
    """N PAs per waveguide centered on the median user x-coordinate, spaced Δ."""
    center = float(np.median(users.x))
    offsets = (np.arange(cfg.N) - (cfg.N - 1) / 2.0) * cfg.spacing
    X = np.tile(center + offsets, cfg.M)
    return repair_layout(X, cfg, (cfg.N,) * cfg.M)


def pinching_step(layout, beams, users, cfg, eps_se, hp, seed):
    """One PSO pinching update warm-started from `layout`; always feasible on return."""
    counts = layout.counts
    optimizer = ParticleSwarmOptimizer(hp, seed)

    def evaluate(_fitness, swarm):
        return swarm_fitness(swarm, beams, users, cfg, eps_se, hp)

    X, history = optimizer.optimize(
        lambda x: pinching_fitness(x, beams, users, cfg, eps_se, hp),
        dimension=sum(counts),
        bounds=cfg.bounds,
        initial=layout.flatten(),
        counts=counts,
        delta=cfg.spacing,
        evaluate=evaluate,
    )
    logger.debug("Pinching step: fitness %.6f -> %.6f", history[0], history[-1])
    return repair_layout(X, cfg, counts)


# ---------------------------------------------------------------------------
# Alternating optimization
# ---------------------------------------------------------------------------

def _baseband(users, layout, cfg, eps_se, settings, rng):
    H = channel_matrix(users, layout, cfg, check=False)
    return run_sca(H, cfg.qos, eps_se, cfg.P_max, cfg.sigma2, settings.sca, settings.sdp, rng=rng)


def _beam_hint(users, layout, cfg, error):
    """Beams to steer PSO from a layout whose baseband problem was infeasible."""
    H = channel_matrix(users, layout, cfg, check=False)
    if error.best_effort is None:
        # maximum-ratio beams sharing the full budget equally
        return H / np.linalg.norm(H, axis=1, keepdims=True) * np.sqrt(cfg.P_max / cfg.K)
    beams, _ = recover_beams(H, error.best_effort)
    return beams


def _solution(users, layout, base, cfg, trace):
    H = channel_matrix(users, layout, cfg, check=False)
    rates = wm_rates(H, base.beams, cfg.sigma2)
    se = wm_se(rates)
    return WmSolution(
        layout=layout,
        beams=base.beams,
        rates=rates,
        se=se,
        power=base.power,
        ee=wm_ee(se, base.beams, cfg),
        feasible=base.certified,
        tightness=base.tightness,
        trace=list(trace),
    )


def solve_wm(users, cfg, eps_se, rng_seed, settings: Settings = None, layout=None, optimize_pinching=True):
    """
    Minimizes Σ ||w_k||² subject to the SE floor, QoS floors, power budget and
    PA placement rules by alternating baseband SCA and PSO pinching design.

    A pinching update is kept only if the following baseband solve does not
    raise transmit power. With `optimize_pinching=False` the given layout is
    frozen and only the baseband problem is solved.

    Raises:
        InfeasibleError: no restart produced a feasible baseband solution.
    """
    settings = settings or Settings()
    users.validate(cfg)
    seeds = iter(np.random.SeedSequence(rng_seed).spawn(settings.ao.restarts + settings.ao.max_rounds + 1))
    rng = np.random.default_rng(next(seeds))

    if layout is None:
        layout = initial_layout(users, cfg)
    layout.validate(cfg, check_spacing=optimize_pinching)

    current, current_layout = None, None
    candidate = layout
    for attempt in range(settings.ao.restarts):
        try:
            base = _baseband(users, candidate, cfg, eps_se, settings, rng)
            if not base.certified:
                raise InfeasibleError("extracted beams failed certification")
            current, current_layout = base, candidate
            break
        except InfeasibleError as e:
            if not optimize_pinching:
                raise
            logger.info("Baseband infeasible at restart %d (eps_se=%.4f): %s", attempt, eps_se, e, extra={"eps_se": eps_se})
            hint = _beam_hint(users, candidate, cfg, e)
            candidate = pinching_step(candidate, hint, users, cfg, eps_se, settings.pso, next(seeds))

    if current is None:
        raise InfeasibleError(f"WM infeasible at eps_se={eps_se:.4f} after {settings.ao.restarts} restarts")

    trace = [current.power]
    if optimize_pinching:
        for round_index in range(settings.ao.max_rounds):
            with ExecutionTimer() as timer:
                proposal = pinching_step(current_layout, current.beams, users, cfg, eps_se, settings.pso, next(seeds))
                try:
                    base = _baseband(users, proposal, cfg, eps_se, settings, rng)
                except InfeasibleError:
                    base = None
            if base is None or not base.certified or base.power > current.power:
                logger.debug("AO round %d rejected", round_index, extra={"execution_time_ms": timer.execution_time_ms})
                break
            improvement = (current.power - base.power) / current.power
            current, current_layout = base, proposal
            trace.append(current.power)
            logger.debug(
                "AO round %d accepted: power %.6e W", round_index, current.power,
                extra={"eps_se": eps_se, "execution_time_ms": timer.execution_time_ms},
            )
            if improvement < settings.ao.rel_tolerance:
                break

    return _solution(users, current_layout, current, cfg, trace)
