"""
Waveguide switching: one waveguide serves one user per time slot with all M*N
PAs moved onto it, and users share time equally. The SE-constrained power
minimization splits into per-user channel-gain maximization followed by
water-filling over the resulting gains.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from config.config import PlacementConfig, Settings
from interfaces.geometry import GEOMETRY_TOLERANCE
from interfaces.solutions import WsSolution
from services.channel import channel_terms
from services.convex_core import waterfill_ws
from utils.exceptions import InfeasibleGeometryError
from utils.logging_helpers import ExecutionTimer, track_execution_time

logger = logging.getLogger(__name__)


def select_waveguide(user, cfg):
    """Index of the waveguide closest to the user's y-coordinate; ties go to the smaller index."""
    distances = np.abs(cfg.waveguide_y - float(np.asarray(user, dtype=float)[1]))
    return int(np.argmin(distances))


# ---------------------------------------------------------------------------
# PA placement
# ---------------------------------------------------------------------------

def _terms(x, user, y_m, cfg):
    return channel_terms(user, np.atleast_1d(np.asarray(x, dtype=float)), y_m, cfg, check=False)


def _gain(x, user, y_m, cfg):
    return float(np.abs(np.sum(_terms(x, user, y_m, cfg))))


def _anchors(x_k, count, cfg):
    """Stage A: `count` PAs at spacing Δ centered on x_k, shifted inward to fit ±L/2."""
    lo, hi = cfg.bounds
    span = (count - 1) * cfg.spacing
    if span > hi - lo + GEOMETRY_TOLERANCE:
        raise InfeasibleGeometryError(f"{count} PAs at spacing {cfg.spacing:.4g} m do not fit in L={cfg.L} m")
    start = min(max(x_k - span / 2.0, lo), hi - span)
    return start + np.arange(count) * cfg.spacing


def _offsets(cfg, pc):
    step = cfg.wavelength / pc.resolution_divisor
    reach = int(round(pc.window_wavelengths * pc.resolution_divisor))
    return np.arange(-reach, reach + 1) * step


def _phase_align(anchors, user, y_m, cfg, pc):
    """
    Stage B: keeps the anchor nearest the user and moves every other PA,
    outward from the center, to the candidate whose term best matches the
    reference phase while keeping Δ to its placed neighbor. Returns None when
    a PA has no admissible candidate.
    """
    lo, hi = cfg.bounds
    delta = cfg.spacing
    count = anchors.size
    center = int(np.argmin(np.abs(anchors - user[0])))
    reference = _terms(anchors[center], user, y_m, cfg)[0]
    rotation = np.conj(reference) / np.abs(reference)
    offsets = _offsets(cfg, pc)

    placed = anchors.copy()
    for n in range(center + 1, count):
        floor = placed[n - 1] + delta
        candidates = max(anchors[n], floor) + offsets
        ceiling = hi - (count - 1 - n) * delta
        candidates = candidates[(candidates >= floor) & (candidates <= ceiling + GEOMETRY_TOLERANCE)]
        if candidates.size == 0:
            return None
        score = np.real(_terms(candidates, user, y_m, cfg) * rotation)
        placed[n] = min(candidates[int(np.argmax(score))], ceiling)
    for n in range(center - 1, -1, -1):
        ceiling = placed[n + 1] - delta
        candidates = min(anchors[n], ceiling) + offsets
        floor = lo + n * delta
        candidates = candidates[(candidates <= ceiling) & (candidates >= floor - GEOMETRY_TOLERANCE)]
        if candidates.size == 0:
            return None
        score = np.real(_terms(candidates, user, y_m, cfg) * rotation)
        placed[n] = max(candidates[int(np.argmax(score))], floor)
    return placed


def _refine(x, user, y_m, cfg, pc):
    """Stage C: per-PA coordinate ascent on |h|, grid then bounded scalar search, until gains stall."""
    lo, hi = cfg.bounds
    delta = cfg.spacing
    step = cfg.wavelength / pc.resolution_divisor
    window = pc.window_wavelengths * cfg.wavelength
    x = np.array(x, dtype=float)
    terms = _terms(x, user, y_m, cfg)
    current = float(np.abs(terms.sum()))

    for _ in range(pc.max_refine_passes):
        start = current
        for n in range(x.size):
            left = x[n - 1] + delta if n > 0 else lo
            right = x[n + 1] - delta if n < x.size - 1 else hi
            left, right = max(left, x[n] - window), min(right, x[n] + window)
            if right <= left:
                continue
            rest = terms.sum() - terms[n]
            grid = np.linspace(left, right, max(int(np.ceil((right - left) / step)) + 1, 2))
            values = np.abs(rest + _terms(grid, user, y_m, cfg))
            best = int(np.argmax(values))
            candidate, value = grid[best], float(values[best])
            a, b = grid[max(best - 1, 0)], grid[min(best + 1, grid.size - 1)]
            if b > a:
                result = minimize_scalar(
                    lambda v: -float(np.abs(rest + _terms(v, user, y_m, cfg)[0])),
                    bounds=(a, b),
                    method="bounded",
                    options={"xatol": step * 1e-3},
                )
                if -result.fun > value:
                    candidate, value = float(result.x), float(-result.fun)
            if value > current:
                x[n] = candidate
                terms[n] = _terms(candidate, user, y_m, cfg)[0]
                current = float(np.abs(terms.sum()))
        if current - start <= pc.refine_tolerance * start:
            break
    return x


def _place_block(user, y_m, count, cfg, pc):
    anchors = _anchors(user[0], count, cfg)
    placed = anchors
    aligned = _phase_align(anchors, user, y_m, cfg, pc)
    if aligned is not None and _gain(aligned, user, y_m, cfg) > _gain(anchors, user, y_m, cfg):
        placed = aligned
    return _refine(placed, user, y_m, cfg, pc)


def _extend(x, user, y_m, cfg, pc):
    """Adds one PA beside the block where it best adds coherently to the current channel; None if no room."""
    lo, hi = cfg.bounds
    delta = cfg.spacing
    reach = pc.window_wavelengths * cfg.wavelength + delta
    step = cfg.wavelength / pc.resolution_divisor
    total = np.sum(_terms(x, user, y_m, cfg))

    options = []
    if x[-1] + delta <= hi + GEOMETRY_TOLERANCE:
        options.append(np.arange(x[-1] + delta, min(x[-1] + reach, hi) + step / 2, step))
    if x[0] - delta >= lo - GEOMETRY_TOLERANCE:
        options.append(np.arange(x[0] - delta, max(x[0] - reach, lo) - step / 2, -step))
    candidates = np.concatenate(options) if options else np.empty(0)
    candidates = np.clip(candidates, lo, hi)
    candidates = candidates[(candidates >= x[-1] + delta - GEOMETRY_TOLERANCE) | (candidates <= x[0] - delta + GEOMETRY_TOLERANCE)]
    if candidates.size == 0:
        return None
    values = np.abs(total + _terms(candidates, user, y_m, cfg))
    return np.sort(np.append(x, candidates[int(np.argmax(values))]))


def place_pas(user, m, cfg, placement_config: PlacementConfig = None):
    """
    Places all M*N PAs on waveguide m to maximize |h_k| for one user.

    PA counts are grown one at a time. At every count the better of a fresh
    anchor/align/refine placement and the previous placement extended by one
    coherent PA is kept, so the achieved |h| never drops as PAs are added.

    Returns:
        np.ndarray: sorted PA coordinates, length M*N.

    Raises:
        InfeasibleGeometryError: the PAs cannot fit at spacing Δ.
    """
    pc = placement_config or PlacementConfig()
    user = np.asarray(user, dtype=float)
    y_m = float(cfg.waveguide_y[m])
    lo, hi = cfg.bounds
    total = cfg.M * cfg.N
    _anchors(user[0], total, cfg)

    # a single PA only trades amplitude: sit right above the user
    x = np.array([min(max(user[0], lo), hi)])
    for count in range(2, total + 1):
        fresh = _place_block(user, y_m, count, cfg, pc)
        grown = _extend(x, user, y_m, cfg, pc)
        if grown is not None:
            grown = _refine(grown, user, y_m, cfg, pc)
        if grown is not None and _gain(grown, user, y_m, cfg) >= _gain(fresh, user, y_m, cfg):
            x = grown
        else:
            x = fresh
    return x


# ---------------------------------------------------------------------------
# Metrics and solve
# ---------------------------------------------------------------------------

def ws_rates(powers, gains, cfg):
    """R_k = (1/K) log2(1 + P_k g_k)."""
    return np.log2(1.0 + np.asarray(powers, dtype=float) * np.asarray(gains, dtype=float)) / cfg.K


def ws_se(powers, gains, cfg):
    return float(np.sum(ws_rates(powers, gains, cfg)))


def ws_ee(se, powers, cfg):
    """K·SE / (Σ P_k + K P_RF), i.e. SE over mean slot power plus P_RF."""
    return cfg.K * float(se) / (float(np.sum(powers)) + cfg.K * cfg.P_RF)


@dataclass(frozen=True)
class WsChannels:
    """Per-user waveguide choice, placement and normalized gain; independent of the SE target."""

    waveguides: np.ndarray
    placements: list
    channel_gains: np.ndarray  # |h_k|^2
    gains: np.ndarray  # |h_k|^2 / (M N σ²)


@track_execution_time()
def prepare_ws(users, cfg, placement_config: PlacementConfig = None):
    """Runs waveguide selection and PA placement for every user."""
    users.validate(cfg)
    waveguides, placements, channel_gains = [], [], []
    for user in users.positions:
        m = select_waveguide(user, cfg)
        x = place_pas(user, m, cfg, placement_config)
        h = np.sum(_terms(x, user, cfg.waveguide_y[m], cfg))
        waveguides.append(m)
        placements.append(x)
        channel_gains.append(float(np.abs(h) ** 2))
    channel_gains = np.asarray(channel_gains)
    return WsChannels(
        waveguides=np.asarray(waveguides, dtype=int),
        placements=placements,
        channel_gains=channel_gains,
        gains=channel_gains / (cfg.M * cfg.N * cfg.sigma2),
    )


def solve_ws(users, cfg, eps_se, settings: Settings = None, prepared: WsChannels = None):
    """
    Minimizes Σ P_k under the SE floor and per-user QoS floors for WS.

    Raises:
        InfeasibleError: propagated from water-filling.
    """
    settings = settings or Settings()
    with ExecutionTimer() as timer:
        prepared = prepared or prepare_ws(users, cfg, settings.placement)
        allocation = waterfill_ws(prepared.gains, cfg.qos, eps_se, cfg.P_max, K=cfg.K)
    powers = allocation.powers
    se = ws_se(powers, prepared.gains, cfg)
    logger.debug(
        "WS solved: power %.6e W, SE %.4f", allocation.total, se,
        extra={"eps_se": eps_se, "execution_time_ms": timer.execution_time_ms},
    )
    return WsSolution(
        waveguides=prepared.waveguides,
        placements=prepared.placements,
        channel_gains=prepared.channel_gains,
        powers=powers,
        rates=ws_rates(powers, prepared.gains, cfg),
        se=se,
        power=allocation.total,
        ee=ws_ee(se, powers, cfg),
    )
