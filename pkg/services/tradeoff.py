"""
Epsilon-constraint sweeps: for each SE target the minimum transmit power is
found per protocol and recorded with the resulting SE and EE.
"""

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import psutil

from config.config import Settings, SweepConfig
from interfaces.geometry import PinchingLayout, UserSet
from interfaces.solutions import Protocol, TradeoffCurve, TradeoffPoint
from services.wm_solver import solve_wm
from services.ws_solver import prepare_ws, solve_ws, ws_se
from utils.exceptions import InfeasibleError, NumericalFailureError
from utils.logging_config import install_worker_logging, worker_log_forwarding
from utils.logging_helpers import ExecutionTimer

logger = logging.getLogger(__name__)


def draw_users(cfg, rng):
    """K users uniform over the L x L region."""
    half = cfg.L / 2.0
    return UserSet(rng.uniform(-half, half, size=(cfg.K, 2)))


def drop_rng(seed, drop):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(drop)]))


def point_seed(seed, drop, index):
    """Solver seed for one (drop, ε index) pair; independent of evaluation order."""
    return int(np.random.SeedSequence([int(seed), int(drop), int(index)]).generate_state(1)[0])


def baseline_layout(cfg):
    """N antennas at half-wavelength spacing from the feed, x_n = -L/2 + (n-1)λ/2, on every waveguide."""
    x = -cfg.L / 2.0 + np.arange(cfg.N) * cfg.wavelength / 2.0
    return PinchingLayout.uniform(x, cfg.M)


def baseline_conventional(users, cfg, eps_se, rng_seed, settings: Settings = None):
    """WM baseband design over the frozen feed-side array."""
    return solve_wm(users, cfg, eps_se, rng_seed, settings, layout=baseline_layout(cfg), optimize_pinching=False)


def _infeasible(protocol, eps_se):
    nan = float("nan")
    return TradeoffPoint(eps_se=float(eps_se), se=nan, power_w=nan, ee=nan, protocol=protocol, feasible=False)


def solve_point(protocol, users, cfg, eps_se, rng_seed, settings: Settings = None, prepared=None):
    """
    One ε-constraint solve. Infeasibility and solver numerical failures are
    reported on the point rather than raised.
    """
    protocol = Protocol(protocol)
    settings = settings or Settings()
    context = {"protocol": protocol.value, "eps_se": eps_se, "seed": rng_seed}
    try:
        if protocol is Protocol.WS:
            solution = solve_ws(users, cfg, eps_se, settings, prepared=prepared)
        elif protocol is Protocol.WM:
            solution = solve_wm(users, cfg, eps_se, rng_seed, settings)
        else:
            solution = baseline_conventional(users, cfg, eps_se, rng_seed, settings)
    except InfeasibleError as e:
        logger.debug("Infeasible point: %s", e, extra=context)
        return _infeasible(protocol, eps_se)
    except NumericalFailureError as e:
        logger.warning("❌ Numerical failure, point marked infeasible: %s", e, extra=context)
        return _infeasible(protocol, eps_se)
    if not solution.feasible:
        return _infeasible(protocol, eps_se)
    return TradeoffPoint(
        eps_se=float(eps_se),
        se=float(solution.se),
        power_w=float(solution.power),
        ee=float(solution.ee),
        protocol=protocol,
        feasible=True,
    )


def se_upper_bound(protocol, cfg, prepared=None):
    """
    WS: exact full-power SE of the placed channels. WM/baseline: interference-free
    full power with every PA at distance H and phase aligned on all M feeds.
    """
    if Protocol(protocol) is Protocol.WS:
        return ws_se(np.full(cfg.K, cfg.P_max), prepared.gains, cfg)
    amplitude = cfg.sqrt_eta * cfg.N / cfg.H
    return float(cfg.K * np.log2(1.0 + cfg.P_max * cfg.M * amplitude ** 2 / cfg.sigma2))


class SeBracket:
    """
    Feasibility bracket [lo, hi] on the SE target of one drop.

    The floor Σγ_k is tried first, then the upper bound; after that every round
    tries `fanout` evenly spaced interior targets, so a fan-out of one is plain
    bisection. Bracket seed indices start at `grid_points` and never collide
    with sweep points. The target sequence depends only on the outcomes, never
    on who evaluates them.
    """

    def __init__(self, protocol, floor, ceiling, sweep_config: SweepConfig, grid_points):
        self.protocol = Protocol(protocol)
        self.lo = float(floor)
        self.hi = max(float(ceiling), self.lo)
        self.tolerance = sweep_config.bracket_tolerance
        self.fanout = sweep_config.bracket_fanout
        self.stage = "floor"
        self._next_index = grid_points
        self._pending = []

    @property
    def done(self):
        return self.stage == "section" and self.hi - self.lo <= self.tolerance

    def targets(self):
        """Next round of (seed index, ε) pairs to evaluate."""
        if self.stage == "floor":
            targets = [self.lo]
        elif self.stage == "ceiling":
            targets = [self.hi]
        else:
            step = (self.hi - self.lo) / (self.fanout + 1)
            targets = [self.lo + step * (i + 1) for i in range(self.fanout)]
        indices = range(self._next_index, self._next_index + len(targets))
        self._next_index += len(targets)
        self._pending = targets
        return list(zip(indices, targets))

    def update(self, feasible):
        """
        Folds in the feasibility of the last round, in `targets()` order.

        Raises:
            InfeasibleError: the QoS floor itself is infeasible.
        """
        targets, self._pending = self._pending, []
        if self.stage == "floor":
            if not feasible[0]:
                raise InfeasibleError(f"{self.protocol.value}: QoS floor Σγ={self.lo:.4f} is infeasible")
            self.stage = "ceiling"
            return
        if self.stage == "ceiling":
            if feasible[0]:
                self.lo = self.hi
            self.stage = "section"
            return
        for eps, ok in zip(targets, feasible):
            if not ok:
                self.hi = eps
                break
            self.lo = eps


def find_se_max(protocol, users, cfg, settings: Settings = None, seed=0, drop=0, prepared=None, grid_points=None):
    """
    Locates the largest feasible SE target by section search over [Σγ_k, SE_ub].

    Returns a feasible ε such that ε + bracket_tolerance is infeasible (or SE_ub
    itself when that is feasible).

    Raises:
        InfeasibleError: even the QoS floor Σγ_k cannot be met.
    """
    protocol = Protocol(protocol)
    settings = settings or Settings()
    if protocol is Protocol.WS and prepared is None:
        prepared = prepare_ws(users, cfg, settings.placement)
    bracket = SeBracket(
        protocol, np.sum(cfg.qos), se_upper_bound(protocol, cfg, prepared), settings.sweep,
        grid_points or settings.sweep.grid_points,
    )
    while not bracket.done:
        bracket.update([
            solve_point(protocol, users, cfg, eps, point_seed(seed, drop, index), settings, prepared).feasible
            for index, eps in bracket.targets()
        ])
    return bracket.lo


def monotone_envelope(points):
    """
    Replaces a feasible point by a later feasible one when the later point needs
    less power; a solution for a larger ε satisfies every smaller target.
    """
    out = list(points)
    best = None
    for i in range(len(out) - 1, -1, -1):
        point = out[i]
        if not point.feasible:
            continue
        if best is not None and best.power_w < point.power_w:
            out[i] = TradeoffPoint(
                eps_se=point.eps_se, se=best.se, power_w=best.power_w, ee=best.ee,
                protocol=point.protocol, feasible=True,
            )
        else:
            best = point
    return out


def sweep_grid(protocol, users, cfg, grid_points, seed=0, settings: Settings = None, drop=0, prepared=None):
    """
    Brackets SE_max and lays out the uniform ε grid from Σγ_k to SE_max.

    Returns:
        tuple[np.ndarray, float | None]: The grid and SE_max; SE_max is None when
        the QoS floor is infeasible, in which case every grid entry is Σγ_k.
    """
    protocol = Protocol(protocol)
    settings = settings or Settings()
    context = {"protocol": protocol.value, "drop": drop, "seed": seed}
    floor = float(np.sum(cfg.qos))
    if grid_points <= 1:
        return np.full(grid_points, floor), floor
    try:
        se_max = find_se_max(protocol, users, cfg, settings, seed, drop, prepared, grid_points)
    except InfeasibleError as e:
        logger.warning("❌ %s", e, extra=context)
        return np.full(grid_points, floor), None
    logger.info("✅ SE_max bracketed at %.4f", se_max, extra=context)
    return np.linspace(floor, se_max, grid_points), se_max


def _curve(protocol, users, grid, se_max, points, seed, drop, execution_time_ms=None):
    extra = {"protocol": protocol.value, "drop": drop, "seed": seed}
    if execution_time_ms is not None:
        extra["execution_time_ms"] = execution_time_ms
    logger.info("✅ Sweep finished: %d/%d feasible points", sum(p.feasible for p in points), len(points), extra=extra)
    metadata = {
        "grid": grid.tolist(),
        "seed": seed,
        "drop": drop,
        "users": users.positions.tolist(),
        "se_max": float("nan") if se_max is None else se_max,
    }
    return TradeoffCurve(protocol=protocol, points=monotone_envelope(points), metadata=metadata)


def sweep(protocol, users, cfg, grid_points=None, seed=0, settings: Settings = None, drop=0):
    """
    Uniform ε grid from Σγ_k to SE_max, one minimum-power solve per target.

    Points past feasibility stay in the curve with `feasible=False`.
    """
    protocol = Protocol(protocol)
    settings = settings or Settings()
    grid_points = grid_points or settings.sweep.grid_points
    prepared = prepare_ws(users, cfg, settings.placement) if protocol is Protocol.WS else None

    with ExecutionTimer() as timer:
        grid, se_max = sweep_grid(protocol, users, cfg, grid_points, seed, settings, drop, prepared)
        if se_max is None:
            points = [_infeasible(protocol, eps) for eps in grid]
        else:
            points = [
                solve_point(protocol, users, cfg, eps, point_seed(seed, drop, index), settings, prepared)
                for index, eps in enumerate(grid)
            ]
    return _curve(protocol, users, grid, se_max, points, seed, drop, timer.execution_time_ms)


def pool_size(settings: Settings):
    """`sweep.workers`, with 0 meaning one worker per logical CPU."""
    return settings.sweep.workers or psutil.cpu_count() or 1


def _drop_curve(job):
    protocol, cfg, grid_points, seed, settings, drop = job
    users = draw_users(cfg, drop_rng(seed, drop))
    return sweep(protocol, users, cfg, grid_points, seed, settings, drop)


def _drop_setup(job):
    protocol, cfg, settings, seed, drop = job
    users = draw_users(cfg, drop_rng(seed, drop))
    prepared = prepare_ws(users, cfg, settings.placement) if protocol is Protocol.WS else None
    return users, prepared


def _grid_point(job):
    protocol, users, cfg, eps, rng_seed, settings, prepared = job
    return solve_point(protocol, users, cfg, eps, rng_seed, settings, prepared)


def _pooled_brackets(pool, protocol, cfg, drops, grid_points, seed, settings, setups):
    """Advances every drop's SE bracket in lockstep, one pool batch per round."""
    floor = float(np.sum(cfg.qos))
    if grid_points <= 1:
        return [floor] * drops
    brackets = {
        drop: SeBracket(protocol, floor, se_upper_bound(protocol, cfg, prepared), settings.sweep, grid_points)
        for drop, (_, prepared) in enumerate(setups)
    }
    se_max = [None] * drops
    while brackets:
        rounds = [(drop, bracket.targets()) for drop, bracket in brackets.items()]
        tasks = [
            (protocol, setups[drop][0], cfg, eps, point_seed(seed, drop, index), settings, setups[drop][1])
            for drop, pairs in rounds
            for index, eps in pairs
        ]
        outcomes = iter(pool.map(_grid_point, tasks))
        for drop, pairs in rounds:
            bracket = brackets[drop]
            context = {"protocol": protocol.value, "drop": drop, "seed": seed}
            try:
                bracket.update([next(outcomes).feasible for _ in pairs])
            except InfeasibleError as e:
                logger.warning("❌ %s", e, extra=context)
                del brackets[drop]
                continue
            if bracket.done:
                se_max[drop] = bracket.lo
                logger.info("✅ SE_max bracketed at %.4f", bracket.lo, extra=context)
                del brackets[drop]
    return se_max


def run_drops(protocol, cfg, drops, grid_points=None, seed=0, settings: Settings = None):
    """
    Sweeps `drops` seeded user drops. Drop d always sees the same users and
    solver seeds, so the curves do not depend on `sweep.workers`.

    With more than one worker every solve is its own pool task: all drops'
    SE_max brackets advance together round by round, then every (drop, ε) grid
    point is solved. Worker log records are forwarded into this process's handlers.
    """
    protocol = Protocol(protocol)
    settings = settings or Settings()
    grid_points = grid_points or settings.sweep.grid_points
    workers = pool_size(settings)
    if workers <= 1:
        return [_drop_curve((protocol, cfg, grid_points, seed, settings, drop)) for drop in range(drops)]

    floor = float(np.sum(cfg.qos))
    with ExecutionTimer() as timer:
        with worker_log_forwarding() as (log_queue, level), ProcessPoolExecutor(
            max_workers=workers, initializer=install_worker_logging, initargs=(log_queue, level),
        ) as pool:
            setups = list(pool.map(_drop_setup, [(protocol, cfg, settings, seed, drop) for drop in range(drops)]))
            se_max = _pooled_brackets(pool, protocol, cfg, drops, grid_points, seed, settings, setups)
            grids = [
                np.full(grid_points, floor) if top is None else np.linspace(floor, top, grid_points)
                for top in se_max
            ]
            tasks = [
                (protocol, users, cfg, eps, point_seed(seed, drop, index), settings, prepared)
                for drop, (users, prepared) in enumerate(setups)
                if se_max[drop] is not None
                for index, eps in enumerate(grids[drop])
            ]
            solved = iter(list(pool.map(_grid_point, tasks)))

    curves = []
    for drop, (users, _) in enumerate(setups):
        if se_max[drop] is None:
            points = [_infeasible(protocol, eps) for eps in grids[drop]]
        else:
            points = [next(solved) for _ in grids[drop]]
        curves.append(_curve(protocol, users, grids[drop], se_max[drop], points, seed, drop))
    logger.info(
        "✅ %d drops finished on %d workers", drops, workers,
        extra={"protocol": protocol.value, "seed": seed, "execution_time_ms": timer.execution_time_ms},
    )
    return curves


def average_curves(curves):
    """
    Index-wise average over drops. SE, power and EE average the feasible drops
    only; `metadata["feasible_fraction"]` holds the share of feasible drops.
    """
    if not curves:
        raise ValueError("no curves to average")
    protocol = curves[0].protocol
    size = len(curves[0].points)
    if any(len(c.points) != size for c in curves):
        raise ValueError("curves must share the grid size")

    points, fractions = [], []
    for index in range(size):
        column = [c.points[index] for c in curves]
        feasible = [p for p in column if p.feasible]
        eps = float(np.mean([p.eps_se for p in column]))
        fractions.append(len(feasible) / len(column))
        if not feasible:
            points.append(_infeasible(protocol, eps))
            continue
        points.append(TradeoffPoint(
            eps_se=eps,
            se=float(np.mean([p.se for p in feasible])),
            power_w=float(np.mean([p.power_w for p in feasible])),
            ee=float(np.mean([p.ee for p in feasible])),
            protocol=protocol,
            feasible=True,
        ))
    metadata = {"drops": len(curves), "feasible_fraction": fractions}
    return TradeoffCurve(protocol=protocol, points=points, metadata=metadata)
