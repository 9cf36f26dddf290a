"""
Convex subproblems: the SCA-linearized SDP for WM baseband beamforming,
rank-one recovery, and water-filling power allocation for WS.

Baseband programs are built in normalized units: W_k = P_max * W̄_k and
g_k = h_k * sqrt(P_max / σ²), so that received SNRs are O(1..1e4) and the
power cap reads Σ Tr(W̄_k) ≤ 1.
"""

import logging

import cvxpy as cp
import numpy as np

from config.config import SdpConfig
from interfaces.solutions import BasebandSolution, PowerAllocation, SdpProblem, SdpSolution, SolverStatus
from utils.exceptions import DegenerateBeamformerError, InfeasibleError, NumericalFailureError

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)
RATE_TOLERANCE = 1e-7  # bit/s/Hz
POWER_TOLERANCE = 1e-9  # W
DEGENERATE_TRACE = 1e-14

SOLVER_OPTIONS = {
    "CLARABEL": {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-9, "tol_feas": 1e-9, "max_iter": 500},
    "SCS": {"eps_abs": 1e-9, "eps_rel": 1e-9, "max_iters": 200000},
}


# ---------------------------------------------------------------------------
# Rate bookkeeping
# ---------------------------------------------------------------------------

def hermitian_psd(W):
    """Symmetrizes W and clips negative eigenvalues to zero."""
    W = 0.5 * (W + W.conj().T)
    values, vectors = np.linalg.eigh(W)
    return (vectors * np.clip(values, 0.0, None)) @ vectors.conj().T


def received_from_matrices(channels, matrices):
    """Q[k, i] = Tr(h_k h_kᴴ W_i) = h_kᴴ W_i h_k."""
    Ws = np.asarray(matrices)
    return np.real(np.einsum("km,imn,kn->ki", channels.conj(), Ws, channels))


def received_from_beams(channels, beams):
    """Q[k, i] = |h_kᴴ w_i|²."""
    return np.abs(channels.conj() @ np.asarray(beams).T) ** 2


def rates_from_received(Q, sigma2):
    """Exact per-user rates log2(1 + S_k / (I_k + σ²)) from a received-power matrix."""
    signal = np.diag(Q)
    interference = Q.sum(axis=1) - signal
    return np.log2(1.0 + signal / (interference + sigma2))


def sca_rate_lower_bound(h_k, k, matrices, expansion, sigma2):
    """
    Convex lower bound R̃_k on user k's rate, linearized at the expansion point.

    R̃_k = log2(Σ_i Tr(h hᴴ W_i) + σ²) − log2(I^(l) + σ²)
          − Σ_{i≠k} Tr(h hᴴ (W_i − W_i^(l))) / ((I^(l) + σ²) ln 2)
    """
    h_k = np.asarray(h_k).reshape(1, -1)
    q = received_from_matrices(h_k, matrices)[0]
    q_l = received_from_matrices(h_k, expansion)[0]
    others = np.arange(q.size) != k
    base = q_l[others].sum() + sigma2
    linear = (q[others] - q_l[others]).sum()
    return float(np.log2(q.sum() + sigma2) - np.log2(base) - linear / (base * LN2))


# ---------------------------------------------------------------------------
# Baseband SDP
# ---------------------------------------------------------------------------

class BasebandProgram:
    """
    Parametrized relaxed baseband program for one channel realization.

    The model is compiled once; each SCA step only updates the expansion-point
    parameters, so repeated solves skip canonicalization.
    """

    def __init__(self, channels, qos, p_max, sigma2, sdp_config=None):
        self.channels = np.asarray(channels, dtype=complex)
        self.qos = np.asarray(qos, dtype=float)
        self.p_max = float(p_max)
        self.sigma2 = float(sigma2)
        self.sdp_config = sdp_config or SdpConfig()

        K, M = self.channels.shape
        self.K, self.M = K, M
        g = self.channels * np.sqrt(self.p_max / self.sigma2)
        self._gains = g

        self.W = [cp.Variable((M, M), hermitian=True, name=f"W{k}") for k in range(K)]
        q = [[cp.real(g[k].conj() @ self.W[i] @ g[k]) for i in range(K)] for k in range(K)]
        traces = [cp.real(cp.trace(W)) for W in self.W]

        self.offset = cp.Parameter(K, name="offset")
        self.slope = cp.Parameter(K, nonneg=True, name="slope")
        self.anchor = cp.Parameter(K, name="anchor")
        self.eps = cp.Parameter(name="eps_se")

        self.rate_bounds = []
        for k in range(K):
            interference = cp.sum(cp.hstack([q[k][i] for i in range(K) if i != k])) if K > 1 else 0.0
            total = cp.sum(cp.hstack(q[k]))
            self.rate_bounds.append(
                cp.log(total + 1.0) / LN2 - self.offset[k] - self.slope[k] * interference + self.anchor[k]
            )

        self.psd_constraints = [W >> 0 for W in self.W]
        self.qos_constraints = [self.rate_bounds[k] >= self.qos[k] for k in range(K)]
        self.power_constraint = cp.sum(cp.hstack(traces)) <= 1.0
        self.se_constraint = cp.sum(cp.hstack(self.rate_bounds)) >= self.eps

        shared = self.psd_constraints + self.qos_constraints + [self.power_constraint]
        self._min_power = cp.Problem(cp.Minimize(cp.sum(cp.hstack(traces))), shared + [self.se_constraint])
        self._max_se = cp.Problem(cp.Maximize(cp.sum(cp.hstack(self.rate_bounds))), shared)

    def _set_expansion(self, expansion):
        normalized = [np.asarray(W) / self.p_max for W in expansion]
        Q = received_from_matrices(self._gains, normalized)
        interference = Q.sum(axis=1) - np.diag(Q) + 1.0
        self.offset.value = np.log2(interference)
        self.slope.value = 1.0 / (interference * LN2)
        self.anchor.value = (interference - 1.0) / (interference * LN2)

    def _run(self, problem):
        names = [self.sdp_config.solver]
        if self.sdp_config.fallback_solver and self.sdp_config.fallback_solver != self.sdp_config.solver:
            names.append(self.sdp_config.fallback_solver)
        last_error = None
        for name in names:
            try:
                problem.solve(solver=name, **SOLVER_OPTIONS.get(name, {}))
            except (cp.error.SolverError, ValueError) as e:
                last_error = e
                logger.warning("⚠️ %s failed on baseband SDP: %s", name, e)
                continue
            if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
                raise InfeasibleError(f"baseband SDP infeasible ({name})")
            if problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and all(W.value is not None for W in self.W):
                return SolverStatus.OPTIMAL if problem.status == cp.OPTIMAL else SolverStatus.OPTIMAL_INACCURATE
            last_error = problem.status
        raise NumericalFailureError(f"baseband SDP did not converge: {last_error}")

    def _collect(self, status, objective, with_se):
        matrices = [self.p_max * hermitian_psd(W.value) for W in self.W]
        bounds = np.array([float(np.real(r.value)) for r in self.rate_bounds])
        total = sum(float(np.real(np.trace(W))) for W in matrices)
        residuals = {
            "qos_slack": float(np.min(bounds - self.qos)),
            "power_slack": float(self.p_max - total),
            "min_eigenvalue": float(min(np.linalg.eigvalsh(W.value).min() for W in self.W)) * self.p_max,
        }
        slackness = [abs(float(c.dual_value or 0.0)) * abs(float(s)) for c, s in zip(self.qos_constraints, bounds - self.qos)]
        if with_se:
            residuals["se_slack"] = float(bounds.sum() - self.eps.value)
            slackness.append(abs(float(self.se_constraint.dual_value or 0.0)) * abs(residuals["se_slack"]))
        slackness.append(abs(float(self.power_constraint.dual_value or 0.0)) * abs(residuals["power_slack"] / self.p_max))
        residuals["complementary_slackness"] = float(max(slackness)) / max(1.0, abs(objective))
        return SdpSolution(matrices=matrices, objective=objective, residuals=residuals, status=status)

    def minimize_power(self, expansion, eps_se):
        """Σ Tr(W_k) → min s.t. R̃_k ≥ γ_k, Σ R̃_k ≥ ε_SE, Σ Tr(W_k) ≤ P_max, W_k ⪰ 0."""
        self._set_expansion(expansion)
        self.eps.value = float(eps_se)
        status = self._run(self._min_power)
        return self._collect(status, float(self._min_power.value) * self.p_max, with_se=True)

    def maximize_se(self, expansion):
        """Σ R̃_k → max under the QoS and power constraints (feasibility restoration)."""
        self._set_expansion(expansion)
        self.eps.value = 0.0
        status = self._run(self._max_se)
        return self._collect(status, float(self._max_se.value), with_se=False)


def solve_sdp_subproblem(problem: SdpProblem, sdp_config=None):
    """
    Solves the relaxed, SCA-linearized baseband subproblem.

    Raises:
        InfeasibleError: ε_SE or γ unreachable within P_max at this expansion point.
        NumericalFailureError: the conic solver did not converge.
    """
    program = BasebandProgram(problem.channels, problem.qos, problem.p_max, problem.sigma2, sdp_config)
    return program.minimize_power(problem.expansion, problem.eps_se)


def solve_qos_sdp(channels, qos, p_max, sigma2, sdp_config=None):
    """
    QoS-only power minimization (SE constraint dropped); the SINR constraints
    are linear in W so no expansion point is needed.
    """
    sdp_config = sdp_config or SdpConfig()
    K, M = channels.shape
    g = channels * np.sqrt(p_max / sigma2)
    targets = 2.0 ** np.asarray(qos, dtype=float) - 1.0
    W = [cp.Variable((M, M), hermitian=True) for _ in range(K)]
    constraints = [w >> 0 for w in W]
    for k in range(K):
        q = [cp.real(g[k].conj() @ W[i] @ g[k]) for i in range(K)]
        interference = cp.sum(cp.hstack([q[i] for i in range(K) if i != k])) if K > 1 else 0.0
        constraints.append(q[k] >= targets[k] * (interference + 1.0))
    traces = cp.hstack([cp.real(cp.trace(w)) for w in W])
    constraints.append(cp.sum(traces) <= 1.0)
    problem = cp.Problem(cp.Minimize(cp.sum(traces)), constraints)

    for name in [sdp_config.solver, sdp_config.fallback_solver]:
        if not name:
            continue
        try:
            problem.solve(solver=name, **SOLVER_OPTIONS.get(name, {}))
        except (cp.error.SolverError, ValueError) as e:
            logger.warning("⚠️ %s failed on QoS SDP: %s", name, e)
            continue
        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleError("QoS floors unreachable within P_max")
        if problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return [p_max * hermitian_psd(w.value) for w in W]
    raise NumericalFailureError("QoS SDP did not converge")


def minimum_power_control(channels, directions, qos, sigma2):
    """
    Smallest powers meeting the SINR floors for fixed unit-norm beam directions,
    from (I − D F) p = D σ²; returns None when no positive solution exists.
    """
    gains = received_from_beams(channels, directions)
    targets = 2.0 ** np.asarray(qos, dtype=float) - 1.0
    D = np.diag(targets / np.diag(gains))
    F = gains - np.diag(np.diag(gains))
    try:
        p = np.linalg.solve(np.eye(len(targets)) - D @ F, D @ np.full(len(targets), sigma2))
    except np.linalg.LinAlgError:
        return None
    return p if np.all(p > 0) else None


def maximum_ratio_initializer(channels, qos, p_max, sigma2):
    """Rank-one MRT matrices with the smallest powers meeting γ (capped at P_max)."""
    directions = channels / np.linalg.norm(channels, axis=1, keepdims=True)
    p = minimum_power_control(channels, directions, qos, sigma2)
    if p is None:
        own = np.diag(received_from_beams(channels, directions))
        p = (2.0 ** np.asarray(qos, dtype=float) - 1.0) * sigma2 / own
    if p.sum() > p_max:
        p = p * (p_max / p.sum())
    return [pk * np.outer(u, u.conj()) for pk, u in zip(p, directions)]


# ---------------------------------------------------------------------------
# Rank-one recovery
# ---------------------------------------------------------------------------

def extract_rank_one(W, rng=None, candidate_filter=None, threshold=0.999, n_candidates=200):
    """
    Dominant-eigenpair beam w = √λ_max v_max and tightness λ_max / Tr(W).

    When tightness < threshold and both `rng` and `candidate_filter` are given,
    `n_candidates` Gaussian candidates w = U Σ^{1/2} z are drawn; the filter
    rescales each one (or rejects it with None) and the feasible candidate with
    the least power is returned instead.

    Raises:
        DegenerateBeamformerError: Tr(W) below 1e-14.
    """
    W = 0.5 * (np.asarray(W) + np.asarray(W).conj().T)
    trace = float(np.real(np.trace(W)))
    if trace < DEGENERATE_TRACE:
        raise DegenerateBeamformerError(f"relaxed beamformer has trace {trace:.3e}", residuals={"trace": trace})

    values, vectors = np.linalg.eigh(W)
    values = np.clip(values, 0.0, None)
    tightness = float(values[-1] / trace)
    w = np.sqrt(values[-1]) * vectors[:, -1]

    if tightness >= threshold or rng is None or candidate_filter is None:
        return w, tightness

    M = W.shape[0]
    z = (rng.standard_normal((M, n_candidates)) + 1j * rng.standard_normal((M, n_candidates))) / np.sqrt(2.0)
    candidates = (vectors * np.sqrt(values)) @ z
    best, best_power = None, np.inf
    for c in candidates.T:
        scaled = candidate_filter(c)
        if scaled is None:
            continue
        power = float(np.vdot(scaled, scaled).real)
        if power < best_power:
            best, best_power = scaled, power
    logger.debug("Gaussian randomization: tightness=%.6f, feasible=%s", tightness, best is not None)
    return (best if best is not None else w), tightness


def recover_beams(channels, matrices, rng=None, sdp_config=None):
    """
    Extracts one beam per user. Randomized candidates are matched to the relaxed
    signal power h_kᴴ W_k h_k and accepted only if they leak no more to any other
    user than W_k does, so every exact rate stays at or above its relaxed value.
    """
    sdp_config = sdp_config or SdpConfig()
    Q = received_from_matrices(channels, matrices)
    K, M = channels.shape
    beams = np.zeros((K, M), dtype=complex)
    tightness = np.zeros(K)
    for k in range(K):
        target_signal = Q[k, k]
        leakage_cap = Q[:, k] * (1.0 + 1e-9) + 1e-300

        def candidate_filter(c, k=k, target_signal=target_signal, leakage_cap=leakage_cap):
            signal = abs(np.vdot(channels[k], c)) ** 2
            if signal <= 0.0:
                return None
            c = c * np.sqrt(target_signal / signal)
            leakage = np.abs(channels.conj() @ c) ** 2
            leakage[k] = 0.0
            return c if np.all(leakage <= leakage_cap) else None

        beams[k], tightness[k] = extract_rank_one(
            matrices[k],
            rng=rng,
            candidate_filter=candidate_filter,
            threshold=sdp_config.tightness_threshold,
            n_candidates=sdp_config.randomization_candidates,
        )
    return beams, tightness


def constraint_deficit(rates, qos, eps_se):
    """Largest shortfall over the QoS floors and the SE floor (≤ 0 when all hold)."""
    return float(max(np.max(qos - rates), eps_se - rates.sum()))


def certify_beams(channels, beams, qos, eps_se, sigma2, p_max):
    """
    Re-checks exact rates of extracted beams. Residual shortfalls are removed by
    a common power scale s ≥ 1 (every SINR grows with s), kept within P_max.

    Returns:
        tuple[np.ndarray, bool]: beams (possibly rescaled) and whether they certify.
    """
    def deficit(scale):
        rates = rates_from_received(received_from_beams(channels, beams * np.sqrt(scale)), sigma2)
        return constraint_deficit(rates, qos, eps_se)

    if deficit(1.0) <= RATE_TOLERANCE:
        return beams, True
    power = float(np.sum(np.abs(beams) ** 2))
    top = p_max / power if power > 0 else 1.0
    if top <= 1.0 or deficit(top) > RATE_TOLERANCE:
        return beams, False
    lo, hi = 1.0, top
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if deficit(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    return beams * np.sqrt(hi), True


# ---------------------------------------------------------------------------
# SCA driver
# ---------------------------------------------------------------------------

def exact_se(channels, matrices, sigma2):
    return float(rates_from_received(received_from_matrices(channels, matrices), sigma2).sum())


def run_sca(channels, qos, eps_se, p_max, sigma2, sca_config, sdp_config=None, rng=None):
    """
    Power-minimizing SCA at a fixed layout.

    W^(0) comes from the QoS-only SDP (MRT fallback on numerical failure). When
    W^(0) misses ε_SE, SE-maximizing steps restore a feasible expansion point
    first. The loop stops once the objective decreases by less than
    `rel_tolerance` (relative) or after `max_iterations` solves.

    Raises:
        InfeasibleError: QoS floors or ε_SE unreachable; `best_effort` carries the
            SE-maximizing matrices reached by the restoration phase.
    """
    sdp_config = sdp_config or SdpConfig()
    qos = np.asarray(qos, dtype=float)
    try:
        matrices = solve_qos_sdp(channels, qos, p_max, sigma2, sdp_config)
    except NumericalFailureError:
        logger.warning("⚠️ QoS SDP failed, starting SCA from maximum-ratio beams")
        matrices = maximum_ratio_initializer(channels, qos, p_max, sigma2)

    program = BasebandProgram(channels, qos, p_max, sigma2, sdp_config)

    se = exact_se(channels, matrices, sigma2)
    if se < eps_se - RATE_TOLERANCE:
        for _ in range(sca_config.restoration_iterations):
            try:
                step = program.maximize_se(matrices)
            except NumericalFailureError:
                break
            new_se = exact_se(channels, step.matrices, sigma2)
            improved = new_se - se
            if new_se >= se:
                matrices, se = step.matrices, new_se
            if se >= eps_se or improved < 1e-6 * max(1.0, se):
                break
        if se < eps_se - RATE_TOLERANCE:
            raise InfeasibleError(f"SE target {eps_se:.4f} unreachable (best {se:.4f})", best_effort=matrices)

    objective = sum(float(np.real(np.trace(W))) for W in matrices)
    iterations = 0
    for iterations in range(1, sca_config.max_iterations + 1):
        try:
            step = program.minimize_power(matrices, eps_se)
        except (InfeasibleError, NumericalFailureError) as e:
            logger.debug("SCA step %d rejected: %s", iterations, e)
            break
        decrease = objective - step.objective
        if decrease < 0.0:
            break
        matrices = step.matrices
        objective = step.objective
        if decrease < sca_config.rel_tolerance * max(objective, POWER_TOLERANCE):
            break

    beams, tightness = recover_beams(channels, matrices, rng=rng, sdp_config=sdp_config)
    beams, certified = certify_beams(channels, beams, qos, eps_se, sigma2, p_max)
    power = float(np.sum(np.abs(beams) ** 2))
    return BasebandSolution(
        matrices=matrices, beams=beams, tightness=tightness, power=power, iterations=iterations, certified=certified
    )


# ---------------------------------------------------------------------------
# WS power allocation
# ---------------------------------------------------------------------------

def waterfill_ws(gains, qos, eps_se, p_max, K=None):
    """
    Minimizes Σ P_k s.t. Σ_k (1/K) log2(1 + P_k g_k) ≥ ε_SE, per-user floors
    (1/K) log2(1 + P_k g_k) ≥ γ_k and 0 ≤ P_k ≤ P_max.

    KKT solution P_k(μ) = clamp(μ − 1/g_k, P_k^min, P_max) with the water level
    μ found by bisection.

    Raises:
        InfeasibleError: a floor needs more than P_max, or full power misses ε_SE.
    """
    g = np.asarray(gains, dtype=float)
    K = K or g.size
    qos = np.broadcast_to(np.asarray(qos, dtype=float), g.shape)
    if np.any(g <= 0.0):
        raise InfeasibleError("effective channel gains must be positive")

    p_min = (2.0 ** (K * qos) - 1.0) / g
    if np.any(p_min > p_max * (1.0 + 1e-12)):
        raise InfeasibleError("QoS floor needs more than P_max")

    def se(p):
        return float(np.sum(np.log2(1.0 + p * g)) / K)

    full = np.full_like(g, p_max)
    if se(full) < eps_se - RATE_TOLERANCE:
        raise InfeasibleError(f"SE target {eps_se:.4f} above full-power SE {se(full):.4f}")
    if se(p_min) >= eps_se:
        return PowerAllocation(powers=p_min.copy())

    def level(mu):
        return np.clip(mu - 1.0 / g, p_min, p_max)

    lo, hi = 0.0, p_max + float(np.max(1.0 / g))
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if se(level(mid)) >= eps_se:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-16 * hi:
            break
    return PowerAllocation(powers=level(hi))
