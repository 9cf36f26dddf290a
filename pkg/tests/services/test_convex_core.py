import numpy as np
import pytest
from config.config import ScaConfig, SdpConfig, SystemConfig
from interfaces.geometry import PinchingLayout, UserSet
from interfaces.solutions import SdpProblem
from services.channel import channel_matrix
from services.convex_core import (
    BasebandProgram,
    certify_beams,
    extract_rank_one,
    maximum_ratio_initializer,
    minimum_power_control,
    rates_from_received,
    received_from_beams,
    received_from_matrices,
    recover_beams,
    run_sca,
    sca_rate_lower_bound,
    solve_qos_sdp,
    solve_sdp_subproblem,
    waterfill_ws,
)
from utils.exceptions import DegenerateBeamformerError, InfeasibleError

SIGMA2 = 1e-12


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def channels(cfg):
    """✅ A fixed two-user, two-waveguide channel at desk scale."""
    users = UserSet([[-2.0, -0.6], [2.5, 0.7]])
    offsets = np.arange(cfg.N) * 0.01
    layout = PinchingLayout((-2.0 + offsets, 2.5 + offsets))
    return channel_matrix(users, layout, cfg)


@pytest.fixture
def single_channel():
    """✅ K=M=1 with one PA above the user at H=3 m: |h| = √η/3."""
    cfg = SystemConfig(M=1, K=1, N=1)
    return np.array([[cfg.sqrt_eta / 3.0 * np.exp(-0.7j)]]), cfg


def _random_psd(rng, M, scale):
    A = rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))
    return scale * (A @ A.conj().T) / M


def _exact_rates(channels, matrices, sigma2=SIGMA2):
    return rates_from_received(received_from_matrices(channels, matrices), sigma2)


# -----------------------------------------------------------------------------
# SCA lower bound
# -----------------------------------------------------------------------------

def test_bound_is_exact_at_expansion_point(channels):
    """✅ Test that R̃_k equals R_k at its own expansion point."""
    rng = np.random.default_rng(1)
    for _ in range(100):
        W = [_random_psd(rng, 2, 1e-3) for _ in range(2)]
        exact = _exact_rates(channels, W)
        for k in range(2):
            assert sca_rate_lower_bound(channels[k], k, W, W, SIGMA2) == pytest.approx(exact[k], abs=1e-10)


def test_bound_single_user_is_exact_everywhere(single_channel):
    """✅ Test that with K=1 the linearized term vanishes."""
    h, _ = single_channel
    rng = np.random.default_rng(2)
    for _ in range(20):
        W, W_l = [_random_psd(rng, 1, 1e-2)], [_random_psd(rng, 1, 1e-2)]
        q = float(np.real(np.conj(h[0, 0]) * W[0][0, 0] * h[0, 0]))
        assert sca_rate_lower_bound(h[0], 0, W, W_l, SIGMA2) == pytest.approx(np.log2(1 + q / SIGMA2), rel=1e-12)


def test_bound_never_exceeds_exact_rate(channels):
    """✅ Test R̃_k ≤ R_k + 1e-9 over 1000 random PSD perturbations."""
    rng = np.random.default_rng(3)
    for _ in range(1000):
        W = [_random_psd(rng, 2, 10 ** rng.uniform(-5, -1)) for _ in range(2)]
        W_l = [_random_psd(rng, 2, 10 ** rng.uniform(-5, -1)) for _ in range(2)]
        exact = _exact_rates(channels, W)
        for k in range(2):
            assert sca_rate_lower_bound(channels[k], k, W, W_l, SIGMA2) <= exact[k] + 1e-9


# -----------------------------------------------------------------------------
# Baseband SDP
# -----------------------------------------------------------------------------

@pytest.mark.parametrize("gamma, eps", [(1.0, 4.0), (3.0, 2.0)])
def test_single_user_sdp_closed_form(single_channel, gamma, eps):
    """✅ Test Tr(W) = (2^max(γ, ε) − 1) σ² / |h|² for one user."""
    h, cfg = single_channel
    expansion = (np.eye(1) * 1e-3,)
    solution = solve_sdp_subproblem(SdpProblem(h, np.array([gamma]), eps, cfg.P_max, SIGMA2, expansion))
    expected = (2 ** max(gamma, eps) - 1) * SIGMA2 / abs(h[0, 0]) ** 2
    assert solution.objective == pytest.approx(expected, rel=1e-5)
    assert solution.power == pytest.approx(expected, rel=1e-5)
    assert solution.residuals["power_slack"] > 0


def test_single_user_sdp_infeasible_below_closed_form(single_channel):
    """❌ Test that a budget below the closed form is infeasible."""
    h, _ = single_channel
    needed = (2 ** 4 - 1) * SIGMA2 / abs(h[0, 0]) ** 2
    with pytest.raises(InfeasibleError):
        solve_sdp_subproblem(SdpProblem(h, np.array([1.0]), 4.0, 0.5 * needed, SIGMA2, (np.eye(1) * 1e-6,)))


def test_sdp_at_qos_floor_matches_qos_only_minimum(channels, cfg):
    """✅ Test that ε_SE = Σγ reproduces the QoS-only power minimum."""
    qos = np.array([1.0, 1.0])
    base = solve_qos_sdp(channels, qos, cfg.P_max, SIGMA2)
    base_power = sum(float(np.real(np.trace(W))) for W in base)
    solution = solve_sdp_subproblem(SdpProblem(channels, qos, 2.0, cfg.P_max, SIGMA2, tuple(base)))
    assert solution.objective == pytest.approx(base_power, rel=1e-5)


def test_sdp_solution_invariants(channels, cfg):
    """✅ Test PSD outputs, the power cap and small complementary slackness."""
    qos = np.array([1.0, 1.0])
    base = solve_qos_sdp(channels, qos, cfg.P_max, SIGMA2)
    solution = solve_sdp_subproblem(SdpProblem(channels, qos, 6.0, cfg.P_max, SIGMA2, tuple(base)))
    for W in solution.matrices:
        assert np.linalg.eigvalsh(W).min() >= -1e-8 * np.real(np.trace(W))
    assert solution.power <= cfg.P_max + 1e-8
    assert solution.residuals["complementary_slackness"] <= 1e-6
    assert solution.residuals["se_slack"] >= -1e-6


def test_sca_objective_non_increasing(channels, cfg):
    """✅ Test monotone SCA descent when re-solving at each new point."""
    qos = np.array([1.0, 1.0])
    program = BasebandProgram(channels, qos, cfg.P_max, SIGMA2)
    matrices = program.maximize_se(solve_qos_sdp(channels, qos, cfg.P_max, SIGMA2)).matrices
    objectives = []
    for _ in range(6):
        step = program.minimize_power(matrices, 6.0)
        objectives.append(step.objective)
        matrices = step.matrices
    assert all(b <= a * (1 + 1e-5) for a, b in zip(objectives, objectives[1:]))


def test_qos_sdp_infeasible_when_budget_tiny(channels):
    """❌ Test that unreachable QoS floors raise `InfeasibleError`."""
    with pytest.raises(InfeasibleError):
        solve_qos_sdp(channels, np.array([20.0, 20.0]), 1e-9, SIGMA2)


def test_minimum_power_control_meets_floors(channels):
    """✅ Test that the linear power-control solution meets every SINR floor with equality."""
    directions = channels / np.linalg.norm(channels, axis=1, keepdims=True)
    qos = np.array([1.0, 2.0])
    p = minimum_power_control(channels, directions, qos, SIGMA2)
    assert p is not None
    rates = rates_from_received(received_from_beams(channels, directions * np.sqrt(p)[:, None]), SIGMA2)
    np.testing.assert_allclose(rates, qos, rtol=1e-9)


def test_maximum_ratio_initializer_is_rank_one(channels, cfg):
    """✅ Test that the fallback initializer returns rank-one matrices within P_max."""
    matrices = maximum_ratio_initializer(channels, np.array([1.0, 1.0]), cfg.P_max, SIGMA2)
    assert sum(np.real(np.trace(W)) for W in matrices) <= cfg.P_max * (1 + 1e-12)
    for W in matrices:
        values = np.linalg.eigvalsh(W)
        assert values[0] <= 1e-12 * values[-1]


# -----------------------------------------------------------------------------
# Rank-one recovery and certification
# -----------------------------------------------------------------------------

def test_extract_rank_one_exact():
    """✅ Test that W = wwᴴ returns w up to a global phase with tightness 1."""
    w = np.array([0.3 + 0.4j, -0.1 + 0.2j])
    beam, tightness = extract_rank_one(np.outer(w, w.conj()))
    assert tightness == pytest.approx(1.0, abs=1e-12)
    assert abs(np.vdot(beam, w)) == pytest.approx(np.vdot(w, w).real, rel=1e-12)
    assert np.linalg.norm(np.outer(beam, beam.conj()) - np.outer(w, w.conj())) <= 1e-12


def test_extract_rank_one_identity_triggers_randomization():
    """✅ Test tightness 0.5 for W = I and that the filter picks the cheapest candidate."""
    seen = []

    def keep_all(c):
        seen.append(c)
        return c

    beam, tightness = extract_rank_one(np.eye(2), rng=np.random.default_rng(0), candidate_filter=keep_all)
    assert tightness == pytest.approx(0.5)
    assert len(seen) == 200
    assert np.vdot(beam, beam).real == pytest.approx(min(np.vdot(c, c).real for c in seen))


def test_extract_rank_one_without_rng_returns_eigenvector():
    """✅ Test that no randomization happens without an RNG."""
    beam, tightness = extract_rank_one(np.eye(2))
    assert tightness == pytest.approx(0.5)
    assert np.vdot(beam, beam).real == pytest.approx(1.0)


def test_extract_rank_one_degenerate():
    """❌ Test that a zero-trace matrix is rejected."""
    with pytest.raises(DegenerateBeamformerError):
        extract_rank_one(np.zeros((2, 2)))


def test_recover_beams_close_to_relaxed_matrices(channels, cfg):
    """✅ Test ‖wwᴴ − W‖_F / ‖W‖_F ≤ 0.05 whenever tightness ≥ 0.999."""
    matrices = solve_qos_sdp(channels, np.array([1.0, 1.0]), cfg.P_max, SIGMA2)
    beams, tightness = recover_beams(channels, matrices, rng=np.random.default_rng(0))
    for w, W, t in zip(beams, matrices, tightness):
        if t >= 0.999:
            assert np.linalg.norm(np.outer(w, w.conj()) - W) <= 0.05 * np.linalg.norm(W)


def test_certify_rescales_small_shortfall(channels, cfg):
    """✅ Test that a small rate shortfall is removed by a common power scale."""
    qos = np.array([1.0, 1.0])
    directions = channels / np.linalg.norm(channels, axis=1, keepdims=True)
    p = minimum_power_control(channels, directions, qos, SIGMA2)
    beams = directions * np.sqrt(0.9 * p)[:, None]
    scaled, certified = certify_beams(channels, beams, qos, 2.0, SIGMA2, cfg.P_max)
    assert certified
    rates = rates_from_received(received_from_beams(channels, scaled), SIGMA2)
    assert np.all(rates >= qos - 1e-7)
    assert np.sum(np.abs(scaled) ** 2) <= cfg.P_max


def test_certify_rejects_hopeless_beams(channels, cfg):
    """❌ Test that beams missing the SE floor even at P_max are not certified."""
    directions = channels / np.linalg.norm(channels, axis=1, keepdims=True)
    beams = directions * 1e-6
    _, certified = certify_beams(channels, beams, np.array([1.0, 1.0]), 80.0, SIGMA2, cfg.P_max)
    assert not certified


@pytest.mark.parametrize("eps", [1.0, 4.0, 8.0])
def test_run_sca_single_user_closed_form(single_channel, eps):
    """✅ Test min power (2^ε − 1) σ² / |h|² for K=M=N=1."""
    h, cfg = single_channel
    solution = run_sca(h, np.array([1.0]), eps, cfg.P_max, SIGMA2, ScaConfig(), SdpConfig(), rng=np.random.default_rng(0))
    expected = (2 ** eps - 1) * SIGMA2 / abs(h[0, 0]) ** 2
    assert solution.certified
    assert solution.power == pytest.approx(expected, rel=1e-6)


def test_run_sca_meets_constraints(channels, cfg):
    """✅ Test that SCA beams certify every floor within tolerance."""
    qos = np.array([1.0, 1.0])
    solution = run_sca(channels, qos, 6.0, cfg.P_max, SIGMA2, ScaConfig(), SdpConfig(), rng=np.random.default_rng(0))
    rates = rates_from_received(received_from_beams(channels, solution.beams), SIGMA2)
    assert solution.certified
    assert np.all(rates >= qos - 1e-7)
    assert rates.sum() >= 6.0 - 1e-7
    assert solution.power <= cfg.P_max + 1e-9


def test_run_sca_infeasible_target_carries_best_effort(channels, cfg):
    """❌ Test that an unreachable SE target raises with best-effort matrices."""
    with pytest.raises(InfeasibleError) as excinfo:
        run_sca(channels, np.array([1.0, 1.0]), 200.0, cfg.P_max, SIGMA2, ScaConfig(), SdpConfig())
    assert excinfo.value.best_effort is not None
    assert len(excinfo.value.best_effort) == 2


# -----------------------------------------------------------------------------
# Water-filling
# -----------------------------------------------------------------------------

def _grid_oracle(gains, qos, eps, p_max, rounds=6, points=161):
    """Coarse-to-fine search over (P_1, P_2) with P_3 set by the SE floor."""
    g = np.asarray(gains, dtype=float)
    K = g.size
    p_min = (2.0 ** (K * qos) - 1.0) / g
    lo = p_min[:2].copy()
    hi = np.full(2, 1e-5)
    best = np.inf
    for _ in range(rounds):
        P1, P2 = np.meshgrid(np.linspace(lo[0], hi[0], points), np.linspace(lo[1], hi[1], points), indexing="ij")
        remaining = K * eps - np.log2(1 + P1 * g[0]) - np.log2(1 + P2 * g[1])
        P3 = np.maximum(p_min[2], (2.0 ** remaining - 1.0) / g[2])
        total = np.where(P3 <= p_max, P1 + P2 + P3, np.inf)
        i, j = np.unravel_index(np.argmin(total), total.shape)
        best = min(best, total[i, j])
        step = (hi - lo) / (points - 1)
        center = np.array([P1[i, j], P2[i, j]])
        lo, hi = np.maximum(center - 2 * step, p_min[:2]), center + 2 * step
    return best


def test_waterfill_single_user():
    """✅ Test P = (2^ε − 1)/g for K=1."""
    allocation = waterfill_ws([2e8], [0.0], 5.0, 0.1)
    assert allocation.total == pytest.approx((2 ** 5 - 1) / 2e8, rel=1e-9)


def test_waterfill_equal_gains_split_equally():
    """✅ Test the symmetric water level for equal gains and no floors."""
    allocation = waterfill_ws([1e8, 1e8, 1e8], [0.0, 0.0, 0.0], 4.0, 0.1)
    np.testing.assert_allclose(allocation.powers, (2 ** 4 - 1) / 1e8, rtol=1e-9)


def test_waterfill_matches_grid_oracle():
    """✅ Test K=3 total power against a brute-force oracle and the KKT condition."""
    gains, qos = np.array([1e8, 4e8, 2.5e7]), np.array([1.0, 1.0, 1.0])
    allocation = waterfill_ws(gains, qos, 6.0, 0.1)
    assert allocation.total == pytest.approx(_grid_oracle(gains, qos, 6.0, 0.1), rel=1e-3)

    p_min = (2.0 ** (3 * qos) - 1.0) / gains
    interior = (allocation.powers > p_min * (1 + 1e-9)) & (allocation.powers < 0.1)
    marginal = gains[interior] / (1 + allocation.powers[interior] * gains[interior])
    assert interior.sum() >= 2
    np.testing.assert_allclose(marginal, marginal[0], rtol=1e-7)
    assert np.sum(np.log2(1 + allocation.powers * gains)) / 3 == pytest.approx(6.0, abs=1e-9)


def test_waterfill_floor_target_returns_minimum_powers():
    """✅ Test that ε = Σγ leaves every user at its QoS floor."""
    gains, qos = np.array([1e8, 4e8]), np.array([1.0, 1.0])
    allocation = waterfill_ws(gains, qos, 2.0, 0.1)
    np.testing.assert_allclose(allocation.powers, (2.0 ** (2 * qos) - 1) / gains, rtol=1e-12)


def test_waterfill_monotone_in_targets():
    """✅ Test that total power never drops as ε or γ grows."""
    gains = np.array([1e8, 4e8, 2.5e7])
    totals = [waterfill_ws(gains, [1.0, 1.0, 1.0], eps, 0.1).total for eps in np.linspace(3.0, 9.0, 13)]
    assert all(b >= a for a, b in zip(totals, totals[1:]))
    floors = [waterfill_ws(gains, [g, 1.0, 1.0], 4.0, 0.1).total for g in np.linspace(0.0, 3.0, 7)]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(floors, floors[1:]))


@pytest.mark.parametrize("qos, eps", [([1.0, 1.0], 40.0), ([30.0, 1.0], 31.0)])
def test_waterfill_infeasible(qos, eps):
    """❌ Test infeasibility for unreachable SE targets and QoS floors."""
    with pytest.raises(InfeasibleError):
        waterfill_ws([1e8, 4e8], qos, eps, 0.1)
