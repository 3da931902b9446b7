import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lagsync as ls
from lagsync.certify import Certificate, ClosedLoopMatrices, seed_certificate
from lagsync.delays import DelayProfileSet
from lagsync.protocol import GainSet

from conftest import aligned_definite_pair


# ---------------------------------------------------------------------------
# Closed-loop assembly


def test_benchmark_block_structure(plant, topology, gains, matrices):
    nn = 12
    assert matrices.a0.shape == (nn, nn)
    assert np.allclose(matrices.a0[:3, :3], plant.a_matrix)
    assert np.allclose(matrices.a0[3:6, 3:6], plant.a_matrix)
    # One pin on agent 1: a single diagonal block in the only pin matrix.
    assert len(matrices.a_hat) == 1
    hat = matrices.a_hat[0]
    expected = -np.outer(plant.b_vector, gains.k_pin[0])
    assert np.allclose(hat[:3, :3], expected)
    hat_rest = hat.copy()
    hat_rest[:3, :3] = 0.0
    assert np.allclose(hat_rest, 0.0)
    # Four channel matrices (the bidirectional pair shares one).
    assert len(matrices.a_tilde) == 4
    assert np.allclose(
        matrices.f_matrix,
        matrices.a0 + sum(matrices.a_hat) + sum(matrices.a_tilde),
    )


def test_zero_gains_give_open_loop(plant, topology):
    zero = GainSet(
        k_follower={e: np.zeros(3) for e in topology.follower_delay_index},
        k_pin={i: np.zeros(3) for i in topology.pin_delay_index},
        rho=0.0,
    )
    mats = ls.assemble_closed_loop(plant, topology, zero)
    assert np.allclose(mats.f_matrix, mats.a0)


def test_missing_gain_rejected(plant, topology, gains):
    incomplete = GainSet(
        k_follower={e: v for e, v in gains.k_follower.items() if e != (3, 1)},
        k_pin=gains.k_pin,
        rho=gains.rho,
    )
    with pytest.raises(ValueError, match=r"\(3, 1\)"):
        ls.assemble_closed_loop(plant, topology, incomplete)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_channel_matrices_annihilate_block_constants(plant, topology, seed):
    rng = np.random.default_rng(seed)
    gains = GainSet(
        k_follower={e: rng.uniform(0.0, 5.0, 3) for e in topology.follower_delay_index},
        k_pin={i: rng.uniform(0.0, 5.0, 3) for i in topology.pin_delay_index},
        rho=1.0,
    )
    mats = ls.assemble_closed_loop(plant, topology, gains)
    v = rng.normal(size=3)
    stacked = np.tile(v, topology.n_agents)
    for tilde in mats.a_tilde:
        assert np.max(np.abs(tilde @ stacked)) < 1e-12


def test_f_matches_zero_delay_error_dynamics(plant, topology, gains, matrices, initial_states):
    """Cross-module check: the simulator's zero-delay error derivative is F e."""
    followers, leader = initial_states
    profiles = DelayProfileSet.zero(topology)
    h = 1e-3
    trace = ls.integrate(
        plant,
        topology,
        gains,
        profiles,
        ls.DisturbanceModel.zero(),
        followers,
        leader,
        "linear-only",
        h,
        0.2,
    )
    e = trace.errors_stacked()
    f = matrices.f_matrix
    # Derivative by high-order central difference against F e.
    for k in (50, 100, 150):
        de = (e[k - 2] - 8 * e[k - 1] + 8 * e[k + 1] - e[k + 2]) / (12 * h)
        assert np.max(np.abs(de - f @ e[k])) < 1e-6


def test_f_matches_protocol_rhs_pointwise(plant, topology, gains, matrices, initial_states):
    """Algebraic identity: the undelayed error derivative assembled from the
    control-law operations equals F e to machine precision."""
    from lagsync.protocol import linear_consensus_term

    rng = np.random.default_rng(17)
    for _ in range(5):
        x = rng.normal(size=(4, 3)) * 5
        x0 = rng.normal(size=3) * 5
        delayed = {}
        for (i, j) in topology.follower_delay_index:
            delayed[("edge", i, j)] = (x[i], x[j])
        for i in topology.pin_delay_index:
            delayed[("pin", i)] = (x[i], x0)
        u_lin = linear_consensus_term(gains, topology, delayed)
        a, b = plant.a_matrix, plant.b_vector
        e_dot = np.concatenate(
            [a @ (x[i] - x0) + b * u_lin[i] for i in range(4)]
        )
        e = (x - x0).ravel()
        assert np.max(np.abs(e_dot - matrices.f_matrix @ e)) < 1e-10


# ---------------------------------------------------------------------------
# Feasibility checking


def _hand_instance():
    nn = 2
    f = -np.eye(nn)
    a_hat = (np.diag([-0.5, -0.5]),)
    return ClosedLoopMatrices(
        a0=f - a_hat[0], a_hat=a_hat, a_tilde=(), f_matrix=f, n_agents=1, order=2
    )


def _hand_certificate():
    eye = np.eye(2)
    return Certificate(
        p_matrix=eye,
        q_pin=(0.1 * eye,),
        q_chan=(),
        r_pin=(0.1 * eye,),
        r_chan=(),
        d_pin=np.zeros(1),
        d_chan=np.zeros(0),
    )


def test_hand_instance_feasible():
    rep = ls.check_feasibility(_hand_instance(), _hand_certificate(), 0.01)
    assert rep.feasible
    # Eigenvalues verified by hand for this block structure.
    assert rep.max_eigs[0] == pytest.approx(-9.8683e-4, rel=1e-3)
    assert rep.max_eigs[1] == pytest.approx(-0.09925, rel=1e-6)
    assert rep.max_eigs[2] == float("-inf")
    assert any("vacuous" in n for n in rep.notes)


def test_non_pd_certificate_rejected():
    cert = _hand_certificate()
    bad = Certificate(
        p_matrix=-np.eye(2),
        q_pin=cert.q_pin,
        q_chan=(),
        r_pin=cert.r_pin,
        r_chan=(),
        d_pin=cert.d_pin,
        d_chan=cert.d_chan,
    )
    rep = ls.check_feasibility(_hand_instance(), bad, 0.01)
    assert not rep.feasible and not rep.certificate_pd
    assert any("P is not positive definite" in n for n in rep.notes)


def test_zero_tau_reduces_to_delay_free_cores():
    rep = ls.check_feasibility(_hand_instance(), _hand_certificate(), 0.0)
    assert rep.feasible
    assert any("tau = 0" in n for n in rep.notes)
    # The first inequality collapses to the delay-free core of dimension 2.
    assert rep.max_eigs[0] == pytest.approx(-1.9, rel=1e-9)


def test_feasibility_monotone_in_tau(matrices):
    seed = seed_certificate(matrices, np.full(1, 0.9), np.full(4, 0.9), tau=0.01)
    rep = ls.check_feasibility(matrices, seed, 0.01)
    if rep.feasible:
        assert ls.check_feasibility(matrices, seed, 0.005).feasible


def test_zero_tau_benchmark_seed_feasible(matrices):
    # At zero delay only the delay-free cores matter; the analytic seed
    # (stability-equation P, small identity families) always passes.
    seed = seed_certificate(matrices, np.full(1, 0.9), np.full(4, 0.9), tau=0.0)
    rep = ls.check_feasibility(matrices, seed, 0.0)
    assert rep.feasible


# ---------------------------------------------------------------------------
# Delay-bound estimation


def test_scaling_bound_identity_cases():
    assert ls.spectral_ratio_bound(-np.eye(3), np.eye(3)) == pytest.approx(1.0)
    assert ls.spectral_ratio_bound(np.diag([-2.0, -5.0]), np.diag([1.0, 4.0])) == pytest.approx(0.5)
    comb = np.diag([-2.0, -5.0]) + 0.5 * np.diag([1.0, 4.0])
    assert np.all(np.linalg.eigvalsh(comb) < 0.0)


def test_scaling_bound_rejects_indefinite():
    with pytest.raises(ValueError, match="negative definite"):
        ls.spectral_ratio_bound(np.diag([1.0, -1.0]), np.eye(2))
    with pytest.raises(ValueError, match="positive definite"):
        ls.spectral_ratio_bound(-np.eye(2), np.diag([1.0, 0.0]))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_scaling_bound_one_sided_guarantee_general_pairs(dim, seed):
    """For arbitrary definite pairs, the bound guarantees negativity strictly
    inside the interval (tightness needs aligned extremal directions)."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim))
    m1 = -(a @ a.T) - 0.1 * np.eye(dim)
    b = rng.normal(size=(dim, dim))
    m2 = b @ b.T + 0.1 * np.eye(dim)
    xi = ls.spectral_ratio_bound(m1, m2)
    assert xi > 0.0
    comb = m1 + 0.999 * xi * m2
    assert np.max(np.linalg.eigvalsh(0.5 * (comb + comb.T))) < 0.0


def test_scaling_bound_tight_for_aligned_pairs():
    rng = np.random.default_rng(5)
    m1, m2 = aligned_definite_pair(rng, 6)
    xi = ls.spectral_ratio_bound(m1, m2)
    endpoint = np.max(np.linalg.eigvalsh(m1 + xi * m2))
    assert abs(endpoint) < 1e-9


def test_estimate_hand_ratios():
    # All three ratios computable by hand on the diagonal instance:
    # core 1 = -1.9, coupling 1 = 3*0.025*0.1 + 0.25/0.1 = 2.575;
    # core 2 = -0.1, coupling 2 = 3*0.25*0.1 = 0.075; channel term vacuous.
    est = ls.estimate_max_delay(_hand_instance(), _hand_certificate())
    assert est.ratios[0] == pytest.approx(1.9 / 2.575)
    assert est.ratios[1] == pytest.approx(0.1 / 0.075)
    assert est.ratios[2] == float("inf")
    assert est.tau == pytest.approx(1.9 / 2.575)


def test_estimate_degenerate_slope_bound_one(matrices):
    cert = seed_certificate(matrices, np.ones(1), np.full(4, 0.9), tau=0.01)
    est = ls.estimate_max_delay(matrices, cert)
    # Unit slope bound zeroes the pin-side core, collapsing the estimate.
    assert est.ratios[1] == 0.0
    assert est.tau == 0.0


def test_estimate_vacuous_channel_term():
    mats = _hand_instance()
    est = ls.estimate_max_delay(mats, _hand_certificate())
    assert est.ratios[2] == float("inf")
    assert np.isfinite(est.tau)
    assert any("vacuous" in n for n in est.notes)


def test_estimate_reports_undefined_terms(matrices):
    nn = matrices.dim
    eye = np.eye(nn)
    cert = Certificate(
        p_matrix=eye,
        q_pin=tuple(eye for _ in matrices.a_hat),
        q_chan=tuple(eye for _ in matrices.a_tilde),
        r_pin=tuple(eye for _ in matrices.a_hat),
        r_chan=tuple(eye for _ in matrices.a_tilde),
        d_pin=np.full(len(matrices.a_hat), 2.0),  # core becomes indefinite
        d_chan=np.zeros(len(matrices.a_tilde)),
    )
    est = ls.estimate_max_delay(matrices, cert)
    assert np.isnan(est.ratios[1]) and np.isnan(est.tau)
    assert any("not negative semidefinite" in n for n in est.notes)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_aligned_pairs_sweep(dim, seed):
    """The combined matrix stays negative semidefinite up to the bound and
    turns indefinite just past it (aligned extremal construction)."""
    rng = np.random.default_rng(seed)
    m1, m2 = aligned_definite_pair(rng, dim)
    xi = ls.spectral_ratio_bound(m1, m2)
    at = np.max(np.linalg.eigvalsh(m1 + xi * m2))
    past = np.max(np.linalg.eigvalsh(m1 + xi * 1.01 * m2))
    assert at <= 1e-9
    assert past > 0.0


# ---------------------------------------------------------------------------
# Pinned-agent companion stability


def test_benchmark_pin_gamma(plant, topology, gains):
    rep = ls.hurwitz_phi(plant, gains, topology, 0)
    assert np.allclose(rep.gamma, [1.01, 2.011, 6.87])
    assert rep.is_hurwitz and rep.cubic_ok


def test_zero_pin_gain_open_loop_stable(plant, topology):
    gains = GainSet(k_follower={}, k_pin={0: np.zeros(3)}, rho=1.0)
    rep = ls.hurwitz_phi(plant, gains, topology, 0)
    assert np.allclose(rep.gamma, [1.0, 2.0, 3.0])
    assert rep.is_hurwitz and rep.cubic_ok


def test_large_low_order_pin_gain_destabilizes(plant, topology):
    gains = GainSet(k_follower={}, k_pin={0: np.array([100.0, 0.0, 0.0])}, rho=1.0)
    rep = ls.hurwitz_phi(plant, gains, topology, 0)
    assert not rep.is_hurwitz and not rep.cubic_ok


def test_unpinned_agent_rejected(plant, topology, gains):
    with pytest.raises(ValueError, match="not pinned"):
        ls.hurwitz_phi(plant, gains, topology, 2)


# ---------------------------------------------------------------------------
# Search and archive


def test_search_rejects_unstable_f(plant, topology):
    gains = GainSet(
        k_follower={e: np.full(3, 1e-3) for e in topology.follower_delay_index},
        k_pin={i: np.array([100.0, 1e-3, 1e-3]) for i in topology.pin_delay_index},
        rho=1.0,
    )
    mats = ls.assemble_closed_loop(plant, topology, gains)
    res = ls.search_certificate(mats, 0.01)
    assert not res.feasible
    assert "not Hurwitz" in res.reason


def test_search_certificate_reverifies(matrices):
    res = ls.search_certificate(matrices, 0.02, budget=6000, d_pin=0.9, d_chan=0.9)
    assert res.feasible
    rep = ls.check_feasibility(matrices, res.certificate, 0.02)
    assert rep.feasible
    # Same certificate still passes at half the delay bound.
    assert ls.check_feasibility(matrices, res.certificate, 0.01).feasible


def test_infeasible_verdict_carries_margins(matrices):
    res = ls.search_certificate(matrices, 1000.0, budget=400, d_pin=0.9, d_chan=0.9)
    assert not res.feasible
    assert np.isfinite(res.best_margin)
    assert res.reason


def test_archive_round_trip(tmp_path, matrices):
    res = ls.search_certificate(
        matrices, 0.01, budget=4000, d_pin=0.9, d_chan=0.9, maximize_margin=False
    )
    assert res.feasible
    path = tmp_path / "certificate.json"
    ls.save_certificate(res.certificate, path)
    loaded = ls.load_certificate(path)
    assert np.array_equal(loaded.p_matrix, res.certificate.p_matrix)
    assert np.array_equal(loaded.d_pin, res.certificate.d_pin)
    for a, b in zip(loaded.q_chan, res.certificate.q_chan):
        assert np.array_equal(a, b)
    # The archived certificate independently re-verifies.
    assert ls.check_feasibility(matrices, loaded, 0.01).feasible
