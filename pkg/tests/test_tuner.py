import numpy as np
import pytest

import lagsync as ls
from lagsync.protocol import GainSet
from lagsync.tuner import TuneConfig, TuneFailure, objective, run_algorithm1


@pytest.fixture(scope="module")
def small_system():
    """Two agents, one pin, one edge: fast to certify."""
    plant = ls.CompanionPlant(a_coeffs=np.array([1.0, 2.0]), b_gain=1.0)
    topo = ls.DirectedTopology(
        adjacency=np.array([[0.0, 1.0], [0.0, 0.0]]), pinning=np.array([0.0, 1.0])
    )
    gains = GainSet(
        k_follower={(0, 1): np.array([0.05, 0.1])},
        k_pin={1: np.array([0.05, 0.1])},
        rho=1.0,
    )
    return plant, topo, gains


def quick_config(**overrides):
    base = dict(
        tau_seed=0.02,
        outer_budget=2,
        inner_budget=3,
        search_budget=2500,
        slope_bound=0.9,
        seed=0,
    )
    base.update(overrides)
    return TuneConfig(**base)


def test_objective_rejects_nonpositive_gains(small_system):
    plant, topo, _ = small_system
    zeroed = GainSet(
        k_follower={(0, 1): np.array([0.0, 0.1])},
        k_pin={1: np.array([0.05, 0.1])},
        rho=1.0,
    )
    value, result, reason = objective(plant, topo, zeroed, 0.02, quick_config())
    assert value is None and result is None
    assert "positivity" in reason


def test_objective_rejects_unstable_pin():
    # Third order: a huge gain on the lowest coefficient breaks stability.
    plant = ls.CompanionPlant(a_coeffs=np.array([1.0, 2.0, 3.0]), b_gain=1.0)
    topo = ls.DirectedTopology(
        adjacency=np.array([[0.0, 1.0], [0.0, 0.0]]), pinning=np.array([0.0, 1.0])
    )
    unstable = GainSet(
        k_follower={(0, 1): np.array([0.05, 0.1, 0.1])},
        k_pin={1: np.array([100.0, 1e-4, 1e-4])},
        rho=1.0,
    )
    value, result, reason = objective(plant, topo, unstable, 0.02, quick_config())
    assert value is None
    assert "not stable" in reason


def test_objective_benchmark_gains_positive(plant, topology, gains):
    value, result, reason = objective(plant, topology, gains, 0.02, quick_config())
    assert value is not None and value > 0.0
    assert result.feasible and reason == ""


def test_budget_one_returns_seed_certification(small_system):
    plant, topo, gains = small_system
    result = run_algorithm1(plant, topo, gains, quick_config(outer_budget=1))
    assert len(result.history) == 1
    assert result.history[0].note == "seed certification"
    assert result.tau == pytest.approx(0.02)
    rep = ls.check_feasibility(
        ls.assemble_closed_loop(plant, topo, result.gains), result.certificate, result.tau
    )
    assert rep.feasible


def test_unreachable_leader_rejected(small_system):
    plant, _, gains = small_system
    topo = ls.DirectedTopology(
        adjacency=np.zeros((2, 2)), pinning=np.array([0.0, 1.0])
    )
    bad_gains = GainSet(k_follower={}, k_pin={1: np.array([0.05, 0.1])}, rho=1.0)
    with pytest.raises(ValueError, match="leader"):
        run_algorithm1(plant, topo, bad_gains, quick_config())


def test_infeasible_seed_tau_fails_with_margins(small_system):
    plant, topo, gains = small_system
    with pytest.raises(TuneFailure) as err:
        run_algorithm1(plant, topo, gains, quick_config(tau_seed=500.0, search_budget=300))
    assert err.value.search_result is not None
    assert np.isfinite(err.value.search_result.best_margin)


def test_monotone_history_and_determinism(small_system):
    plant, topo, gains = small_system
    cfg = quick_config(outer_budget=3, inner_budget=4)
    result = run_algorithm1(plant, topo, gains, cfg)
    taus = [it.tau for it in result.history]
    assert all(b >= a for a, b in zip(taus, taus[1:]))
    objectives = [it.objective for it in result.history]
    assert all(b >= a - 1e-15 for a, b in zip(objectives, objectives[1:]))
    # Every history entry marked feasible carries a certificate that
    # independently re-verifies at that entry's bound.
    for it in result.history:
        assert it.feasible
        mats = ls.assemble_closed_loop(plant, topo, gains.with_stacked(np.asarray(it.gains_stacked)))
        assert ls.check_feasibility(mats, it.certificate, it.tau).feasible
    again = run_algorithm1(plant, topo, gains, cfg)
    assert [it.objective for it in again.history] == objectives
    assert again.tau == result.tau
    assert np.array_equal(again.gains.stacked(), result.gains.stacked())


def test_config_validation():
    with pytest.raises(ValueError, match="gain_lower"):
        TuneConfig(gain_lower=0.0)
    with pytest.raises(ValueError, match="tau_seed"):
        TuneConfig(tau_seed=0.0)
    with pytest.raises(ValueError, match="step_factor"):
        TuneConfig(step_factor=1.0)
