import numpy as np
import pytest

import lagsync as ls
from lagsync.delays import DelayProfileSet
from lagsync.fixtures import (
    FIXTURE_DELAY_SEED,
    FIXTURE_HORIZON,
    FIXTURE_RESAMPLE_DT,
    FIXTURE_SLOPE_BOUND,
    FIXTURE_STEP,
    FIXTURE_TAU_STAR,
    fixture_disturbance,
    fixture_gains,
    fixture_initial_states,
    fixture_plant,
    fixture_topology,
)


@pytest.fixture(scope="session")
def plant():
    return fixture_plant()


@pytest.fixture(scope="session")
def topology():
    return fixture_topology()


@pytest.fixture(scope="session")
def gains():
    return fixture_gains()


@pytest.fixture(scope="session")
def matrices(plant, topology, gains):
    return ls.assemble_closed_loop(plant, topology, gains)


@pytest.fixture(scope="session")
def initial_states():
    return fixture_initial_states()


@pytest.fixture(scope="session")
def benchmark_profiles(topology):
    return DelayProfileSet.generate(
        topology,
        FIXTURE_TAU_STAR,
        FIXTURE_SLOPE_BOUND,
        FIXTURE_RESAMPLE_DT,
        FIXTURE_HORIZON,
        FIXTURE_DELAY_SEED,
    )


@pytest.fixture(scope="session")
def disturbance():
    return fixture_disturbance()


def run_benchmark(protocol_kind, disturbed, horizon=FIXTURE_HORIZON):
    plant = fixture_plant()
    topology = fixture_topology()
    gains = fixture_gains()
    followers, leader = fixture_initial_states()
    profiles = DelayProfileSet.generate(
        topology,
        FIXTURE_TAU_STAR,
        FIXTURE_SLOPE_BOUND,
        FIXTURE_RESAMPLE_DT,
        horizon,
        FIXTURE_DELAY_SEED,
    )
    model = fixture_disturbance() if disturbed else ls.DisturbanceModel.zero()
    return ls.integrate(
        plant,
        topology,
        gains,
        profiles,
        model,
        followers,
        leader,
        protocol_kind,
        FIXTURE_STEP,
        horizon,
    )


@pytest.fixture(scope="session")
def fig4_traces():
    """Smoothed and discontinuous benchmark runs on the same seed."""
    return run_benchmark("smoothed", True), run_benchmark("discontinuous", True)


@pytest.fixture(scope="session")
def fig2_trace():
    return run_benchmark("linear-only", False)


@pytest.fixture(scope="session")
def fig3_trace():
    return run_benchmark("linear-only", True)


@pytest.fixture(scope="session")
def certified_bundle(matrices):
    """A verified certificate for the benchmark network at a 0.05 s bound."""
    result = ls.search_certificate(
        matrices, 0.05, epsilon=1e-8, budget=8000, d_pin=0.9, d_chan=0.9
    )
    assert result.feasible, result.reason
    return result


def aligned_definite_pair(rng, dim):
    """Random (negative definite, positive definite) pair sharing an
    eigenbasis with aligned extremal eigenvectors, so the spectral delay
    bound is tight at its endpoint."""
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    neg = -np.sort(rng.uniform(0.1, 10.0, dim))  # descending: closest to 0 first
    pos = np.sort(rng.uniform(0.1, 10.0, dim))[::-1]  # descending: largest first
    m1 = (q * neg) @ q.T
    m2 = (q * pos) @ q.T
    return 0.5 * (m1 + m1.T), 0.5 * (m2 + m2.T)
