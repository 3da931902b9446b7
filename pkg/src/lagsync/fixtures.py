"""Built-in benchmark system: four third-order agents plus a leader.

This is the network the ``reproduce-paper`` command runs.  Gains were
produced by the delay-bound optimization for this topology; initial states
and disturbance ranges match the published experiment.
"""

from __future__ import annotations

import numpy as np

from .plant import CompanionPlant, DisturbanceModel
from .protocol import GainSet
from .topology import DirectedTopology

FIXTURE_TAU_STAR = 0.8
FIXTURE_SLOPE_BOUND = 0.99
FIXTURE_RESAMPLE_DT = 0.5
FIXTURE_GAMMA = 9.0
FIXTURE_RHO = 10.0
FIXTURE_T_FILTER = 0.01
FIXTURE_STEP = 5e-4
FIXTURE_HORIZON = 40.0
FIXTURE_DELAY_SEED = 20260808
FIXTURE_DISTURBANCE_SEED = 330


def fixture_plant():
    return CompanionPlant(a_coeffs=np.array([1.0, 2.0, 3.0]), b_gain=1.0)


def fixture_topology():
    adjacency = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 1.0],
            [1.0, 1.0, 0.0, 0.0],
        ]
    )
    pinning = np.array([1.0, 0.0, 0.0, 0.0])
    return DirectedTopology(adjacency=adjacency, pinning=pinning)


def fixture_gains(rho=FIXTURE_RHO, t_filter=FIXTURE_T_FILTER):
    # 0-based agent ids; edge (i, j) means i listens to j.
    k_follower = {
        (0, 2): np.array([0.001, 0.822, 0.188]),
        (1, 3): np.array([0.01, 0.01, 0.143]),
        (2, 3): np.array([0.01, 0.01, 0.01]),
        (3, 0): np.array([0.01, 0.01, 0.01]),
        (3, 1): np.array([0.80, 0.11, 1.61]),
    }
    k_pin = {0: np.array([0.01, 0.011, 3.87])}
    return GainSet(k_follower=k_follower, k_pin=k_pin, rho=rho, t_filter=t_filter)


def fixture_initial_states():
    followers = np.array(
        [
            [-1.0, 13.0, -8.0],
            [-4.0, 8.0, 5.0],
            [4.0, -13.0, 5.0],
            [13.0, -12.0, 0.0],
        ]
    )
    leader = np.array([-12.0, 9.0, 4.0])
    return followers, leader


def fixture_disturbance(seed=FIXTURE_DISTURBANCE_SEED):
    """Biased sinusoids drawn once from the benchmark ranges (bound 9)."""
    return DisturbanceModel.from_ranges(
        n_agents=4,
        offset_range=(-3.0, 3.0),
        amplitude_range=(1.0, 6.0),
        frequency_range=(1.0, 3.0),
        seed=seed,
    )


def fixture_config(protocol_kind="linear-only", disturbed=False):
    """Full experiment config for the benchmark network."""
    from .config import ExperimentConfig

    if disturbed:
        disturbance = {
            "kind": "biased-sinusoid-ranges",
            "offset_range": [-3.0, 3.0],
            "amplitude_range": [1.0, 6.0],
            "frequency_range": [1.0, 3.0],
            "seed": FIXTURE_DISTURBANCE_SEED,
        }
    else:
        disturbance = {"kind": "zero"}
    return ExperimentConfig.from_dict(
        {
            "plant": {"a_coeffs": [1.0, 2.0, 3.0], "b_gain": 1.0},
            "topology": {
                "adjacency": [
                    [0.0, 0.0, 1.0, 0.0],
                    [0.0, 0.0, 0.0, 1.0],
                    [0.0, 0.0, 0.0, 1.0],
                    [1.0, 1.0, 0.0, 0.0],
                ],
                "pinning": [1.0, 0.0, 0.0, 0.0],
            },
            "gains": {
                "follower": {
                    "1,3": [0.001, 0.822, 0.188],
                    "2,4": [0.01, 0.01, 0.143],
                    "3,4": [0.01, 0.01, 0.01],
                    "4,1": [0.01, 0.01, 0.01],
                    "4,2": [0.80, 0.11, 1.61],
                },
                "pin": {"1": [0.01, 0.011, 3.87]},
                "rho": FIXTURE_RHO,
                "t_filter": FIXTURE_T_FILTER,
                "filter_scaling": "consistent",
            },
            "delays": {
                "tau_star": FIXTURE_TAU_STAR,
                "slope_bound": FIXTURE_SLOPE_BOUND,
                "resample_dt": FIXTURE_RESAMPLE_DT,
                "seed": FIXTURE_DELAY_SEED,
            },
            "disturbance": disturbance,
            "protocol_kind": protocol_kind,
            "initial": {
                "followers": [
                    [-1.0, 13.0, -8.0],
                    [-4.0, 8.0, 5.0],
                    [4.0, -13.0, 5.0],
                    [13.0, -12.0, 0.0],
                ],
                "leader": [-12.0, 9.0, 4.0],
            },
            "integrator": {"step": FIXTURE_STEP, "horizon": FIXTURE_HORIZON},
            "certify": {"margin": 1e-8, "search_budget": 8000, "slope_bound": 0.9},
            "tuner": {
                "tau_seed": 0.05,
                "outer_budget": 2,
                "inner_budget": 4,
                "search_budget": 6000,
            },
            "output": {"directory": "runs/benchmark"},
        }
    )


def fixture_initial_state_dict():
    followers, leader = fixture_initial_states()
    return {"followers": followers.tolist(), "leader": leader.tolist()}
