"""Leader-following consensus under multiple time-varying communication delays:
simulation, delay-robust certification, and gain tuning."""

from .certify import (
    Certificate,
    ClosedLoopMatrices,
    DelayEstimate,
    LmiReport,
    SearchResult,
    assemble_closed_loop,
    check_feasibility,
    estimate_max_delay,
    hurwitz_phi,
    load_certificate,
    save_certificate,
    search_certificate,
    seed_certificate,
    spectral_ratio_bound,
)
from .delays import DelayProfile, DelayProfileSet, generate_delay_profile
from .plant import (
    CompanionPlant,
    DisturbanceModel,
    agent_rhs,
    disturbance_bound,
    disturbance_value,
    leader_rhs,
)
from .protocol import (
    ControllerState,
    GainSet,
    control_discontinuous,
    control_smoothed,
    linear_consensus_term,
    sliding_value,
    z_rhs,
)
from .sim import (
    LkSeries,
    SimTrace,
    SimulationDiverged,
    evaluate_lk_functional,
    integrate,
    read_trace_csv,
    write_trace_csv,
)
from .topology import DirectedTopology, build_delay_index, leader_globally_reachable

__version__ = "0.1.0"
