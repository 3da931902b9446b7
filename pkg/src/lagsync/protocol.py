"""Distributed consensus control law.

Three variants share the delayed linear term: ``linear-only`` applies it
alone, ``discontinuous`` adds the switching term -rho*sign(s_i) on an
integral sliding surface, and ``smoothed`` replaces the switching term with
a first-order-filtered version to remove chattering.

The sliding surface is s_i = 1' x_i + z_i with z_i(0) = -1' x_i(0), so every
agent starts exactly on its surface.  The integral state is driven so that
the surface dynamics reduce to s_i' = b (w_i - rho sign(s_i)): the delayed
linear part of the control and the plant drift 1'Ax_i both cancel through
z_i'.  With rho above the disturbance bound the surface is invariant and the
switching term reconstructs -w_i on average, which is what rejects the
perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GainSet:
    """Constant protocol gains.

    k_follower maps a directed edge (i, j) to a length-n gain row, k_pin maps
    a pinned agent to its leader-link gain row.  Entries must be nonnegative
    and finite; the strict positivity required when the gains are being
    optimized is enforced by the tuner, not here, so that zero-gain
    configurations remain expressible for analysis.
    """

    k_follower: dict
    k_pin: dict
    rho: float = 0.0
    t_filter: float = 0.01

    def __post_init__(self):
        kf = {}
        for (i, j), vec in self.k_follower.items():
            v = np.asarray(vec, dtype=float)
            if v.ndim != 1:
                raise ValueError(f"gain for edge ({i}, {j}) must be a vector")
            if np.any(~np.isfinite(v)) or np.any(v < 0.0):
                raise ValueError(f"gain for edge ({i}, {j}) must be finite and nonnegative")
            kf[(int(i), int(j))] = v
        kp = {}
        for i, vec in self.k_pin.items():
            v = np.asarray(vec, dtype=float)
            if v.ndim != 1:
                raise ValueError(f"pin gain for agent {i} must be a vector")
            if np.any(~np.isfinite(v)) or np.any(v < 0.0):
                raise ValueError(f"pin gain for agent {i} must be finite and nonnegative")
            kp[int(i)] = v
        object.__setattr__(self, "k_follower", kf)
        object.__setattr__(self, "k_pin", kp)
        if self.rho < 0.0:
            raise ValueError("rho must be nonnegative")
        if not self.t_filter > 0.0:
            raise ValueError("t_filter must be positive")

    def order(self):
        for v in self.k_follower.values():
            return v.size
        for v in self.k_pin.values():
            return v.size
        raise ValueError("gain set is empty")

    def stacked(self):
        """All gain entries as one vector, pins first, canonical order."""
        parts = [self.k_pin[i] for i in sorted(self.k_pin)]
        parts += [self.k_follower[e] for e in sorted(self.k_follower)]
        return np.concatenate(parts) if parts else np.empty(0)

    def with_stacked(self, values):
        """Rebuild a GainSet from a vector produced by ``stacked``."""
        values = np.asarray(values, dtype=float)
        n = self.order()
        kp, kf = {}, {}
        pos = 0
        for i in sorted(self.k_pin):
            kp[i] = values[pos : pos + n].copy()
            pos += n
        for e in sorted(self.k_follower):
            kf[e] = values[pos : pos + n].copy()
            pos += n
        if pos != values.size:
            raise ValueError(f"expected {pos} gain entries, got {values.size}")
        return GainSet(k_follower=kf, k_pin=kp, rho=self.rho, t_filter=self.t_filter)


@dataclass
class ControllerState:
    """Integral states z_i and filter states v_i, owned by the simulator."""

    z: np.ndarray
    upsilon: np.ndarray

    @staticmethod
    def initial(initial_states):
        x = np.atleast_2d(np.asarray(initial_states, dtype=float))
        return ControllerState(z=-x.sum(axis=1), upsilon=np.zeros(x.shape[0]))


def sign0(s):
    """Sign with sign(0) = 0, elementwise."""
    return np.sign(s)


def linear_consensus_term(gains, topology, delayed_states):
    """Delayed linear part of the control, one scalar per agent.

    ``delayed_states`` maps each incident channel to the pair of delayed
    states it compares: key ("edge", i, j) -> (x_i(t - tau), x_j(t - tau))
    and key ("pin", i) -> (x_i(t - tau), x_0(t - tau)).  Returns
    u_lin[i] = -sum_j alpha_ij k_ij (x_i - x_j)(t - tau_ij), including the
    leader term for pinned agents.
    """
    n_agents = topology.n_agents
    out = np.zeros(n_agents)
    for (i, j) in topology.follower_delay_index:
        key = ("edge", i, j)
        if key not in delayed_states:
            raise KeyError(f"missing delayed sample for edge ({i}, {j})")
        xi_d, xj_d = delayed_states[key]
        out[i] -= topology.adjacency[i, j] * float(gains.k_follower[(i, j)] @ (np.asarray(xi_d) - np.asarray(xj_d)))
    for i in topology.pin_delay_index:
        key = ("pin", i)
        if key not in delayed_states:
            raise KeyError(f"missing delayed sample for pin on agent {i}")
        xi_d, x0_d = delayed_states[key]
        out[i] -= topology.pinning[i] * float(gains.k_pin[i] @ (np.asarray(xi_d) - np.asarray(x0_d)))
    return out


def sliding_value(x_i, z_i):
    """s_i = 1' x_i + z_i."""
    return float(np.sum(np.asarray(x_i, dtype=float)) + z_i)


def z_rhs(plant, gains, topology, i, x_i, delayed_states):
    """Integral-state derivative for agent ``i``.

    Chosen so that s_i' = 1' x_i' + z_i' collapses to b (w_i - rho sign s_i):
    the delayed sum re-enters with opposite sign to the control's linear part
    and the drift term 1'Ax_i is subtracted.
    """
    x_i = np.asarray(x_i, dtype=float)
    if x_i.shape != (plant.order,):
        raise ValueError(f"state must have shape ({plant.order},), got {x_i.shape}")
    lin = linear_consensus_term(gains, topology, delayed_states)
    # lin[i] = -(delayed sum); z_i' = +b*(delayed sum) - 1'A x_i.
    return float(-plant.b_gain * lin[i] - np.sum(plant.a_matrix @ x_i))


def control_discontinuous(gains, s_i, linear_term):
    """u_i = linear_term - rho * sign(s_i), with sign(0) = 0."""
    return float(linear_term - gains.rho * np.sign(s_i))


def control_smoothed(gains, s_i, upsilon_i, linear_term, scaling="consistent"):
    """Chattering-free control and the filter-state derivative.

    Returns (u_i, v_i') with u_i = linear_term - rho * v_i.  Under
    ``consistent`` scaling the filter tracks sign(s_i) so rho*v_i estimates
    the disturbance; ``gain-scaled`` filters rho*sign(s_i) instead, which
    double-scales the switching term (kept available for comparison).
    """
    if not gains.t_filter > 0.0:
        raise ValueError("t_filter must be positive")
    u = float(linear_term - gains.rho * upsilon_i)
    if scaling == "consistent":
        target = np.sign(s_i)
    elif scaling == "gain-scaled":
        target = gains.rho * np.sign(s_i)
    else:
        raise ValueError(f"unknown filter scaling {scaling!r}")
    dv = float((target - upsilon_i) / gains.t_filter)
    return u, dv
