"""Closed-loop network simulation and trajectory diagnostics.

The augmented state stacks all follower states, the leader state, the
per-agent integral states and the per-agent filter states.  Delayed
neighbour information is read from the integration history with linear
interpolation; an exactly-zero delay reads the current stage state, so the
undelayed closed loop integrates as a plain ODE.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .plant import disturbance_vector
from .stepper import SimulationDiverged, integrate_dde

PROTOCOL_KINDS = ("linear-only", "discontinuous", "smoothed")


@dataclass(frozen=True)
class SimTrace:
    """Uniform-grid record of one closed-loop run (write-once)."""

    times: np.ndarray
    agent_states: np.ndarray  # (K, N, n)
    leader_states: np.ndarray  # (K, n)
    controls: np.ndarray  # (K, N)
    sliding: np.ndarray  # (K, N)
    tracking_errors: np.ndarray  # (K, N)
    filter_states: np.ndarray = field(default=None)  # (K, N), switching filter
    lk_total: np.ndarray = field(default=None)  # optional (K,)

    def __post_init__(self):
        k = self.times.size
        for name in ("agent_states", "leader_states", "controls", "sliding", "tracking_errors"):
            arr = getattr(self, name)
            if arr.shape[0] != k:
                raise ValueError(f"{name} has {arr.shape[0]} rows for {k} time samples")
        dts = np.diff(self.times)
        if dts.size and not np.allclose(dts, dts[0], rtol=1e-9, atol=1e-12):
            raise ValueError("time grid must have a constant step")

    @property
    def n_agents(self):
        return self.agent_states.shape[1]

    @property
    def order(self):
        return self.agent_states.shape[2]

    @property
    def step(self):
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def errors_stacked(self):
        """Follower-minus-leader errors stacked agent-wise, shape (K, N*n)."""
        e = self.agent_states - self.leader_states[:, None, :]
        return e.reshape(e.shape[0], -1)

    def with_lk(self, lk_total):
        return SimTrace(
            times=self.times,
            agent_states=self.agent_states,
            leader_states=self.leader_states,
            controls=self.controls,
            sliding=self.sliding,
            tracking_errors=self.tracking_errors,
            filter_states=self.filter_states,
            lk_total=np.asarray(lk_total, dtype=float),
        )


def integrate(
    plant,
    topology,
    gains,
    profiles,
    disturbance,
    initial_states,
    leader_initial,
    protocol_kind,
    step,
    horizon,
    filter_scaling="consistent",
):
    """Simulate the delayed closed loop and return a SimTrace.

    ``initial_states`` is (N, n); pre-history on [-tau_max, 0] is the constant
    extension of the initial states.  ``protocol_kind`` is one of
    'linear-only', 'discontinuous' or 'smoothed'.
    """
    if protocol_kind not in PROTOCOL_KINDS:
        raise ValueError(f"protocol_kind must be one of {PROTOCOL_KINDS}")
    if filter_scaling not in ("consistent", "gain-scaled"):
        raise ValueError("filter_scaling must be 'consistent' or 'gain-scaled'")
    if not step > 0.0:
        raise ValueError("step must be positive")
    if horizon < 0.0:
        raise ValueError("horizon must be nonnegative")

    n_agents = topology.n_agents
    order = plant.order
    x_init = np.asarray(initial_states, dtype=float)
    if x_init.shape != (n_agents, order):
        raise ValueError(f"initial_states must have shape ({n_agents}, {order})")
    x0_init = np.asarray(leader_initial, dtype=float)
    if x0_init.shape != (order,):
        raise ValueError(f"leader_initial must have shape ({order},)")
    if len(profiles.pin_profiles) != topology.n_pins or len(
        profiles.channel_profiles
    ) != topology.n_channels:
        raise ValueError("profile set does not match the topology's delay channels")

    positive_bounds = [
        p.tau_star
        for p in (*profiles.pin_profiles, *profiles.channel_profiles)
        if p.tau_star > 0.0
    ]
    if positive_bounds and step >= min(positive_bounds):
        warnings.warn(
            f"step {step} is not below the smallest delay bound "
            f"{min(positive_bounds)}; delayed dynamics are under-resolved",
            stacklevel=2,
        )
    if protocol_kind == "smoothed" and gains.t_filter < 5.0 * step:
        warnings.warn(
            f"filter constant {gains.t_filter} below 5*step={5 * step}; "
            "the switching filter is under-resolved",
            stacklevel=2,
        )

    a_mat = plant.a_matrix
    a_t = a_mat.T
    a_colsum = a_mat.sum(axis=0)  # row vector 1'A
    b = plant.b_gain
    nn = n_agents * order

    # Per-channel edge tables: (i, j, weight, gain row).
    channel_tables = []
    for edges in topology.channel_edges():
        channel_tables.append(
            [
                (i, j, topology.adjacency[i, j], gains.k_follower[(i, j)])
                for (i, j) in edges
            ]
        )
    pin_table = [
        (l, i, topology.pinning[i], gains.k_pin[i])
        for i, l in sorted(topology.pin_delay_index.items())
    ]
    chan_profiles = profiles.channel_profiles
    pin_profiles = profiles.pin_profiles
    rho = gains.rho
    t_filter = gains.t_filter
    smoothed = protocol_kind == "smoothed"
    discontinuous = protocol_kind == "discontinuous"

    # Delay values tabulated on the half-step grid the stage times live on.
    all_profiles = list(chan_profiles) + list(pin_profiles)
    half = 0.5 * step
    n_half = 2 * int(round(horizon / step)) + 1
    half_grid = half * np.arange(n_half + 2)
    delay_table = np.array(
        [np.interp(half_grid, p.knot_times, p.knot_values) for p in all_profiles]
    ) if all_profiles else np.empty((0, half_grid.size))

    def delays_at(t):
        j = int(round(t / half))
        if 0 <= j < half_grid.size and abs(half_grid[j] - t) <= 1e-9 * max(1.0, abs(t)):
            return delay_table[:, j]
        return np.array([p.value(t) for p in all_profiles])

    def delayed_sums(t, y, sample):
        """L[i] = sum over incident channels of alpha * k . (x_i - x_other),
        evaluated at the channel's delayed time."""
        out = np.zeros(n_agents)
        if not all_profiles:
            return out
        taus = delays_at(t)
        lagged = taus > 0.0
        if lagged.any():
            batch = sample.batch(t - taus[lagged])
        rows = {}
        pos = 0
        for c in np.nonzero(lagged)[0]:
            rows[int(c)] = batch[pos]
            pos += 1
        n_chan = len(channel_tables)
        for p, table in enumerate(channel_tables):
            yd = rows.get(p, y)
            for i, j, alpha, kvec in table:
                diff = yd[i * order : (i + 1) * order] - yd[j * order : (j + 1) * order]
                out[i] += alpha * float(kvec @ diff)
        for l, i, alpha, kvec in pin_table:
            yd = rows.get(n_chan + l, y)
            diff = yd[i * order : (i + 1) * order] - yd[nn : nn + order]
            out[i] += alpha * float(kvec @ diff)
        return out

    # The discontinuous switching command is computed on the step grid and
    # held across the stage evaluations of that step (a sampled relay acting
    # on a continuous plant).  Re-evaluating sign(s) at interior stage times
    # would let the stage combination settle on an averaged equilibrium
    # inside the sliding band, hiding the switching the trace is meant to
    # expose.  The smoothed law's right-hand side is continuous (the relay
    # sits behind the filter), so its filter drive is evaluated per stage.
    held_sign = np.zeros(n_agents)

    def control_and_sliding(t, y, sample):
        x = y[:nn].reshape(n_agents, order)
        z = y[nn + order : nn + order + n_agents]
        ups = y[nn + order + n_agents :]
        lsum = delayed_sums(t, y, sample)
        s = x.sum(axis=1) + z
        if discontinuous and sample.t_last == t:
            held_sign[:] = np.sign(s)
        u = -lsum
        if discontinuous:
            u = u - rho * held_sign
        elif smoothed:
            u = u - rho * ups
        return u, s, lsum

    def rhs(t, y, sample):
        x = y[:nn].reshape(n_agents, order)
        x0 = y[nn : nn + order]
        ups = y[nn + order + n_agents :]
        u, s, lsum = control_and_sliding(t, y, sample)
        w = disturbance_vector(disturbance, n_agents, t)
        dx = x @ a_t
        dx[:, -1] += b * (u + w)
        dx0 = a_mat @ x0
        dz = b * lsum - x @ a_colsum
        if smoothed:
            target = np.sign(s) if filter_scaling == "consistent" else rho * np.sign(s)
            dups = (target - ups) / t_filter
        else:
            dups = np.zeros(n_agents)
        return np.concatenate([dx.ravel(), dx0, dz, dups])

    z0 = -x_init.sum(axis=1)
    y0 = np.concatenate([x_init.ravel(), x0_init, z0, np.zeros(n_agents)])

    k_total = int(round(horizon / step))
    controls = np.empty((k_total + 1, n_agents))
    sliding = np.empty((k_total + 1, n_agents))

    def observer(k, t, y, sample):
        u, s, _ = control_and_sliding(t, y, sample)
        controls[k] = u
        sliding[k] = s

    max_delay = profiles.max_delay_bound
    times, states = integrate_dde(
        rhs,
        y0,
        0.0,
        horizon,
        step,
        history=(lambda t: y0) if max_delay > 0.0 else None,
        max_delay=max_delay,
        observer=observer,
    )
    agent_states = states[:, :nn].reshape(-1, n_agents, order)
    leader_states = states[:, nn : nn + order]
    errors = np.linalg.norm(agent_states - leader_states[:, None, :], axis=2)
    return SimTrace(
        times=times,
        agent_states=agent_states,
        leader_states=leader_states,
        controls=controls,
        sliding=sliding,
        tracking_errors=errors,
        filter_states=states[:, nn + order + n_agents :],
    )


@dataclass(frozen=True)
class LkSeries:
    """Stability-functional samples along a trace.

    Components: quadratic error term, two delayed-window integrals and two
    doubly-weighted derivative integrals; ``total`` is their sum.  Samples
    whose integration window starts before the trace are NaN.
    """

    times: np.ndarray
    components: np.ndarray  # (K, 5)
    total: np.ndarray  # (K,)


def _window_prefix_integral(times, values, window_starts):
    """Vectorized trapezoid integral of ``values`` over [window_starts[k], t_k].

    ``values`` may be (K,) or (K, 2) column-stacked integrands sharing the
    same windows.  Window starts below times[0] yield NaN.
    """
    step = times[1] - times[0]
    vals = values if values.ndim == 2 else values[:, None]
    prefix = np.zeros((times.size, vals.shape[1]))
    np.cumsum(0.5 * (vals[1:] + vals[:-1]) * step, axis=0, out=prefix[1:])

    a = np.asarray(window_starts, dtype=float)
    bad = a < times[0] - 1e-12
    a_cl = np.clip(a, times[0], times[-1])
    pos = (a_cl - times[0]) / step
    j = np.minimum(pos.astype(int), times.size - 2)
    frac = pos - j
    v_a = vals[j] + (vals[j + 1] - vals[j]) * frac[:, None]
    # Integral from times[0] to a: prefix up to knot j plus a partial trapezoid.
    partial = 0.5 * (vals[j] + v_a) * (frac * step)[:, None]
    prefix_at_a = prefix[j] + partial
    k_idx = np.arange(times.size)
    out = prefix[k_idx] - prefix_at_a
    out[bad] = np.nan
    return out if values.ndim == 2 else out[:, 0]


def evaluate_lk_functional(trace, certificate, profiles):
    """Evaluate the delay-robust stability functional along a trace.

    Uses the certificate's matrices and the delay profiles the trace was run
    with; derivative terms use central finite differences of the stacked
    error.  Returns an LkSeries aligned to the trace grid.
    """
    times = trace.times
    if times.size < 3:
        raise ValueError("trace too short to evaluate the functional")
    step = trace.step
    e = trace.errors_stacked()
    nn = e.shape[1]
    if certificate.p_matrix.shape != (nn, nn):
        raise ValueError(
            f"certificate dimension {certificate.p_matrix.shape} does not match "
            f"stacked error dimension {nn}"
        )
    max_bound = profiles.max_delay_bound
    if times[-1] - times[0] < max_bound:
        raise ValueError("trace shorter than the largest delay bound")

    edot = np.empty_like(e)
    edot[1:-1] = (e[2:] - e[:-2]) / (2.0 * step)
    edot[0] = (e[1] - e[0]) / step
    edot[-1] = (e[-1] - e[-2]) / step

    def quad_series(mat, vecs):
        return np.einsum("ki,ij,kj->k", vecs, mat, vecs)

    v1 = quad_series(certificate.p_matrix, e)
    v2 = np.zeros(times.size)
    v3 = np.zeros(times.size)
    v4 = np.zeros(times.size)
    v5 = np.zeros(times.size)

    def add_window_terms(profile, q_mat, r_mat, v_quad_acc, v_weight_acc):
        tau_t = np.asarray(profile.value(times), dtype=float)
        starts = times - tau_t
        q_series = quad_series(q_mat, e)
        v_quad_acc += _window_prefix_integral(times, q_series, starts)
        r_series = quad_series(r_mat, edot)
        pair = np.column_stack([r_series, r_series * times])
        ints = _window_prefix_integral(times, pair, starts)
        # Integral of r(s) * (s - t + tau(t)) over [t - tau(t), t].
        v_weight_acc += ints[:, 1] + (tau_t - times) * ints[:, 0]

    for l, profile in enumerate(profiles.pin_profiles):
        add_window_terms(profile, certificate.q_pin[l], certificate.r_pin[l], v2, v4)
    for p, profile in enumerate(profiles.channel_profiles):
        add_window_terms(profile, certificate.q_chan[p], certificate.r_chan[p], v3, v5)

    components = np.column_stack([v1, v2, v3, v4, v5])
    total = components.sum(axis=1)
    return LkSeries(times=times, components=components, total=total)


TRACE_FORMAT_VERSION = 1


def trace_header(n_agents, order):
    cols = ["t"]
    cols += [f"x{i + 1}_{k + 1}" for i in range(n_agents) for k in range(order)]
    cols += [f"x0_{k + 1}" for k in range(order)]
    cols += [f"u{i + 1}" for i in range(n_agents)]
    cols += [f"s{i + 1}" for i in range(n_agents)]
    cols += [f"err{i + 1}" for i in range(n_agents)]
    cols.append("V")
    return cols


def write_trace_csv(trace, path):
    """Serialize a trace; floats use shortest round-trip formatting so a
    rerun with identical inputs is byte-identical.  A run that integrated no
    steps yields a header-only file."""
    n_agents, order = trace.n_agents, trace.order
    lk = trace.lk_total
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_header(n_agents, order))
        if trace.times.size <= 1:
            return
        for k in range(trace.times.size):
            row = [repr(float(trace.times[k]))]
            row += [repr(float(v)) for v in trace.agent_states[k].ravel()]
            row += [repr(float(v)) for v in trace.leader_states[k]]
            row += [repr(float(v)) for v in trace.controls[k]]
            row += [repr(float(v)) for v in trace.sliding[k]]
            row += [repr(float(v)) for v in trace.tracking_errors[k]]
            row.append(repr(float(lk[k])) if lk is not None else "nan")
            writer.writerow(row)


def read_trace_csv(path):
    """Read a trace CSV into a dict of named float columns."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows, dtype=float) if rows else np.empty((0, len(header)))
    return {name: data[:, idx] for idx, name in enumerate(header)}


def write_profiles_csv(profiles, path):
    """Serialize delay-profile knots for replay inspection."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "index", "knot_t", "knot_tau"])
        for l, prof in enumerate(profiles.pin_profiles):
            for t, v in zip(prof.knot_times, prof.knot_values):
                writer.writerow(["pin", l, repr(float(t)), repr(float(v))])
        for p, prof in enumerate(profiles.channel_profiles):
            for t, v in zip(prof.knot_times, prof.knot_values):
                writer.writerow(["channel", p, repr(float(t)), repr(float(v))])


__all__ = [
    "PROTOCOL_KINDS",
    "SimTrace",
    "LkSeries",
    "SimulationDiverged",
    "integrate",
    "evaluate_lk_functional",
    "write_trace_csv",
    "read_trace_csv",
    "write_profiles_csv",
    "trace_header",
]
