"""Piecewise-linear time-varying delay profiles for every communication channel.

A profile is a random walk on knots spaced ``resample_dt`` apart whose
knot-to-knot slopes are drawn uniformly from a discrete set inside
[-slope_bound, +slope_bound] and whose values are hard-clipped to
[0, tau_star - eps); clipping only ever reduces a realized slope magnitude,
so both bounds hold pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLIP_FRACTION = 1e-6
SLOPE_LEVELS = 5


@dataclass(frozen=True)
class DelayProfile:
    """One channel's delay as a piecewise-linear function of time."""

    knot_times: np.ndarray
    knot_values: np.ndarray
    tau_star: float
    slope_bound: float

    def __post_init__(self):
        t = np.asarray(self.knot_times, dtype=float)
        v = np.asarray(self.knot_values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("knot arrays must be equal-length vectors of size >= 2")
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("knot times must be strictly increasing")
        if np.any(v < 0.0) or (self.tau_star > 0.0 and np.any(v >= self.tau_star)):
            raise ValueError("knot values must lie in [0, tau_star)")
        object.__setattr__(self, "knot_times", t)
        object.__setattr__(self, "knot_values", v)

    def value(self, t):
        """Delay at time ``t`` (constant extension outside the knot span)."""
        return np.interp(t, self.knot_times, self.knot_values)

    @staticmethod
    def constant(tau, horizon, tau_star=None):
        """A constant-delay profile; ``tau`` may be zero."""
        star = float(tau) * (1.0 + 2.0 * CLIP_FRACTION) if tau_star is None else float(tau_star)
        if tau > 0.0 and not star > tau:
            raise ValueError("tau_star must exceed the constant delay")
        return DelayProfile(
            knot_times=np.array([0.0, max(float(horizon), 1.0)]),
            knot_values=np.array([float(tau), float(tau)]),
            tau_star=star,
            slope_bound=0.0,
        )


def generate_delay_profile(seed, tau_star, slope_bound, resample_dt, horizon):
    """Draw a random admissible delay profile, deterministic in ``seed``."""
    if not tau_star > 0.0:
        raise ValueError("tau_star must be positive")
    if not 0.0 <= slope_bound <= 1.0:
        raise ValueError("slope_bound must lie in [0, 1]")
    if not resample_dt > 0.0:
        raise ValueError("resample_dt must be positive")
    if not horizon >= 0.0:
        raise ValueError("horizon must be nonnegative")
    rng = np.random.default_rng(seed)
    eps = CLIP_FRACTION * tau_star
    top = tau_star - eps
    n_knots = int(np.ceil(max(horizon, resample_dt) / resample_dt)) + 1
    times = resample_dt * np.arange(n_knots + 1)
    slopes = np.linspace(-slope_bound, slope_bound, SLOPE_LEVELS)
    values = np.empty(times.size)
    values[0] = rng.uniform(0.2, 0.8) * top
    for k in range(1, times.size):
        step = rng.choice(slopes) * resample_dt
        values[k] = min(max(values[k - 1] + step, 0.0), top)
    return DelayProfile(
        knot_times=times,
        knot_values=values,
        tau_star=float(tau_star),
        slope_bound=float(slope_bound),
    )


@dataclass(frozen=True)
class DelayProfileSet:
    """Profiles for every pin slot and follower channel of a topology."""

    pin_profiles: tuple
    channel_profiles: tuple

    @property
    def max_delay_bound(self):
        stars = [p.tau_star for p in self.pin_profiles] + [
            p.tau_star for p in self.channel_profiles
        ]
        return max(stars) if stars else 0.0

    @staticmethod
    def generate(topology, tau_star, slope_bound, resample_dt, horizon, seed):
        """Independent profiles per channel, spawned from one master seed."""
        seq = np.random.SeedSequence(seed)
        children = seq.spawn(topology.n_pins + topology.n_channels)
        pins = tuple(
            generate_delay_profile(children[l], tau_star, slope_bound, resample_dt, horizon)
            for l in range(topology.n_pins)
        )
        chans = tuple(
            generate_delay_profile(
                children[topology.n_pins + p], tau_star, slope_bound, resample_dt, horizon
            )
            for p in range(topology.n_channels)
        )
        return DelayProfileSet(pin_profiles=pins, channel_profiles=chans)

    @staticmethod
    def zero(topology, horizon=1.0):
        """All-zero delays (reduces the network to an undelayed system)."""
        z = DelayProfile.constant(0.0, horizon)
        return DelayProfileSet(
            pin_profiles=tuple(z for _ in range(topology.n_pins)),
            channel_profiles=tuple(z for _ in range(topology.n_channels)),
        )


def scan_profile(profile, grid_dt=1e-3, horizon=None):
    """Post-hoc admissibility scan: returns (max value, max |finite-difference
    slope|) of the profile on a dense grid."""
    t_end = profile.knot_times[-1] if horizon is None else horizon
    grid = np.arange(0.0, t_end + grid_dt, grid_dt)
    vals = profile.value(grid)
    slopes = np.abs(np.diff(vals)) / grid_dt
    return float(np.max(vals)), float(np.max(slopes)) if slopes.size else 0.0
