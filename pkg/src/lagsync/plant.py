"""Companion-form agent/leader dynamics and bounded exogenous disturbances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CompanionPlant:
    """Single-input chain-of-integrators plant in companion form.

    The state matrix has ones on the superdiagonal and ``-a_coeffs`` as its
    last row; the input vector is (0, ..., 0, b).  All coefficients must be
    positive, which in particular keeps the open loop's characteristic
    polynomial coefficients positive.
    """

    a_coeffs: np.ndarray
    b_gain: float

    def __post_init__(self):
        a = np.asarray(self.a_coeffs, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("a_coeffs must be a nonempty vector")
        if np.any(a <= 0.0):
            raise ValueError("all a_coeffs must be positive")
        if not self.b_gain > 0.0:
            raise ValueError("b_gain must be positive")
        object.__setattr__(self, "a_coeffs", a)
        object.__setattr__(self, "b_gain", float(self.b_gain))

    @property
    def order(self):
        return self.a_coeffs.size

    @property
    def a_matrix(self):
        n = self.order
        a = np.zeros((n, n))
        a[np.arange(n - 1), np.arange(1, n)] = 1.0
        a[n - 1, :] = -self.a_coeffs
        return a

    @property
    def b_vector(self):
        b = np.zeros(self.order)
        b[-1] = self.b_gain
        return b


def agent_rhs(plant, x, u, w):
    """State derivative A x + B u + B w of one agent."""
    x = np.asarray(x, dtype=float)
    if x.shape != (plant.order,):
        raise ValueError(f"state must have shape ({plant.order},), got {x.shape}")
    return plant.a_matrix @ x + plant.b_vector * (float(u) + float(w))


def leader_rhs(plant, x0):
    """Uncontrolled leader derivative A x0."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (plant.order,):
        raise ValueError(f"state must have shape ({plant.order},), got {x0.shape}")
    return plant.a_matrix @ x0


@dataclass(frozen=True)
class DisturbanceModel:
    """Per-agent scalar disturbances w_i(t) = a_i + b_i sin(2 pi f_i t).

    ``bound`` is the worst-case amplitude over all agents.  When built from
    coefficient ranges the bound is taken over the ranges (not the sampled
    coefficients), so a replayed draw keeps the declared bound.  The
    ``samples`` kind holds a zero-order-hold signal per agent with an
    explicitly declared bound, validated against the samples.
    """

    kind: str
    offsets: np.ndarray = field(default=None)
    amplitudes: np.ndarray = field(default=None)
    frequencies: np.ndarray = field(default=None)
    bound: float = 0.0
    sample_times: np.ndarray = field(default=None)
    sample_values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in ("zero", "biased-sinusoid", "samples"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "biased-sinusoid":
            a = np.asarray(self.offsets, dtype=float)
            b = np.asarray(self.amplitudes, dtype=float)
            f = np.asarray(self.frequencies, dtype=float)
            if not (a.shape == b.shape == f.shape) or a.ndim != 1:
                raise ValueError("offsets, amplitudes, frequencies must be equal-length vectors")
            if np.any(b <= 0.0) or np.any(f <= 0.0):
                raise ValueError("amplitudes and frequencies must be positive")
            object.__setattr__(self, "offsets", a)
            object.__setattr__(self, "amplitudes", b)
            object.__setattr__(self, "frequencies", f)
            implied = float(np.max(np.abs(a) + b))
            bound = float(self.bound) if self.bound else implied
            if bound + 1e-12 < implied:
                raise ValueError(f"declared bound {bound} below implied bound {implied}")
            object.__setattr__(self, "bound", bound)
        elif self.kind == "samples":
            t = np.asarray(self.sample_times, dtype=float)
            v = np.asarray(self.sample_values, dtype=float)
            if t.ndim != 1 or v.ndim != 2 or v.shape[1] != t.size:
                raise ValueError("sample_values must be (n_agents, len(sample_times))")
            if np.any(np.diff(t) <= 0.0):
                raise ValueError("sample_times must be strictly increasing")
            if not self.bound:
                raise ValueError("a sampled disturbance must declare its bound")
            if float(np.max(np.abs(v))) > float(self.bound) + 1e-12:
                raise ValueError("samples exceed the declared bound")
            object.__setattr__(self, "sample_times", t)
            object.__setattr__(self, "sample_values", v)
            object.__setattr__(self, "bound", float(self.bound))
        else:
            object.__setattr__(self, "bound", 0.0)

    @staticmethod
    def zero():
        return DisturbanceModel(kind="zero")

    @staticmethod
    def biased_sinusoid(offsets, amplitudes, frequencies, bound=None):
        return DisturbanceModel(
            kind="biased-sinusoid",
            offsets=np.asarray(offsets, dtype=float),
            amplitudes=np.asarray(amplitudes, dtype=float),
            frequencies=np.asarray(frequencies, dtype=float),
            bound=0.0 if bound is None else float(bound),
        )

    @staticmethod
    def from_ranges(n_agents, offset_range, amplitude_range, frequency_range, seed):
        """Draw per-agent coefficients once from the given ranges.

        The draw is deterministic in ``seed`` and the bound is the worst case
        over the ranges: max|offset| + max amplitude.
        """
        rng = np.random.default_rng(seed)
        lo, hi = map(float, offset_range)
        blo, bhi = map(float, amplitude_range)
        flo, fhi = map(float, frequency_range)
        if blo <= 0.0 or flo <= 0.0:
            raise ValueError("amplitude and frequency ranges must be positive")
        a = rng.uniform(lo, hi, size=n_agents)
        b = rng.uniform(blo, bhi, size=n_agents)
        f = rng.uniform(flo, fhi, size=n_agents)
        bound = max(abs(lo), abs(hi)) + bhi
        return DisturbanceModel.biased_sinusoid(a, b, f, bound=bound)

    @staticmethod
    def from_samples(sample_times, sample_values, bound):
        return DisturbanceModel(
            kind="samples",
            sample_times=np.asarray(sample_times, dtype=float),
            sample_values=np.asarray(sample_values, dtype=float),
            bound=float(bound),
        )


def disturbance_value(model, i, t):
    """Disturbance acting on agent ``i`` at time ``t`` (zero-order hold for
    sampled signals)."""
    if model.kind == "zero":
        return 0.0
    if model.kind == "biased-sinusoid":
        return float(
            model.offsets[i]
            + model.amplitudes[i] * np.sin(2.0 * np.pi * model.frequencies[i] * t)
        )
    idx = int(np.searchsorted(model.sample_times, t, side="right")) - 1
    idx = min(max(idx, 0), model.sample_times.size - 1)
    return float(model.sample_values[i, idx])


def disturbance_vector(model, n_agents, t):
    """All agents' disturbances at time ``t`` as a length-N vector."""
    if model.kind == "zero":
        return np.zeros(n_agents)
    if model.kind == "biased-sinusoid":
        return model.offsets + model.amplitudes * np.sin(
            2.0 * np.pi * model.frequencies * t
        )
    idx = int(np.searchsorted(model.sample_times, t, side="right")) - 1
    idx = min(max(idx, 0), model.sample_times.size - 1)
    return model.sample_values[:, idx].copy()


def disturbance_bound(model):
    """Worst-case disturbance magnitude over all agents and times."""
    return float(model.bound)
