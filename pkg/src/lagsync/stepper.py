"""Fixed-step integration core for delay differential equations.

The classic 4-stage fourth-order step is applied to y' = f(t, y, sample),
where ``sample`` reads past values of y from a history buffer by linear
interpolation.  Queries at the current stage time return the stage state
itself, so a zero-delay channel reduces exactly to the undelayed method;
queries between the last accepted point and the stage time blend toward the
stage state.
"""

from __future__ import annotations

import numpy as np


class SimulationDiverged(RuntimeError):
    """Raised when the integrated state stops being finite."""

    def __init__(self, t):
        super().__init__(f"state became non-finite at t = {t:.6g}")
        self.t = float(t)


class HistoryBuffer:
    """Append-only record of (time, state) samples with linear interpolation.

    Samples are strictly increasing in time and span at least the largest
    active delay below the current time; queries before the first sample
    clamp to it (constant pre-history extension).
    """

    def __init__(self, dim, capacity=1024):
        self._t = np.empty(capacity)
        self._y = np.empty((capacity, dim))
        self._n = 0

    @property
    def size(self):
        return self._n

    @property
    def latest_time(self):
        return self._t[self._n - 1]

    def times(self):
        return self._t[: self._n]

    def states(self):
        return self._y[: self._n]

    def append(self, t, y):
        if self._n and t <= self._t[self._n - 1]:
            raise ValueError(
                f"history times must increase: {t} after {self._t[self._n - 1]}"
            )
        if self._n == self._t.size:
            self._t = np.concatenate([self._t, np.empty(self._t.size)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._t[self._n] = t
        self._y[self._n] = y
        self._n += 1

    def sample(self, tq):
        """State at time ``tq`` by linear interpolation between samples
        (clamped outside the recorded span)."""
        n = self._n
        if n == 0:
            raise ValueError("history buffer is empty")
        t = self._t
        if tq <= t[0]:
            return self._y[0]
        if tq >= t[n - 1]:
            return self._y[n - 1]
        hi = int(np.searchsorted(t[:n], tq, side="right"))
        lo = hi - 1
        w = (tq - t[lo]) / (t[hi] - t[lo])
        return (1.0 - w) * self._y[lo] + w * self._y[hi]

    def sample_batch(self, tqs):
        """States at several query times, shape (len(tqs), dim)."""
        n = self._n
        if n == 0:
            raise ValueError("history buffer is empty")
        t = self._t[:n]
        tqs = np.asarray(tqs, dtype=float)
        if n == 1:
            return np.broadcast_to(self._y[0], (tqs.size, self._y.shape[1])).copy()
        idx = np.clip(np.searchsorted(t, tqs, side="right") - 1, 0, n - 2)
        span = t[idx + 1] - t[idx]
        w = np.clip((tqs - t[idx]) / span, 0.0, 1.0)[:, None]
        return (1.0 - w) * self._y[idx] + w * self._y[idx + 1]


class _StageSampler:
    """History access during one stage evaluation.

    Queries at or beyond the stage time return the stage state itself;
    queries between the last accepted point and the stage time blend toward
    the stage state; earlier queries read the buffer.
    """

    __slots__ = ("buffer", "t_stage", "y_stage", "t_last", "y_last")

    def __init__(self, buffer, t_stage, y_stage):
        self.buffer = buffer
        self.t_stage = t_stage
        self.y_stage = y_stage
        self.t_last = buffer.latest_time
        self.y_last = buffer.states()[-1]

    def __call__(self, tq):
        if tq >= self.t_stage:
            return self.y_stage
        if tq > self.t_last:
            w = (tq - self.t_last) / (self.t_stage - self.t_last)
            return (1.0 - w) * self.y_last + w * self.y_stage
        return self.buffer.sample(tq)

    def batch(self, tqs):
        tqs = np.asarray(tqs, dtype=float)
        out = np.empty((tqs.size, self.y_stage.size))
        hi = tqs >= self.t_stage
        mid = ~hi & (tqs > self.t_last)
        lo = ~(hi | mid)
        if hi.any():
            out[hi] = self.y_stage
        if mid.any():
            w = ((tqs[mid] - self.t_last) / (self.t_stage - self.t_last))[:, None]
            out[mid] = (1.0 - w) * self.y_last + w * self.y_stage
        if lo.any():
            out[lo] = self.buffer.sample_batch(tqs[lo])
        return out


def _make_sampler(buffer, t_stage, y_stage):
    return _StageSampler(buffer, t_stage, y_stage)


def integrate_dde(f, y0, t0, t_end, step, history=None, max_delay=0.0, observer=None):
    """Integrate y' = f(t, y, sample) from ``t0`` to ``t_end``.

    history   : callable y(t) for t <= t0; defaults to the constant y0.
    max_delay : span of pre-history to tabulate before t0.
    observer  : optional callback observer(k, t, y, sample) invoked at every
                accepted grid point (including t0) with full history access.

    Returns (times, states) on the uniform grid.
    """
    if not step > 0.0:
        raise ValueError("step must be positive")
    y0 = np.asarray(y0, dtype=float)
    n_steps = int(round((t_end - t0) / step))
    if n_steps < 0:
        raise ValueError("t_end must not precede t0")

    buffer = HistoryBuffer(y0.size)
    if history is None:
        buffer.append(t0 - max(max_delay, step) - 1.0, y0)
    else:
        n_pre = max(int(np.ceil(max_delay / step)), 1)
        for tq in t0 - step * np.arange(n_pre + 1, 0, -1):
            buffer.append(tq, np.asarray(history(tq), dtype=float))
    buffer.append(t0, y0)

    times = t0 + step * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, y0.size))
    states[0] = y0
    if observer is not None:
        observer(0, t0, y0, _make_sampler(buffer, t0, y0))

    y = y0.copy()
    half = 0.5 * step
    for k in range(n_steps):
        t = times[k]
        k1 = f(t, y, _make_sampler(buffer, t, y))
        y2 = y + half * k1
        k2 = f(t + half, y2, _make_sampler(buffer, t + half, y2))
        y3 = y + half * k2
        k3 = f(t + half, y3, _make_sampler(buffer, t + half, y3))
        y4 = y + step * k3
        k4 = f(t + step, y4, _make_sampler(buffer, t + step, y4))
        y = y + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_next = times[k + 1]
        if not np.all(np.isfinite(y)):
            raise SimulationDiverged(t_next)
        buffer.append(t_next, y)
        states[k + 1] = y
        if observer is not None:
            observer(k + 1, t_next, y, _make_sampler(buffer, t_next, y))
    return times, states
