"""Outer-loop gain optimization maximizing the certified delay tolerance.

The loop alternates delay-bound growth with derivative-free gain
improvement: certify at the current bound, estimate the largest tolerable
bound from the certificate's ratio rule, try to re-certify at the (growth-
capped) estimate, then improve the gains coordinate-wise against the
min-ratio objective under positivity and pinned-agent stability
constraints.  Certificates are re-verified by the feasibility checker; the
search itself is never trusted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .certify import (
    assemble_closed_loop,
    check_feasibility,
    estimate_max_delay,
    hurwitz_phi,
    search_certificate,
)
from .topology import leader_globally_reachable


class TuneFailure(RuntimeError):
    """No certificate exists at the seed delay bound; carries the search
    outcome so the caller can report the best margins seen."""

    def __init__(self, message, search_result=None):
        super().__init__(message)
        self.search_result = search_result


@dataclass(frozen=True)
class TuneConfig:
    tau_seed: float = 0.05
    outer_budget: int = 3
    inner_budget: int = 8
    search_budget: int = 6000
    margin: float = 1e-8
    slope_bound: float = 0.9
    gain_lower: float = 1e-4
    gain_upper: float = 100.0
    step_factor: float = 1.6
    growth_cap: float = 1.5
    stagnation_tol: float = 1e-3
    stagnation_rounds: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.gain_lower > 0.0:
            raise ValueError("gain_lower must be strictly positive")
        if not self.gain_upper > self.gain_lower:
            raise ValueError("gain_upper must exceed gain_lower")
        if self.outer_budget < 1 or self.inner_budget < 0:
            raise ValueError("budgets must be at least 1 outer iteration")
        if not self.tau_seed > 0.0:
            raise ValueError("tau_seed must be positive")
        if not self.step_factor > 1.0:
            raise ValueError("step_factor must exceed 1")


@dataclass(frozen=True)
class TuneIteration:
    index: int
    tau: float
    objective: float
    feasible: bool
    margin: float
    gains_stacked: tuple
    note: str = ""
    certificate: object = None


@dataclass(frozen=True)
class TuneResult:
    gains: object
    tau: float
    certificate: object
    report: object
    history: tuple
    termination: str

    @property
    def objective(self):
        return self.history[-1].objective if self.history else float("nan")


def objective(plant, topology, gains, tau, config, warm_start=None):
    """Min-ratio delay estimate for a gain candidate, or (None, reason).

    Invalid when any gain entry is nonpositive, any pinned agent's closed
    companion matrix is unstable, or no certificate is found at ``tau``.
    """
    stacked = gains.stacked()
    if stacked.size == 0 or np.any(stacked <= 0.0):
        return None, None, "gain positivity constraint violated"
    for i in topology.pin_delay_index:
        if not hurwitz_phi(plant, gains, topology, i).is_hurwitz:
            return None, None, f"pinned agent {i} closed companion matrix not stable"
    matrices = assemble_closed_loop(plant, topology, gains)
    result = search_certificate(
        matrices,
        tau,
        epsilon=config.margin,
        budget=config.search_budget,
        d_pin=config.slope_bound,
        d_chan=config.slope_bound,
        warm_start=warm_start,
    )
    if not result.feasible:
        return None, result, f"no certificate at tau={tau:g} ({result.reason})"
    est = estimate_max_delay(matrices, result.certificate)
    value = est.tau if np.isfinite(est.tau) else 0.0
    return value, result, ""


def run_algorithm1(plant, topology, initial_gains, config):
    """Run the gain/delay optimization loop from the given starting gains.

    Returns a TuneResult whose (gains, tau, certificate) triple has been
    re-verified end to end; raises TuneFailure when the seed delay bound
    cannot be certified at all.  The best certified tau in the history is
    nondecreasing by construction, and identical configs produce identical
    results.
    """
    if not leader_globally_reachable(topology):
        raise ValueError("the leader must reach every agent through the information flow")

    gains = initial_gains
    tau = float(config.tau_seed)
    matrices = assemble_closed_loop(plant, topology, gains)
    result = search_certificate(
        matrices,
        tau,
        epsilon=config.margin,
        budget=config.search_budget,
        d_pin=config.slope_bound,
        d_chan=config.slope_bound,
    )
    if not result.feasible:
        raise TuneFailure(
            f"seed delay bound tau={tau:g} not certifiable: {result.reason} "
            f"(best margin {result.best_margin:.3e})",
            result,
        )
    certificate, report = result.certificate, result.report
    est = estimate_max_delay(matrices, certificate)
    best_value = est.tau if np.isfinite(est.tau) else 0.0

    history = [
        TuneIteration(
            index=0,
            tau=tau,
            objective=best_value,
            feasible=True,
            margin=report.min_margin,
            gains_stacked=tuple(gains.stacked()),
            note="seed certification",
            certificate=certificate,
        )
    ]
    termination = "outer budget exhausted"
    rng = np.random.default_rng(config.seed)
    n_coords = gains.stacked().size
    coord_order = rng.permutation(n_coords)
    step = float(config.step_factor)
    stagnant = 0

    for outer in range(1, config.outer_budget):
        note_parts = []
        # Delay-bound growth toward the ratio estimate, capped and monotone.
        tau_try = min(max(est.tau if np.isfinite(est.tau) else 0.0, tau), config.growth_cap * tau)
        if tau_try > tau:
            grown = search_certificate(
                matrices,
                tau_try,
                epsilon=config.margin,
                budget=config.search_budget,
                d_pin=config.slope_bound,
                d_chan=config.slope_bound,
                warm_start=certificate,
            )
            if grown.feasible:
                tau, certificate, report = tau_try, grown.certificate, grown.report
                note_parts.append(f"delay bound grown to {tau:g}")
            else:
                termination = f"delay growth to {tau_try:g} not certifiable; kept last certified bound"
                history.append(
                    TuneIteration(
                        index=outer,
                        tau=tau,
                        objective=best_value,
                        feasible=True,
                        margin=report.min_margin,
                        gains_stacked=tuple(gains.stacked()),
                        note=termination,
                        certificate=certificate,
                    )
                )
                break

        # Coordinate-wise multiplicative gain search at the current bound.
        evals = 0
        improved = False
        stacked = gains.stacked()
        for c in coord_order:
            if evals >= config.inner_budget:
                break
            for direction in (1.0, -1.0):
                if evals >= config.inner_budget:
                    break
                cand = stacked.copy()
                cand[c] *= step**direction
                if cand[c] < config.gain_lower or cand[c] > config.gain_upper:
                    continue
                cand_gains = gains.with_stacked(cand)
                value, cand_result, reason = objective(
                    plant, topology, cand_gains, tau, config, warm_start=certificate
                )
                evals += 1
                if value is not None and value > best_value:
                    gains = cand_gains
                    stacked = cand
                    best_value = value
                    certificate = cand_result.certificate
                    report = cand_result.report
                    matrices = assemble_closed_loop(plant, topology, gains)
                    improved = True
                    break
        if not improved:
            step = max(np.sqrt(step), 1.0 + 0.5 * (config.step_factor - 1.0))
        est = estimate_max_delay(matrices, certificate)
        value_now = est.tau if np.isfinite(est.tau) else 0.0
        if value_now > best_value:
            best_value = value_now
        note_parts.append(f"{evals} candidate evaluations" + ("" if improved else ", no improvement"))
        history.append(
            TuneIteration(
                index=outer,
                tau=tau,
                objective=best_value,
                feasible=True,
                margin=report.min_margin,
                gains_stacked=tuple(gains.stacked()),
                note="; ".join(note_parts),
                certificate=certificate,
            )
        )
        prev = history[-2].objective
        if prev > 0 and (best_value - prev) / prev < config.stagnation_tol:
            stagnant += 1
            if stagnant >= config.stagnation_rounds:
                termination = "objective stagnated"
                break
        else:
            stagnant = 0

    final_matrices = assemble_closed_loop(plant, topology, gains)
    final_report = check_feasibility(final_matrices, certificate, tau, config.margin)
    if not final_report.feasible:
        raise AssertionError(
            "final re-verification failed; the verifier rejected the returned certificate"
        )
    for i in topology.pin_delay_index:
        if not hurwitz_phi(plant, gains, topology, i).is_hurwitz:
            raise AssertionError(f"returned gains leave pinned agent {i} unstable")
    return TuneResult(
        gains=gains,
        tau=tau,
        certificate=certificate,
        report=final_report,
        history=tuple(history),
        termination=termination,
    )
