"""Delay-robust stability certification of the closed-loop network.

The zero-delay closed loop of the stacked tracking error is e' = F e with
F = A0 + sum of pin blocks + sum of channel blocks; each delayed channel
contributes its block matrix at its own delay.  A certificate is a family of
symmetric positive definite matrices making three coupled matrix
inequalities strictly negative definite at a given delay bound, which
proves synchronization for every admissible delay below that bound.

The verifier (``check_feasibility``) is the trust anchor: it rechecks any
candidate with its own Jacobi eigensolver, independent of how the candidate
was produced.  The searcher (``search_certificate``) runs over-relaxed
alternating projections between the affine set cut out by the shifted
inequalities and the product of semidefinite cones, and is free to use
faster library decompositions internally.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .linalg import eig_extrema, symmetrize

ASYMMETRY_WARN = 1e-12


# ---------------------------------------------------------------------------
# Closed-loop block matrices


@dataclass(frozen=True)
class ClosedLoopMatrices:
    """Stacked-error coupling structure of the delayed closed loop.

    a0        : block-diagonal open-loop matrix, (N*n, N*n).
    a_hat     : per pin slot, the matrix with the pinned agent's leader-link
                block on its diagonal.
    a_tilde   : per follower channel, the matrix coupling the agents that
                share that delay; it annihilates block-constant vectors.
    f_matrix  : a0 + sum(a_hat) + sum(a_tilde), the zero-delay error matrix.
    """

    a0: np.ndarray
    a_hat: tuple
    a_tilde: tuple
    f_matrix: np.ndarray
    n_agents: int
    order: int

    @property
    def dim(self):
        return self.n_agents * self.order

    def sum_a_hat(self):
        return sum(self.a_hat) if self.a_hat else np.zeros_like(self.a0)

    def sum_a_tilde(self):
        return sum(self.a_tilde) if self.a_tilde else np.zeros_like(self.a0)


def assemble_closed_loop(plant, topology, gains):
    """Build the coupling matrices for a plant/topology/gain triple."""
    n_agents = topology.n_agents
    order = plant.order
    nn = n_agents * order
    b_vec = plant.b_vector

    a0 = np.kron(np.eye(n_agents), plant.a_matrix)

    a_hat = []
    for i, _l in sorted(topology.pin_delay_index.items(), key=lambda kv: kv[1]):
        if i not in gains.k_pin:
            raise ValueError(f"missing pin gain for pinned agent {i}")
        block = -topology.pinning[i] * np.outer(b_vec, gains.k_pin[i])
        mat = np.zeros((nn, nn))
        mat[i * order : (i + 1) * order, i * order : (i + 1) * order] = block
        a_hat.append(mat)

    a_tilde = []
    for edges in topology.channel_edges():
        mat = np.zeros((nn, nn))
        for (i, j) in edges:
            if (i, j) not in gains.k_follower:
                raise ValueError(f"missing gain for edge ({i}, {j})")
            block = -topology.adjacency[i, j] * np.outer(b_vec, gains.k_follower[(i, j)])
            mat[i * order : (i + 1) * order, i * order : (i + 1) * order] += block
            mat[i * order : (i + 1) * order, j * order : (j + 1) * order] -= block
        a_tilde.append(mat)

    f = a0 + sum(a_hat, np.zeros((nn, nn))) + sum(a_tilde, np.zeros((nn, nn)))
    return ClosedLoopMatrices(
        a0=a0,
        a_hat=tuple(a_hat),
        a_tilde=tuple(a_tilde),
        f_matrix=f,
        n_agents=n_agents,
        order=order,
    )


# ---------------------------------------------------------------------------
# Certificates


@dataclass(frozen=True)
class Certificate:
    """Symmetric matrices certifying delay-robust stability.

    q_pin/r_pin are indexed by pin slot, q_chan/r_chan by follower channel;
    d_pin/d_chan are the delay slope bounds the certificate assumes.  The
    derived matrices are recomputed on demand, never stored.
    """

    p_matrix: np.ndarray
    q_pin: tuple
    q_chan: tuple
    r_pin: tuple
    r_chan: tuple
    d_pin: np.ndarray = field(default=None)
    d_chan: np.ndarray = field(default=None)

    def __post_init__(self):
        def _sym(m):
            m = np.asarray(m, dtype=float)
            return 0.5 * (m + m.T)

        object.__setattr__(self, "p_matrix", _sym(self.p_matrix))
        object.__setattr__(self, "q_pin", tuple(_sym(m) for m in self.q_pin))
        object.__setattr__(self, "q_chan", tuple(_sym(m) for m in self.q_chan))
        object.__setattr__(self, "r_pin", tuple(_sym(m) for m in self.r_pin))
        object.__setattr__(self, "r_chan", tuple(_sym(m) for m in self.r_chan))
        d_pin = self.d_pin if self.d_pin is not None else np.zeros(len(self.q_pin))
        d_chan = self.d_chan if self.d_chan is not None else np.zeros(len(self.q_chan))
        object.__setattr__(self, "d_pin", np.asarray(d_pin, dtype=float))
        object.__setattr__(self, "d_chan", np.asarray(d_chan, dtype=float))
        if self.d_pin.shape != (len(self.q_pin),) or self.d_chan.shape != (len(self.q_chan),):
            raise ValueError("slope-bound vectors must match the per-channel matrix counts")
        if len(self.r_pin) != len(self.q_pin) or len(self.r_chan) != len(self.q_chan):
            raise ValueError("Q and R families must have matching counts")

    @property
    def dim(self):
        return self.p_matrix.shape[0]

    def base_matrices(self):
        """Named base matrices in canonical order."""
        out = [("P", self.p_matrix)]
        out += [(f"Q_pin_{l}", m) for l, m in enumerate(self.q_pin)]
        out += [(f"Q_chan_{p}", m) for p, m in enumerate(self.q_chan)]
        out += [(f"R_pin_{l}", m) for l, m in enumerate(self.r_pin)]
        out += [(f"R_chan_{p}", m) for p, m in enumerate(self.r_chan)]
        return out

    def h_matrix(self):
        zero = np.zeros_like(self.p_matrix)
        return sum(self.r_chan, zero) + sum(self.r_pin, zero)

    def m1(self, matrices):
        f = matrices.f_matrix
        zero = np.zeros_like(self.p_matrix)
        return (
            f.T @ self.p_matrix
            + self.p_matrix @ f
            + sum(self.q_chan, zero)
            + sum(self.q_pin, zero)
        )

    def m1_bar(self):
        zero = np.zeros_like(self.p_matrix)
        return -sum(((1.0 - d) * q for d, q in zip(self.d_pin, self.q_pin)), zero)

    def m1_tilde(self):
        zero = np.zeros_like(self.p_matrix)
        return -sum(((1.0 - d) * q for d, q in zip(self.d_chan, self.q_chan)), zero)

    def m2(self, matrices):
        p = self.p_matrix
        h = self.h_matrix()
        out = 3.0 * matrices.a0.T @ h @ matrices.a0
        for a, r in zip(matrices.a_hat, self.r_pin):
            pa = p @ a
            out = out + pa @ np.linalg.solve(r, pa.T)
        for a, r in zip(matrices.a_tilde, self.r_chan):
            pa = p @ a
            out = out + pa @ np.linalg.solve(r, pa.T)
        return 0.5 * (out + out.T)

    def m2_bar(self, matrices):
        s = matrices.sum_a_hat()
        return 3.0 * s.T @ self.h_matrix() @ s

    def m2_tilde(self, matrices):
        s = matrices.sum_a_tilde()
        return 3.0 * s.T @ self.h_matrix() @ s


def _build_lmis(matrices, p, q_pin, q_chan, r_pin, r_chan, d_pin, d_chan, tau, pin_core_third):
    """The three inequality matrices as a function of the certificate parts.

    Linear in (p, q, r) for fixed structure, which the projection search
    relies on.  At tau == 0 the block inequality degenerates (its delay-
    scaled diagonal blocks vanish), so the delay-free cores are returned.
    The third inequality pairs the channel-delay coupling with the
    channel-side core by default; ``pin_core_third`` pairs it with the
    pin-side core instead.
    """
    nn = matrices.dim
    zero = np.zeros((nn, nn))
    f = matrices.f_matrix
    h = sum(r_chan, zero) + sum(r_pin, zero)
    m1 = f.T @ p + p @ f + sum(q_chan, zero) + sum(q_pin, zero)
    m1_bar = -sum(((1.0 - d) * q for d, q in zip(d_pin, q_pin)), zero)
    m1_tilde = -sum(((1.0 - d) * q for d, q in zip(d_chan, q_chan)), zero)
    third_core = m1_bar if pin_core_third else m1_tilde

    sum_hat = sum(a for a in matrices.a_hat) if matrices.a_hat else zero
    sum_til = sum(a for a in matrices.a_tilde) if matrices.a_tilde else zero
    m = len(matrices.a_tilde)

    if tau == 0.0:
        l1 = m1
        l2 = m1_bar
        l3 = None if m == 0 else third_core
        return l1, l2, l3

    top = m1 + 3.0 * tau * matrices.a0.T @ h @ matrices.a0
    sum_rpin = sum(r_pin, zero)
    coup_hat = tau * p @ sum_hat
    if m > 0:
        sum_rchan = sum(r_chan, zero)
        coup_til = tau * p @ sum_til
        l1 = np.block(
            [
                [top, coup_hat, coup_til],
                [coup_hat.T, -tau * sum_rpin, zero],
                [coup_til.T, zero, -tau * sum_rchan],
            ]
        )
    else:
        l1 = np.block([[top, coup_hat], [coup_hat.T, -tau * sum_rpin]])
    l2 = m1_bar + 3.0 * tau * sum_hat.T @ h @ sum_hat
    l3 = None if m == 0 else third_core + 3.0 * tau * sum_til.T @ h @ sum_til
    return l1, l2, l3


@dataclass(frozen=True)
class LmiReport:
    """Outcome of one feasibility check."""

    tau: float
    epsilon: float
    scale: float
    max_eigs: tuple
    margins: tuple
    certificate_pd: bool
    feasible: bool
    notes: tuple = ()

    @property
    def min_margin(self):
        finite = [m for m in self.margins if np.isfinite(m)]
        return min(finite) if finite else float("nan")

    def to_dict(self):
        return {
            "tau": self.tau,
            "epsilon": self.epsilon,
            "scale": self.scale,
            "max_eigs": list(self.max_eigs),
            "margins": list(self.margins),
            "certificate_pd": self.certificate_pd,
            "feasible": self.feasible,
            "notes": list(self.notes),
        }


def check_feasibility(matrices, certificate, tau, epsilon=1e-8, pin_core_third=False):
    """Verify a certificate at delay bound ``tau`` with margin ``epsilon``.

    ``epsilon`` is relative to the largest entry of the assembled inequality
    matrices.  All eigenvalue verdicts use the package's own Jacobi solver.
    Non-symmetric inputs are symmetrized (with a warning above working
    precision); a certificate whose base matrices are not positive definite
    is rejected outright.
    """
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    if tau < 0.0:
        raise ValueError("tau must be nonnegative")
    if certificate.dim != matrices.dim:
        raise ValueError(
            f"certificate dimension {certificate.dim} does not match network dimension {matrices.dim}"
        )
    if len(certificate.q_pin) != len(matrices.a_hat) or len(certificate.q_chan) != len(
        matrices.a_tilde
    ):
        raise ValueError("certificate channel counts do not match the closed-loop structure")

    notes = []
    pd_ok = True
    for name, mat in certificate.base_matrices():
        lo, _ = eig_extrema(mat)
        if not lo > 0.0:
            pd_ok = False
            notes.append(f"{name} is not positive definite (min eigenvalue {lo:.3e})")
    if not pd_ok:
        return LmiReport(
            tau=float(tau),
            epsilon=float(epsilon),
            scale=float("nan"),
            max_eigs=(float("nan"),) * 3,
            margins=(float("nan"),) * 3,
            certificate_pd=False,
            feasible=False,
            notes=tuple(notes),
        )

    lmis = _build_lmis(
        matrices,
        certificate.p_matrix,
        list(certificate.q_pin),
        list(certificate.q_chan),
        list(certificate.r_pin),
        list(certificate.r_chan),
        certificate.d_pin,
        certificate.d_chan,
        float(tau),
        pin_core_third,
    )
    if tau == 0.0:
        notes.append("tau = 0: delay-scaled blocks vanish; delay-free cores checked")
    scale = max(
        (float(np.max(np.abs(l))) for l in lmis if l is not None and l.size),
        default=0.0,
    )
    scale = max(scale, np.finfo(float).tiny)
    threshold = -epsilon * scale

    max_eigs = []
    margins = []
    for idx, l in enumerate(lmis):
        if l is None:
            max_eigs.append(float("-inf"))
            margins.append(float("inf"))
            notes.append(f"inequality {idx + 1} is vacuous (no follower channels)")
            continue
        l_sym, asym = symmetrize(l)
        if asym > ASYMMETRY_WARN:
            warnings.warn(
                f"inequality {idx + 1} had relative asymmetry {asym:.3e}; symmetrized",
                stacklevel=2,
            )
        _, hi = eig_extrema(l_sym)
        max_eigs.append(hi)
        margins.append(-hi)
    feasible = all(me <= threshold for me in max_eigs)
    return LmiReport(
        tau=float(tau),
        epsilon=float(epsilon),
        scale=scale,
        max_eigs=tuple(max_eigs),
        margins=tuple(margins),
        certificate_pd=True,
        feasible=feasible,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Delay-bound estimation


def spectral_ratio_bound(m1, m2):
    """Largest scaling keeping m1 + xi*m2 negative definite on (0, xi_m).

    m1 must be negative definite and m2 positive definite; the bound is
    |lambda_max(m1)| / lambda_max(m2).  Negativity is guaranteed on the open
    interval; at the endpoint the combination can touch singularity.
    """
    m1s, _ = symmetrize(np.asarray(m1, dtype=float))
    m2s, _ = symmetrize(np.asarray(m2, dtype=float))
    _, hi1 = eig_extrema(m1s)
    lo2, hi2 = eig_extrema(m2s)
    if not hi1 < 0.0:
        raise ValueError(f"first matrix is not negative definite (max eigenvalue {hi1:.3e})")
    if not lo2 > 0.0:
        raise ValueError(f"second matrix is not positive definite (min eigenvalue {lo2:.3e})")
    return abs(hi1) / hi2


@dataclass(frozen=True)
class DelayEstimate:
    """Per-inequality delay ratios and their minimum."""

    ratios: tuple
    tau: float
    notes: tuple = ()

    def to_dict(self):
        return {"ratios": list(self.ratios), "tau": self.tau, "notes": list(self.notes)}


def _ratio(name, numerator, denominator, notes):
    num_zero = float(np.max(np.abs(numerator))) == 0.0
    den_zero = float(np.max(np.abs(denominator))) == 0.0
    if num_zero and den_zero:
        notes.append(f"{name}: vacuous term (both matrices zero); no delay constraint")
        return float("inf")
    _, num_hi = eig_extrema(symmetrize(numerator)[0])
    _, den_hi = eig_extrema(symmetrize(denominator)[0])
    if num_hi > 0.0:
        notes.append(f"{name}: numerator not negative semidefinite (max eig {num_hi:.3e})")
        return float("nan")
    if not den_hi > 0.0:
        notes.append(f"{name}: denominator max eigenvalue {den_hi:.3e} is not positive")
        return float("nan")
    return abs(num_hi) / den_hi


def estimate_max_delay(matrices, certificate, pin_core_third=False):
    """Estimate the largest tolerable delay bound from a certificate.

    Each ratio is |lambda_max(core)| / lambda_max(coupling); the estimate is
    their minimum.  Degenerate-at-zero cores (e.g. a slope bound of one)
    legitimately produce a zero ratio; undefined terms are reported as NaN
    with a per-term note.
    """
    notes = []
    try:
        m2 = certificate.m2(matrices)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"coupling matrix needs invertible R matrices: {exc}") from exc
    r1 = _ratio("ratio 1", certificate.m1(matrices), m2, notes)
    r2 = _ratio("ratio 2", certificate.m1_bar(), certificate.m2_bar(matrices), notes)
    third_core = certificate.m1_bar() if pin_core_third else certificate.m1_tilde()
    r3 = _ratio("ratio 3", third_core, certificate.m2_tilde(matrices), notes)
    ratios = (r1, r2, r3)
    tau = float("nan") if any(np.isnan(r) for r in ratios) else float(min(ratios))
    return DelayEstimate(ratios=ratios, tau=tau, notes=tuple(notes))


# ---------------------------------------------------------------------------
# Companion-polynomial stability of pinned agents


@dataclass(frozen=True)
class HurwitzReport:
    is_hurwitz: bool
    gamma: np.ndarray
    cubic_ok: bool = None


def hurwitz_phi(plant, gains, topology, i):
    """Stability of a pinned agent's leader-link companion matrix.

    The closed companion matrix has last row -(a + b*alpha_i0*k_i0); the
    eigenvalue test is authoritative.  For third-order plants the classical
    coefficient inequality is reported alongside.
    """
    i = int(i)
    if i not in topology.pin_delay_index:
        raise ValueError(f"agent {i} is not pinned")
    gamma = plant.a_coeffs + plant.b_gain * topology.pinning[i] * gains.k_pin[i]
    n = plant.order
    phi = np.zeros((n, n))
    phi[np.arange(n - 1), np.arange(1, n)] = 1.0
    phi[n - 1, :] = -gamma
    eigs = np.linalg.eigvals(phi)
    is_hurwitz = bool(np.all(eigs.real < 0.0))
    cubic_ok = None
    if n == 3:
        cubic_ok = bool(gamma[0] > 0.0 and gamma[2] > 0.0 and gamma[2] * gamma[1] > gamma[0])
    return HurwitzReport(is_hurwitz=is_hurwitz, gamma=gamma, cubic_ok=cubic_ok)


# ---------------------------------------------------------------------------
# Certificate search by over-relaxed alternating projections


_SVEC_CACHE = {}


def _svec_plan(n):
    """Cached index arrays mapping a symmetric matrix to its scaled
    upper-triangle vector (Frobenius-isometric)."""
    plan = _SVEC_CACHE.get(n)
    if plan is None:
        iu, ju = np.triu_indices(n)
        w = np.where(iu == ju, 1.0, np.sqrt(2.0))
        plan = (iu, ju, w)
        _SVEC_CACHE[n] = plan
    return plan


def _svec(mat):
    n = mat.shape[0]
    iu, ju, w = _svec_plan(n)
    return mat[iu, ju] * w


def _unsvec(vec, n):
    iu, ju, w = _svec_plan(n)
    out = np.empty((n, n))
    vals = vec / w
    out[iu, ju] = vals
    out[ju, iu] = vals
    return out


@dataclass(frozen=True)
class SearchResult:
    """Outcome of a certificate search.

    ``feasible`` distinguishes a verified certificate from an exhausted or
    stagnated search; an infeasible verdict still carries the best margins
    seen so the caller can tell "proved nothing" from "certified".
    """

    feasible: bool
    certificate: Certificate = None
    report: LmiReport = None
    iterations: int = 0
    reason: str = ""
    best_margin: float = float("-inf")


def _relative_violation(lmis):
    """Worst relative positive eigenvalue across the inequality matrices
    (negative values mean strictly feasible)."""
    worst = -np.inf
    scale = max(
        (float(np.max(np.abs(l))) for l in lmis if l is not None and l.size),
        default=1.0,
    )
    scale = max(scale, np.finfo(float).tiny)
    for l in lmis:
        if l is None:
            continue
        hi = float(np.linalg.eigvalsh(0.5 * (l + l.T))[-1])
        worst = max(worst, hi / scale)
    return worst


def seed_certificate(matrices, d_pin, d_chan, tau=0.0, pin_core_third=False):
    """Analytic starting point: P solves the quadratic stability equation of
    F, and the identity-scaled Q/R families are grid-tuned to minimize the
    inequality violation at the target delay bound."""
    nn = matrices.dim
    f = matrices.f_matrix
    p = solve_continuous_lyapunov(f.T, -np.eye(nn))
    p = 0.5 * (p + p.T)
    eye = np.eye(nn)
    n_pins, n_chan = len(matrices.a_hat), len(matrices.a_tilde)
    families = max(n_pins + n_chan, 1)

    best = None
    for q0 in np.logspace(-4.0, -0.5, 8) / families:
        for r0 in np.logspace(-5.0, 1.0, 13):
            lmis = _build_lmis(
                matrices,
                p,
                [q0 * eye] * n_pins,
                [q0 * eye] * n_chan,
                [r0 * eye] * n_pins,
                [r0 * eye] * n_chan,
                d_pin,
                d_chan,
                float(tau),
                pin_core_third,
            )
            viol = _relative_violation(lmis)
            if best is None or viol < best[0]:
                best = (viol, q0, r0)
    _, q0, r0 = best
    return Certificate(
        p_matrix=p,
        q_pin=tuple(q0 * eye for _ in range(n_pins)),
        q_chan=tuple(q0 * eye for _ in range(n_chan)),
        r_pin=tuple(r0 * eye for _ in range(n_pins)),
        r_chan=tuple(r0 * eye for _ in range(n_chan)),
        d_pin=d_pin,
        d_chan=d_chan,
    )


def _certificate_from_slots(slots, n_pins, n_chan, nn, d_pin, d_chan):
    return Certificate(
        p_matrix=slots[0],
        q_pin=tuple(slots[1 : 1 + n_pins]),
        q_chan=tuple(slots[1 + n_pins : 1 + n_pins + n_chan]),
        r_pin=tuple(slots[1 + n_pins + n_chan : 1 + 2 * n_pins + n_chan]),
        r_chan=tuple(slots[1 + 2 * n_pins + n_chan :]),
        d_pin=d_pin,
        d_chan=d_chan,
    )


def search_certificate(
    matrices,
    tau,
    epsilon=1e-8,
    budget=5000,
    d_pin=0.9,
    d_chan=0.9,
    warm_start=None,
    pin_core_third=False,
    interior_margin=1e-4,
    pd_floor_rel=1e-6,
    maximize_margin=True,
):
    """Search for a certificate at delay bound ``tau``.

    Returns a SearchResult; any returned certificate has already passed
    ``check_feasibility`` at (tau, epsilon).  The engine minimizes a smoothed
    maximum eigenvalue of the shifted inequality operator (a convex function
    of the stacked certificate entries) with a quasi-Newton method, driving
    every inequality below ``-interior_margin * scale`` and every base matrix
    above a positive floor, so accepted candidates sit inside the feasible
    set rather than on its boundary.  The search declines immediately when F
    is not Hurwitz and reports the best margin seen when it fails, so a
    caller can distinguish "proved nothing" from "certified".

    ``budget`` caps the total quasi-Newton iterations.  Memory grows with
    (number of certificate matrices x stacked dimension)^2; networks up to a
    few dozen stacked states are the intended range.
    """
    from scipy.optimize import minimize

    if tau < 0.0:
        raise ValueError("tau must be nonnegative")
    nn = matrices.dim
    n_pins = len(matrices.a_hat)
    n_chan = len(matrices.a_tilde)
    d_pin = np.broadcast_to(np.asarray(d_pin, dtype=float), (n_pins,)).copy()
    d_chan = np.broadcast_to(np.asarray(d_chan, dtype=float), (n_chan,)).copy()

    f_eigs = np.linalg.eigvals(matrices.f_matrix)
    if not np.all(f_eigs.real < 0.0):
        return SearchResult(
            feasible=False,
            reason=f"F not Hurwitz (max real part {float(np.max(f_eigs.real)):.3e})",
        )

    def verify(cert):
        return check_feasibility(matrices, cert, tau, epsilon, pin_core_third)

    if warm_start is not None:
        seed = Certificate(
            p_matrix=warm_start.p_matrix,
            q_pin=warm_start.q_pin,
            q_chan=warm_start.q_chan,
            r_pin=warm_start.r_pin,
            r_chan=warm_start.r_chan,
            d_pin=d_pin,
            d_chan=d_chan,
        )
    else:
        seed = seed_certificate(matrices, d_pin, d_chan, tau, pin_core_third)
    report = verify(seed)
    if report.feasible:
        return SearchResult(
            feasible=True,
            certificate=seed,
            report=report,
            iterations=0,
            reason="seed certificate verified",
            best_margin=report.min_margin,
        )

    n_slots = 1 + 2 * (n_pins + n_chan)
    dim_s = nn * (nn + 1) // 2
    n_v = n_slots * dim_s

    def slots_from_v(v):
        return [_unsvec(v[k * dim_s : (k + 1) * dim_s], nn) for k in range(n_slots)]

    def lmis_from_slots(slots):
        return _build_lmis(
            matrices,
            slots[0],
            slots[1 : 1 + n_pins],
            slots[1 + n_pins : 1 + n_pins + n_chan],
            slots[1 + n_pins + n_chan : 1 + 2 * n_pins + n_chan],
            slots[1 + 2 * n_pins + n_chan :],
            d_pin,
            d_chan,
            float(tau),
            pin_core_third,
        )

    seed_lmis = lmis_from_slots([m for _, m in seed.base_matrices()])
    lmi_dims = [l.shape[0] if l is not None else 0 for l in seed_lmis]
    z_dims = [d * (d + 1) // 2 for d in lmi_dims]
    n_z = sum(z_dims)
    scale = max(
        (float(np.max(np.abs(l))) for l in seed_lmis if l is not None and l.size),
        default=1.0,
    )
    scale = max(scale, 1e-12)
    var_scale = max(float(np.max(np.abs(seed.p_matrix))), 1e-12)
    pd_floor = pd_floor_rel * var_scale

    def z_from_lmis(lmis):
        parts = [_svec(l) for l in lmis if l is not None]
        return np.concatenate(parts) if parts else np.empty(0)

    # Dense linear operator v -> stacked svec of the inequality matrices.
    op = np.empty((n_z, n_v))
    basis_slots = [np.zeros((nn, nn)) for _ in range(n_slots)]
    iu, ju, _w = _svec_plan(nn)
    col = 0
    for slot in range(n_slots):
        mat = basis_slots[slot]
        for i, j in zip(iu, ju):
            if i == j:
                mat[i, i] = 1.0
            else:
                mat[i, j] = mat[j, i] = 1.0 / np.sqrt(2.0)
            op[:, col] = z_from_lmis(lmis_from_slots(basis_slots))
            mat[i, j] = mat[j, i] = 0.0
            col += 1

    def eig_blocks(v):
        """Eigen-decompositions of every inequality block and variable slot."""
        slots = slots_from_v(v)
        lmis = [l for l in lmis_from_slots(slots) if l is not None]
        lmi_eigs = [np.linalg.eigh(0.5 * (l + l.T)) for l in lmis]
        var_eigs = [np.linalg.eigh(m) for m in slots]
        return slots, lmi_eigs, var_eigs

    ridge = 1e-9 / var_scale**2

    def objective(v, mu, shift):
        """Smoothed max of (lmi eigenvalue + shift)/scale and
        (floor - var eigenvalue)/var_scale, with its gradient.  A tiny ridge
        bounds the descent along feasible rays (the problem is homogeneous);
        non-finite excursions return a retreat penalty."""
        if not np.all(np.isfinite(v)):
            v = np.nan_to_num(v, nan=0.0, posinf=1e12, neginf=-1e12)
            return 1e9 + ridge * float(v @ v), 2.0 * ridge * v
        _, lmi_eigs, var_eigs = eig_blocks(v)
        terms = []
        for w, _vecs in lmi_eigs:
            terms.append((w + shift) / scale)
        for w, _vecs in var_eigs:
            terms.append((pd_floor - w) / var_scale)
        all_terms = np.concatenate(terms)
        if not np.all(np.isfinite(all_terms)):
            return 1e9 + ridge * float(v @ v), 2.0 * ridge * v
        top = float(np.max(all_terms))
        weights = np.exp((all_terms - top) / mu)
        total = float(np.sum(weights))
        g_val = top + mu * np.log(total) + ridge * float(v @ v)
        weights /= total

        pos = 0
        z_grad = np.empty(n_z)
        zoff = 0
        for (w, vecs), zd in zip(lmi_eigs, [zd for zd in z_dims if zd > 0]):
            k = w.size
            p_k = weights[pos : pos + k] / scale
            pos += k
            z_grad[zoff : zoff + zd] = _svec((vecs * p_k) @ vecs.T)
            zoff += zd
        grad = op.T @ z_grad + 2.0 * ridge * v
        for slot, (w, vecs) in enumerate(var_eigs):
            k = w.size
            p_k = weights[pos : pos + k] / var_scale
            pos += k
            grad[slot * dim_s : (slot + 1) * dim_s] -= _svec((vecs * p_k) @ vecs.T)
        return g_val, grad

    def feasible_now(v, threshold):
        if not np.all(np.isfinite(v)):
            return False
        slots = slots_from_v(v)
        for l in lmis_from_slots(slots):
            if l is None:
                continue
            if not np.all(np.isfinite(l)):
                return False
            if float(np.linalg.eigvalsh(0.5 * (l + l.T))[-1]) > -threshold:
                return False
        return all(float(np.linalg.eigvalsh(m)[0]) > 0.0 for m in slots)

    def make_callback(shift_val):
        counter = [0]
        threshold = max(1.01 * epsilon * scale, 0.9 * shift_val)

        def cb(xk):
            counter[0] += 1
            if counter[0] % 5 == 0 and feasible_now(xk, threshold):
                raise StopIteration

        return cb

    def candidate(v):
        return _certificate_from_slots(slots_from_v(v), n_pins, n_chan, nn, d_pin, d_chan)

    def descend(v, shift_val, iter_cap):
        """Drive the smoothed spectrum below zero at the given interior
        shift; returns (v, verified SearchResult or None, iterations)."""
        nonlocal best_margin
        spent = 0
        mu = 1e-2
        stalled = 0
        prev_val = float("inf")
        while spent < iter_cap:
            # The problem is homogeneous: renormalize so the candidate's
            # scale stays comparable to the seed's.
            p_norm = float(np.max(np.abs(slots_from_v(v)[0])))
            if np.isfinite(p_norm) and p_norm > 0.0:
                v = v * (var_scale / p_norm)
            res = minimize(
                objective,
                v,
                args=(mu, shift_val),
                jac=True,
                method="L-BFGS-B",
                callback=make_callback(shift_val),
                options={"maxiter": chunk, "ftol": 1e-16, "gtol": 1e-14},
            )
            v = res.x
            spent += max(int(res.nit), 1)
            true_max = float("-inf")
            slots = slots_from_v(v)
            for l in lmis_from_slots(slots):
                if l is None:
                    continue
                true_max = max(true_max, float(np.linalg.eigvalsh(0.5 * (l + l.T))[-1]))
            var_min = min(float(np.linalg.eigvalsh(m)[0]) for m in slots)
            best_margin = max(best_margin, -true_max)
            if true_max <= -1.01 * epsilon * scale and var_min > 0.0:
                cand = candidate(v)
                rep = verify(cand)
                if rep.feasible:
                    return v, SearchResult(
                        feasible=True,
                        certificate=cand,
                        report=rep,
                        iterations=spent,
                        reason="smoothed-spectrum descent converged",
                        best_margin=rep.min_margin,
                    ), spent
                best_margin = max(best_margin, rep.min_margin)
            val = float(res.fun)
            # Tie the smoothing width to the remaining gap; stop only after
            # the objective stops moving at the sharpest smoothing level.
            if prev_val - val < 1e-9 * max(abs(prev_val), 1.0):
                stalled += 1
                if stalled > 3 and mu <= 1.1e-8:
                    break
            else:
                stalled = 0
            mu = min(mu, max(abs(val) / 5.0, 1e-8))
            prev_val = val
        return v, None, spent

    chunk = 200
    v = np.concatenate([_svec(m) for _, m in seed.base_matrices()])
    best_margin = report.min_margin
    shift = max(interior_margin, 2.0 * epsilon) * scale
    v, found, iterations = descend(v, shift, int(budget))
    if found is None:
        return SearchResult(
            feasible=False,
            iterations=iterations,
            reason=f"no verifiable certificate within {iterations} iterations",
            best_margin=best_margin,
        )
    if not maximize_margin:
        return found

    # Push the certificate deeper into the feasible set: re-run the descent
    # at escalating interior shifts until one no longer closes.  A deep
    # certificate makes the delay-bound ratios informative.
    best = found
    total = iterations
    v_best = v
    while total < int(budget):
        shift *= 4.0
        v_try, better, spent = descend(v_best.copy(), shift, min(2 * chunk + 1, int(budget) - total))
        total += max(spent, 1)
        if better is None:
            break
        best = better
        v_best = v_try
    return SearchResult(
        feasible=True,
        certificate=best.certificate,
        report=best.report,
        iterations=total,
        reason=best.reason,
        best_margin=best.best_margin,
    )


# ---------------------------------------------------------------------------
# Certificate archive

ARCHIVE_FORMAT_VERSION = 1


def save_certificate(certificate, path):
    """Write a certificate as a named dense-matrix archive (row-major)."""
    payload = {
        "format_version": ARCHIVE_FORMAT_VERSION,
        "dim": certificate.dim,
        "n_pins": len(certificate.q_pin),
        "n_channels": len(certificate.q_chan),
        "d_pin": [float(d) for d in certificate.d_pin],
        "d_chan": [float(d) for d in certificate.d_chan],
        "matrices": {
            name: {
                "rows": int(mat.shape[0]),
                "cols": int(mat.shape[1]),
                "data": [float(x) for x in mat.ravel()],
            }
            for name, mat in certificate.base_matrices()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_certificate(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != ARCHIVE_FORMAT_VERSION:
        raise ValueError(f"unsupported archive format {payload.get('format_version')!r}")

    def mat(name):
        entry = payload["matrices"][name]
        return np.asarray(entry["data"], dtype=float).reshape(entry["rows"], entry["cols"])

    n_pins = payload["n_pins"]
    n_chan = payload["n_channels"]
    return Certificate(
        p_matrix=mat("P"),
        q_pin=tuple(mat(f"Q_pin_{l}") for l in range(n_pins)),
        q_chan=tuple(mat(f"Q_chan_{p}") for p in range(n_chan)),
        r_pin=tuple(mat(f"R_pin_{l}") for l in range(n_pins)),
        r_chan=tuple(mat(f"R_chan_{p}") for p in range(n_chan)),
        d_pin=np.asarray(payload["d_pin"], dtype=float),
        d_chan=np.asarray(payload["d_chan"], dtype=float),
    )
