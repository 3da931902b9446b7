"""Symmetric eigendecomposition via cyclic Jacobi rotations.

The certificate verifier deliberately carries its own eigensolver so that a
feasibility verdict does not depend on the library used by the searcher.
Matrices here are small (a few tens of rows), where Jacobi sweeps are both
simple and accurate.
"""

from __future__ import annotations

import numpy as np

OFFDIAG_TOL = 1e-12
MAX_SWEEPS = 50


def offdiagonal_norm(a):
    """Frobenius norm of the strictly off-diagonal part."""
    return float(np.sqrt(np.sum(np.square(a - np.diag(np.diag(a))))))


def jacobi_eigh(a, tol=OFFDIAG_TOL, max_sweeps=MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (w, v) with eigenvalues ``w`` ascending and orthonormal columns
    ``v`` such that a = v @ diag(w) @ v.T.  ``tol`` is the off-diagonal
    Frobenius norm at which the sweep loop stops, relative to the norm of
    the input.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=0.0, rtol=0.0, equal_nan=False):
        asym = float(np.max(np.abs(a - a.T)))
        raise ValueError(f"matrix is not symmetric (max |a - a.T| = {asym:g})")
    n = a.shape[0]
    if n == 0:
        return np.empty(0), np.empty((0, 0))
    if n == 1:
        return a[0].copy(), np.ones((1, 1))

    m = a.copy()
    v = np.eye(n)
    scale = max(float(np.linalg.norm(a)), np.finfo(float).tiny)
    threshold = tol * scale

    for _ in range(max_sweeps):
        if offdiagonal_norm(m) <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if abs(apq) <= 1e-20 * scale:
                    continue
                # Classical two-sided rotation annihilating m[p, q].
                theta = 0.5 * (m[q, q] - m[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                mp = m[:, p].copy()
                mq = m[:, q].copy()
                m[:, p] = c * mp - s * mq
                m[:, q] = s * mp + c * mq
                mp = m[p, :].copy()
                mq = m[q, :].copy()
                m[p, :] = c * mp - s * mq
                m[q, :] = s * mp + c * mq

                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    w = np.diag(m).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def symmetrize(a, warn_tol=1e-12):
    """Return (a + a.T) / 2 and the relative asymmetry that was removed."""
    a = np.asarray(a, dtype=float)
    scale = max(float(np.max(np.abs(a))), np.finfo(float).tiny)
    asym = float(np.max(np.abs(a - a.T))) / scale
    return 0.5 * (a + a.T), asym


def eig_extrema(a, tol=OFFDIAG_TOL):
    """(lambda_min, lambda_max) of a symmetric matrix via Jacobi sweeps."""
    w, _ = jacobi_eigh(a, tol=tol)
    return float(w[0]), float(w[-1])


def is_positive_definite(a, tol=OFFDIAG_TOL):
    lo, _ = eig_extrema(a, tol=tol)
    return lo > 0.0
