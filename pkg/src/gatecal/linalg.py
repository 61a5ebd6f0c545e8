"""Symmetric eigendecomposition and multivariate-normal sampling.

The eigensolver is a cyclic Jacobi iteration: rotations sweep all
off-diagonal (p, q) pairs until the off-diagonal Frobenius mass is
negligible. Adequate for the dimensions used here (search spaces of a
few hundred at most) and accurate to machine precision, which the
covariance-adaptation loop relies on.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError
from .rng import Rng

SYMMETRY_TOL = 1e-12
MAX_SWEEPS = 60
EIGENVALUE_FLOOR = 1e-20
NEGATIVE_EIGENVALUE_TOL = 1e-9


def eig_sym(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors of a
    symmetric matrix, via cyclic Jacobi rotations.

    Returns (evals, evecs) with c = evecs @ diag(evals) @ evecs.T.
    Columns of `evecs` are the eigenvectors.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ContractError(f"eig_sym needs a square matrix, got {c.shape}")
    scale = max(1.0, float(np.abs(c).max()))
    if float(np.abs(c - c.T).max()) > SYMMETRY_TOL * scale:
        raise ContractError("eig_sym input is not symmetric within tolerance")
    d = c.shape[0]
    a = 0.5 * (c + c.T)
    v = np.eye(d)
    if d == 1:
        return a.diagonal().copy(), v

    norm = float(np.linalg.norm(a))
    stop = max(norm, 1.0) * 1e-15
    off_mask = ~np.eye(d, dtype=bool)
    for _ in range(MAX_SWEEPS):
        off = float(np.sqrt((a[off_mask] ** 2).sum()))
        if off <= stop:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= 1e-18 * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                cos = 1.0 / np.sqrt(t * t + 1.0)
                sin = t * cos
                rot = np.array([[cos, sin], [-sin, cos]])
                a[[p, q], :] = rot.T @ a[[p, q], :]
                a[:, [p, q]] = a[:, [p, q]] @ rot
                v[:, [p, q]] = v[:, [p, q]] @ rot
    else:
        raise NumericError(f"jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps")

    evals = a.diagonal().copy()
    order = np.argsort(-evals, kind="stable")
    return evals[order], v[:, order]


def sample_mvn(
    rng: Rng,
    mean: np.ndarray,
    sigma: float,
    evals: np.ndarray,
    evecs: np.ndarray,
    clamp_counter: list | None = None,
) -> np.ndarray:
    """One draw from N(mean, sigma^2 * C) given C's eigendecomposition.

    Computes mean + sigma * B @ (sqrt(evals) * z) with z standard normal.
    Slightly negative eigenvalues (numerical noise) are clamped to a tiny
    floor; `clamp_counter`, when given, receives one appended entry per
    clamped eigenvalue. sigma == 0 returns the mean exactly.
    """
    mean = np.asarray(mean, dtype=np.float64)
    evals = np.asarray(evals, dtype=np.float64)
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    scale = max(1.0, float(np.abs(evals).max())) if evals.size else 1.0
    if evals.size and float(evals.min()) < -NEGATIVE_EIGENVALUE_TOL * scale:
        raise NumericError(f"covariance eigenvalue {evals.min():.3e} is negative beyond tolerance")
    if sigma == 0.0:
        return mean.copy()
    clamped = evals < EIGENVALUE_FLOOR
    if clamped.any():
        if clamp_counter is not None:
            clamp_counter.extend(evals[clamped].tolist())
        evals = np.where(clamped, EIGENVALUE_FLOOR, evals)
    z = rng.normal(mean.shape)
    return mean + sigma * (evecs @ (np.sqrt(evals) * z))
