"""Shared numerical kernels: DFT/Vandermonde matrices, polynomial roots,
plain and norm-constrained least squares.

Polynomial coefficient convention: an array ``p`` of length d+1 represents

    P(z) = p[0]*z^d + p[1]*z^(d-1) + ... + p[d]          (descending powers)

which for an annihilating filter h equals z^(-K)-form H(z) = sum_n h[n] z^(-n)
up to the factor z^K, so ``roots(h)`` returns the filter roots u_k directly.
Read along ascending powers of w = z^(-1), the same array gives
H~(w) = sum_n h[n] w^n, which is how grid values are formed:
(vandermonde(N, K+1) @ h)[m] = H~(z_N^m) with z_N = exp(-2j*pi/N).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "RestartNeeded",
    "vandermonde",
    "dft",
    "trim_coefficients",
    "roots",
    "expand_roots",
    "lstsq",
    "constrained_lstsq_update",
]

_TRIM_TOL = 1e-14


class RestartNeeded(RuntimeError):
    """The constrained solve degenerated; the caller should re-initialize."""


def vandermonde(N: int, M: int) -> np.ndarray:
    """N x M matrix with entries exp(-2j*pi*n*m/N)."""
    if N < 1 or M < 1:
        raise ValueError("vandermonde dimensions must be >= 1")
    n = np.arange(N)[:, None]
    m = np.arange(M)[None, :]
    return np.exp(-2j * np.pi * n * m / N)


def dft(x) -> np.ndarray:
    """DFT g^[m] = sum_n g[n] exp(-2j*pi*m*n/N); equals vandermonde(N, N) @ g."""
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("empty sequence")
    return np.fft.fft(x)


def trim_coefficients(p) -> np.ndarray:
    """Drop leading coefficients below 1e-14 relative to the largest one."""
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    scale = np.abs(p).max()
    if scale == 0:
        raise ValueError("zero polynomial")
    nz = np.nonzero(np.abs(p) > _TRIM_TOL * scale)[0]
    return p[nz[0]:]


def roots(p) -> np.ndarray:
    """Roots of the trimmed polynomial via the balanced companion matrix."""
    p = trim_coefficients(p)
    if p.size < 2:
        raise ValueError("polynomial degree must be >= 1")
    return np.roots(p)


def expand_roots(u) -> np.ndarray:
    """Monic coefficients of prod_k (1 - u_k * z^(-1)), i.e. p[0] = 1."""
    return np.atleast_1d(np.poly(np.asarray(u, dtype=complex)))


def lstsq(A, b) -> np.ndarray:
    """Minimum-norm least-squares solution of A x ~ b."""
    A = np.asarray(A)
    b = np.asarray(b)
    if A.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch")
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return x


def constrained_lstsq_update(A, B, h0):
    """Minimize ||A h - B q||_2 subject to the normalization <h0, h> = 1.

    The constraint is the Hermitian inner product h0^H h = 1 (the coefficient
    form of normalizing against the initial denominator on the unit circle).
    Solved by eliminating the constraint: with x = [h; -q] and c = [h0; 0],
    x = x_p + P_c z where x_p = c / (c^H c) and P_c projects onto c-perp; the
    reduced problem is an ordinary least squares in z.  For an invertible
    normal matrix this coincides with the multiplier update
    x = kappa * (M^H M)^{-1} c, and it remains well defined when A or B is
    rank deficient (minimum-norm tie-break).

    Returns
    -------
    h : (p,) complex
    q : (r,) complex
    kappa : float
        Lagrange multiplier scaling the unconstrained direction.

    Raises
    ------
    RestartNeeded
        If the solve produces non-finite values.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    h0 = np.asarray(h0, dtype=complex).ravel()
    if A.shape[0] != B.shape[0]:
        raise ValueError("A and B must have the same number of rows")
    if A.shape[1] != h0.size:
        raise ValueError("h0 length must match the column count of A")
    p, r = A.shape[1], B.shape[1]
    M = np.hstack([A, B])
    c = np.concatenate([h0, np.zeros(r, dtype=complex)])
    cc = np.real(np.vdot(c, c))
    if cc == 0:
        raise ValueError("h0 must be nonzero")

    # fast path: x = kappa * (M^H M)^{-1} c via a Cholesky solve
    x = None
    G = M.conj().T @ M
    try:
        low = scipy.linalg.cho_factor(G, check_finite=False)
        x_raw = scipy.linalg.cho_solve(low, c, check_finite=False)
        denom = np.vdot(c, x_raw)
        if abs(denom) > 1e-14 * max(np.abs(x_raw).max(), 1.0):
            x = x_raw / denom
    except (np.linalg.LinAlgError, ValueError):
        x = None

    if x is None or not np.all(np.isfinite(x)):
        # rank-deficient normal matrix: eliminate the constraint and solve the
        # reduced least squares (minimum-norm tie-break)
        x_p = c / cc
        Mc = M @ c
        MP = M - np.outer(Mc, np.conj(c)) / cc
        try:
            z, *_ = np.linalg.lstsq(MP, -M @ x_p, rcond=None)
        except np.linalg.LinAlgError as exc:
            raise RestartNeeded("constrained least-squares solve failed") from exc
        z = z - c * (np.vdot(c, z) / cc)
        x = x_p + z
        if not np.all(np.isfinite(x)):
            raise RestartNeeded("constrained least-squares produced non-finite values")
    kappa = float(np.real(np.vdot(M @ c, M @ x)) / cc)
    return x[:p], -x[p:], kappa
