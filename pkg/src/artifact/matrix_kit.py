"""Small dense matrix utilities.

Everything here works on plain ``numpy`` arrays of modest size (a few dozen
rows at most).  Functions are pure and never modify their inputs.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    NonConvergent,
    NotSPD,
    OutOfDomain,
    SingularSystem,
    SpectrumOnCut,
)

DEFAULT_TOL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array."""
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2 or m.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array")
    if not np.all(np.isfinite(m)):
        raise OutOfDomain(f"{name} has non-finite entries")
    return m


def _square(a, name: str) -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got {m.shape}")
    return m


def kron(a, b) -> np.ndarray:
    return np.kron(as_matrix(a, "a"), as_matrix(b, "b"))


def frobenius(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float)))


def op_norm(a) -> float:
    """Largest singular value."""
    return float(np.linalg.svd(as_matrix(a), compute_uv=False)[0])


def min_singular(a) -> float:
    """Smallest singular value (over min(rows, cols) values)."""
    return float(np.linalg.svd(as_matrix(a), compute_uv=False)[-1])


def is_psd(a, tol: float = DEFAULT_TOL) -> bool:
    """True when b'Ab >= -tol|b|^2 for every b, i.e. the symmetric part is PSD.

    The matrix itself need not be symmetric.
    """
    m = _square(a, "a")
    sym = 0.5 * (m + m.T)
    return bool(np.linalg.eigvalsh(sym)[0] >= -tol)


def principal_sqrt(a, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Principal square root of a real matrix with no eigenvalues on (-inf, 0].

    Works for non-symmetric inputs (Schur based, via ``scipy.linalg.sqrtm``).
    The residual |X^2 - A| / |A| is checked against ``tol``.
    """
    m = _square(a, "a")
    scale = max(frobenius(m), np.finfo(float).tiny)
    ev = np.linalg.eigvals(m)
    on_cut = (np.abs(ev.imag) <= 1e-12 * scale) & (ev.real <= 1e-14 * scale)
    if np.any(on_cut):
        raise SpectrumOnCut(f"eigenvalue on the closed negative real axis: {ev[on_cut]}")
    if np.allclose(m, m.T, rtol=0, atol=1e-14 * scale):
        # symmetric positive definite fast path
        w, v = np.linalg.eigh(0.5 * (m + m.T))
        x = (v * np.sqrt(w)) @ v.T
    else:
        x = sla.sqrtm(m)
        if np.iscomplexobj(x):
            if np.max(np.abs(x.imag)) > 1e-8 * max(np.max(np.abs(x.real)), 1e-300):
                raise NonConvergent("square root has a non-negligible imaginary part")
            x = x.real
    res = frobenius(x @ x - m) / scale
    if not np.isfinite(res) or res > tol:
        raise NonConvergent(f"square-root residual {res:.3e} exceeds tol {tol:.1e}")
    return np.asarray(x, dtype=float)


def _check_spd(m: np.ndarray, name: str) -> np.ndarray:
    scale = max(frobenius(m), np.finfo(float).tiny)
    if frobenius(m - m.T) > 1e-10 * scale:
        raise NotSPD(f"{name} is not symmetric")
    sym = 0.5 * (m + m.T)
    w = np.linalg.eigvalsh(sym)
    if w[0] <= 0:
        raise NotSPD(f"{name} is not positive definite (min eigenvalue {w[0]:.3e})")
    return sym


def spd_power(a, p: float) -> np.ndarray:
    """A**p for symmetric positive definite A via its eigendecomposition."""
    m = _check_spd(_square(a, "a"), "a")
    w, v = np.linalg.eigh(m)
    return (v * w**p) @ v.T


def riemannian_mean(a, b, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Geometric mean A # B = A^(1/2) (A^(-1/2) B A^(-1/2))^(1/2) A^(1/2).

    The result X is symmetric positive definite and solves X A^-1 X = B.
    """
    am = _check_spd(_square(a, "a"), "a")
    bm = _check_spd(_square(b, "b"), "b")
    if am.shape != bm.shape:
        raise DimensionMismatch(f"shapes differ: {am.shape} vs {bm.shape}")
    w, v = np.linalg.eigh(am)
    a_half = (v * np.sqrt(w)) @ v.T
    a_mhalf = (v / np.sqrt(w)) @ v.T
    inner = a_mhalf @ bm @ a_mhalf
    wi, vi = np.linalg.eigh(0.5 * (inner + inner.T))
    x = a_half @ ((vi * np.sqrt(np.clip(wi, 0.0, None))) @ vi.T) @ a_half
    x = 0.5 * (x + x.T)
    res = frobenius(x @ np.linalg.solve(am, x) - bm) / frobenius(bm)
    if res > tol:
        raise NonConvergent(f"geometric-mean residual {res:.3e} exceeds tol {tol:.1e}")
    return x


def solve_lyapunov(k1, q, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Solve k1 X + X k1' = q by Kronecker vectorization.

    With column-major stacking, vec(k1 X) = (I kron k1) vec X and
    vec(X k1') = (k1 kron I) vec X.
    """
    k = _square(k1, "k1")
    qm = _square(q, "q")
    n = k.shape[0]
    if qm.shape != k.shape:
        raise DimensionMismatch(f"q has shape {qm.shape}, expected {k.shape}")
    eye = np.eye(n)
    op = np.kron(eye, k) + np.kron(k, eye)
    if np.linalg.cond(op) > 1e13:
        raise SingularSystem("Lyapunov operator is numerically singular")
    x = np.linalg.solve(op, qm.reshape(-1, order="F")).reshape(n, n, order="F")
    x = 0.5 * (x + x.T)
    qn = frobenius(qm)
    if qn > 0:
        res = frobenius(k @ x + x @ k.T - qm) / qn
        if res > tol:
            raise NonConvergent(f"Lyapunov residual {res:.3e} exceeds tol {tol:.1e}")
    return x


# 2F1(a, b; c; z) with the parameters of the absolute-moment formula
_A, _B, _C = -0.5, -0.5, 0.5
_MAX_TERMS = 100_000


def _series_2f1(a: float, b: float, c: float, z: float, tol: float) -> float:
    """Plain hypergeometric power series for 0 <= z < 1.

    Stops once the geometric tail bound term*z/(1-z) drops below tol*sum.
    """
    total = term = 1.0
    n = 0
    while n < _MAX_TERMS:
        term *= (a + n) * (b + n) / ((c + n) * (n + 1.0)) * z
        n += 1
        total += term
        if abs(term) * z / (1.0 - z) <= tol * abs(total):
            return total
    raise NonConvergent(f"2F1 series did not converge in {_MAX_TERMS} terms (z={z})")


def gauss_2f1_abs_moment(rho: float, tol: float = DEFAULT_TOL) -> float:
    """Evaluate 2F1(-1/2, -1/2; 1/2; rho^2) for |rho| <= 1.

    For rho^2 <= 1/2 the defining series is summed directly.  Closer to 1 the
    series converges slowly, so the standard z -> 1-z connection formula is
    used; it expresses the value through two series in 1 - rho^2 whose
    prefactors are gamma-function ratios.  At |rho| = 1 only the first
    prefactor survives, which is Gauss's summation value.
    """
    rho = float(rho)
    if not math.isfinite(rho) or abs(rho) > 1.0:
        raise OutOfDomain(f"|rho| must be <= 1, got {rho}")
    z = rho * rho
    a, b, c = _A, _B, _C
    if z <= 0.5:
        return _series_2f1(a, b, c, z, tol)
    g = math.gamma
    w = 1.0 - z
    pref1 = g(c) * g(c - a - b) / (g(c - a) * g(c - b))
    if w == 0.0:
        return pref1
    pref2 = g(c) * g(a + b - c) / (g(a) * g(b))
    s1 = _series_2f1(a, b, a + b - c + 1.0, w, tol)
    s2 = _series_2f1(c - a, c - b, c - a - b + 1.0, w, tol)
    return pref1 * s1 + pref2 * w ** (c - a - b) * s2
