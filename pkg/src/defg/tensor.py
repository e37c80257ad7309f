"""Dense complex tensor algebra and small Hermitian linear algebra.

Tensors are plain ``numpy`` arrays of dtype ``complex128`` laid out row-major.
The Hermitian eigensolver is a cyclic complex Jacobi iteration, adequate for
the matrices (at most 64 x 64) that appear as grouped local functions,
messages and transfer matrices.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ComplexEigenvalueError, ConvergenceError, NotHermitianError, NotPSDError

DEFAULT_TOL = 1e-9
MAX_SWEEPS = 100


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # real, descending
    eigenvectors: np.ndarray  # columns orthonormal


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Return ``data`` as a finite complex128 array, optionally reshaped."""
    arr = np.asarray(data, dtype=np.complex128)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ValueError(f"axis sizes must be >= 1, got {shape}")
        if arr.size != math.prod(shape):
            raise ValueError(f"{arr.size} values cannot fill shape {shape}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


def contract(a, b, paired_axes: Sequence[tuple[int, int]]) -> np.ndarray:
    """Sum ``a * b`` over the paired axes.

    The result keeps the unpaired axes of ``a`` followed by those of ``b``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    axes_a, axes_b = [], []
    for ia, ib in paired_axes:
        if not -a.ndim <= ia < a.ndim:
            raise IndexError(f"axis {ia} out of range for tensor of rank {a.ndim}")
        if not -b.ndim <= ib < b.ndim:
            raise IndexError(f"axis {ib} out of range for tensor of rank {b.ndim}")
        if a.shape[ia] != b.shape[ib]:
            raise ValueError(
                f"cannot pair axis {ia} (size {a.shape[ia]}) with axis {ib} (size {b.shape[ib]})"
            )
        axes_a.append(ia % a.ndim)
        axes_b.append(ib % b.ndim)
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def _square(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def is_hermitian(m, tol: float = DEFAULT_TOL) -> bool:
    m = _square(m)
    scale = np.max(np.abs(m)) if m.size else 0.0
    if scale == 0.0:
        return True
    return bool(np.max(np.abs(m - m.conj().T)) <= tol * scale)


def _jacobi(a: np.ndarray, max_sweeps: int) -> EigenDecomposition:
    # ``a`` is an exactly Hermitian working copy; it is overwritten.
    n = a.shape[0]
    v = np.eye(n, dtype=np.complex128)
    scale = math.sqrt(float(np.sum(a.real**2 + a.imag**2)))
    if n > 1 and scale > 0.0:
        floor = 1e-15 * scale
        for _ in range(max_sweeps):
            rotated = False
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = complex(a[p, q])
                    r = abs(apq)
                    if r <= floor:
                        continue
                    # W = diag(1, e) @ [[c, -s], [s, c]] zeroes the (p, q) entry of W^H a W
                    theta = 0.5 * math.atan2(2.0 * r, a[p, p].real - a[q, q].real)
                    c, s = math.cos(theta), math.sin(theta)
                    e = (apq / r).conjugate()
                    es, ec = e * s, e * c
                    col_p = a[:, p].copy()
                    a[:, p] = c * col_p + es * a[:, q]
                    a[:, q] = ec * a[:, q] - s * col_p
                    row_p = a[p, :].copy()
                    a[p, :] = c * row_p + es.conjugate() * a[q, :]
                    a[q, :] = ec.conjugate() * a[q, :] - s * row_p
                    a[p, q] = a[q, p] = 0.0
                    col_p = v[:, p].copy()
                    v[:, p] = c * col_p + es * v[:, q]
                    v[:, q] = ec * v[:, q] - s * col_p
                    rotated = True
            if not rotated:
                break
        else:
            raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    evals = np.real(np.diag(a)).copy()
    order = np.argsort(-evals, kind="stable")
    return EigenDecomposition(evals[order], v[:, order])


def hermitian_eig(
    m, tol: float = DEFAULT_TOL, max_sweeps: int = MAX_SWEEPS
) -> EigenDecomposition:
    """Eigen-decompose a Hermitian matrix with cyclic Jacobi rotations.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Hermitian within ``tol`` relative to its largest entry.
    tol : float
        Hermiticity tolerance.
    max_sweeps : int
        Bound on the number of full cyclic sweeps.

    Returns
    -------
    EigenDecomposition
        Real eigenvalues in descending order and the unitary matrix whose
        columns are the matching eigenvectors.
    """
    a = _square(m)
    if not is_hermitian(a, tol):
        raise NotHermitianError("matrix is not Hermitian within tolerance")
    return _jacobi(0.5 * (a + a.conj().T), max_sweeps)


def _small_eigvals(m: np.ndarray) -> np.ndarray:
    # closed form of a single Jacobi rotation, descending
    if m.shape[0] == 1:
        return np.array([m[0, 0].real])
    a, b = m[0, 0].real, m[1, 1].real
    c = 0.5 * (m[0, 1] + m[1, 0].conjugate())
    mid, rad = 0.5 * (a + b), math.hypot(0.5 * (a - b), abs(c))
    return np.array([mid + rad, mid - rad])


def _psd_floor(evals: np.ndarray, tol: float) -> float:
    top = float(np.max(np.abs(evals))) if evals.size else 0.0
    return tol * max(1.0, top)


def psd_check(m, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``m`` is Hermitian and positive semi-definite within ``tol``."""
    m = _square(m)
    if not is_hermitian(m, tol):
        return False
    if m.shape[0] <= 2:
        evals = _small_eigvals(m)
    else:
        evals = _jacobi(0.5 * (m + m.conj().T), MAX_SWEEPS).eigenvalues
    return bool(evals[-1] >= -_psd_floor(evals, tol))


def psd_factorize(m, tol: float = DEFAULT_TOL) -> list[np.ndarray]:
    """Vectors ``b_k`` with ``m[x, x'] == sum_k conj(b_k[x]) * b_k[x']``.

    Eigenvalues in ``[-floor, 0)`` are treated as zero; anything more negative
    is rejected.
    """
    m = _square(m)
    if not is_hermitian(m, tol):
        raise NotPSDError("matrix is not Hermitian within tolerance")
    evals, evecs = hermitian_eig(m, tol)
    floor = _psd_floor(evals, tol)
    if evals.size and evals[-1] < -floor:
        raise NotPSDError(f"matrix has eigenvalue {evals[-1]:.3e} below -{floor:.3e}")
    return [
        math.sqrt(lam) * evecs[:, k].conj()
        for k, lam in enumerate(evals)
        if lam > floor
    ]


def power_iteration(
    m,
    max_iters: int = 100_000,
    tol: float = 1e-13,
    start=None,
) -> tuple[float, int]:
    """Dominant eigenvalue of ``m`` by repeated application with rescaling.

    Stops once the Rayleigh quotient changes by less than ``tol`` (relative)
    and its imaginary part is below ``tol`` times its magnitude. ``start``
    must not be orthogonal to the dominant left eigenvector; the all-ones
    vector is used when omitted.

    Returns the real eigenvalue estimate and the number of iterations used.
    """
    m = _square(m)
    n = m.shape[0]
    x = np.ones(n, dtype=np.complex128) if start is None else np.asarray(start, np.complex128).ravel()
    if x.shape != (n,):
        raise ValueError(f"start vector must have length {n}")
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise ValueError("start vector is zero")
    x = x / norm
    prev = None
    settled = False
    for it in range(1, max_iters + 1):
        y = m @ x
        rho = complex(np.vdot(x, y))
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, it
        x = y / norm
        if prev is not None:
            settled = abs(rho - prev) <= tol * abs(rho)
            if settled and abs(rho.imag) <= tol * abs(rho):
                return rho.real, it
        prev = rho
    if settled:
        raise ComplexEigenvalueError(
            f"dominant eigenvalue estimate {prev:.6g} has a non-negligible imaginary part"
        )
    raise ConvergenceError(f"power iteration did not converge in {max_iters} iterations")


def matrix_power_trace(m, p: int) -> complex:
    """``trace(m**p)`` by repeated multiplication."""
    m = _square(m)
    if p < 1:
        raise ValueError("p must be >= 1")
    r = m
    for _ in range(p - 1):
        r = r @ m
    return complex(np.trace(r))
