"""Dense complex linear algebra on small Hilbert-space dimensions.

Everything in this package works with plain numpy arrays: a state vector is a
1-D complex array, an operator is a square 2-D complex array.  Dimensions are
capped at :data:`MAX_DIM`; all validation funnels through :func:`as_state` and
:func:`as_operator`.
"""

from __future__ import annotations

import numpy as np

#: Largest Hilbert-space dimension accepted anywhere in the package.
MAX_DIM = 16

#: Absolute entry-wise tolerance for Hermiticity checks.
HERMITIAN_ATOL = 1e-12


def as_state(x, dim: int | None = None) -> np.ndarray:
    """Validate and return ``x`` as a complex state vector."""
    arr = np.asarray(x, dtype=complex)
    if arr.ndim != 1:
        raise ValueError(f"state vector must be 1-D, got shape {arr.shape}")
    n = arr.shape[0]
    if not 1 <= n <= MAX_DIM:
        raise ValueError(f"state dimension must be in [1, {MAX_DIM}], got {n}")
    if dim is not None and n != dim:
        raise ValueError(f"state dimension mismatch: expected {dim}, got {n}")
    if not np.all(np.isfinite(arr.view(float))):
        raise ValueError("state vector contains non-finite entries")
    return arr


def as_operator(m, dim: int | None = None) -> np.ndarray:
    """Validate and return ``m`` as a square complex operator matrix."""
    arr = np.asarray(m, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"operator must be square, got shape {arr.shape}")
    n = arr.shape[0]
    if not 1 <= n <= MAX_DIM:
        raise ValueError(f"operator dimension must be in [1, {MAX_DIM}], got {n}")
    if dim is not None and n != dim:
        raise ValueError(f"operator dimension mismatch: expected {dim}, got {n}")
    if not np.all(np.isfinite(arr.view(float))):
        raise ValueError("operator contains non-finite entries")
    return arr


def hermiticity_defect(m) -> float:
    """Max entry-wise deviation of ``m`` from its conjugate transpose."""
    arr = np.asarray(m, dtype=complex)
    return float(np.max(np.abs(arr - arr.conj().T))) if arr.size else 0.0


def is_hermitian(m, atol: float = HERMITIAN_ATOL) -> bool:
    return hermiticity_defect(m) <= atol


def require_hermitian(m, atol: float = HERMITIAN_ATOL, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as an operator after checking Hermiticity to ``atol``."""
    arr = as_operator(m)
    defect = hermiticity_defect(arr)
    if defect > atol:
        raise ValueError(f"{name} is not Hermitian: max|M - M^dag| = {defect:.3e} > {atol:.0e}")
    return arr


def inner(x, y) -> complex:
    """Hermitian inner product x^dag y (conjugate-linear in the first slot)."""
    xa = as_state(x)
    ya = as_state(y, dim=xa.shape[0])
    return complex(np.vdot(xa, ya))


def quadratic_form(m, x) -> complex:
    """Evaluate x^dag M x.  Real up to roundoff when M is Hermitian."""
    xa = as_state(x)
    ma = as_operator(m, dim=xa.shape[0])
    return complex(np.vdot(xa, ma @ xa))


def hermitian_eigensystem(m, atol: float = HERMITIAN_ATOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Returns ``(w, v)`` with eigenvalues ``w`` ascending and orthonormal
    eigenvectors as the columns of ``v``, so that ``m == v @ diag(w) @ v^dag``
    up to roundoff.  Raises ``ValueError`` for non-Hermitian input.
    """
    ma = require_hermitian(m, atol=atol)
    w, v = np.linalg.eigh(ma)
    return w, v


def random_state(rng: np.random.Generator, n: int, unit: bool = False) -> np.ndarray:
    """Draw a complex Gaussian state vector; optionally normalised to x^dag x = 1."""
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    if unit:
        x = x / np.linalg.norm(x)
    return x


def random_hermitian(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    """Draw a Hermitian matrix with independent Gaussian entries."""
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_operator(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    """Draw a general complex matrix with independent Gaussian entries."""
    return scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
