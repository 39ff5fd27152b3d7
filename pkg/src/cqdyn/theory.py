"""Construction, validation and classification of hybrid theories.

A theory couples a classical coordinate to an n-dimensional quantum state
through a measure family, a Hermitian generator G and a coupling operator B.
The quantum drift operator A is not free: it is solved from the zero-drift
condition on the measure along trajectories, one closed form per family.
Construction verifies the condition numerically at random states, so a
theory object that exists is admissible.

The module also provides the quartic-identity probes (`lemma_violation`,
`lemma_solve`) used to show that a coupling whose Hermitian part is not a
multiple of the identity cannot satisfy x^dag M x (x^dag x) = (x^dag N x)^2
for any M.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg, measure
from .errors import ConfigError
from .noise import GeneralNoiseSpec

LABEL_STANDARD = "standard-QM"
LABEL_TRIVIAL = "trivial"
LABEL_REAL = "real-amplitude-QM"
LABEL_ELLIPSOID = "ellipsoid-QM"

#: Residual tolerance for the zero-drift condition after solving for A.
RESIDUAL_TOL = 1e-10

_VALIDATION_SEED = 715517
_N_VALIDATION_STATES = 100


def _drift_parts(family: measure.MeasureFamily, g_op: np.ndarray,
                 b_op: np.ndarray) -> tuple[np.ndarray, np.ndarray, float | None]:
    """Split the solved drift A = U + D into its norm-preserving part U and
    dissipative part D; returns (U, D, b) with b the coupling trace scale of
    the norm-power family (None otherwise).

    The split matters beyond bookkeeping: rescaling the coupling B -> s B
    rescales D by s**2 while leaving U untouched, which is exactly what the
    general-noise reduction needs.
    """
    n = g_op.shape[0]
    eye = np.eye(n, dtype=complex)
    bdag_b = b_op.conj().T @ b_op

    if isinstance(family, measure.NormLinear):
        if family.c0 != 0.0:
            raise ConfigError("norm-linear theories require c0 = 0 (ray invariance)")
        g = linalg.require_hermitian(g_op, name="G")
        return -1j * g, -0.5 * bdag_b, None

    if isinstance(family, measure.NormPower):
        g = linalg.require_hermitian(g_op, name="G")
        herm_part = b_op + b_op.conj().T
        b_scale = float(np.trace(herm_part).real / (2 * n))
        defect = np.max(np.abs(herm_part - 2.0 * b_scale * eye))
        if defect > 1e-12:
            raise ConfigError(f"norm-power: B + B^dag must be a real multiple of the identity "
                              f"(defect {defect:.3e})")
        diss = -0.5 * bdag_b - (family.p - 1) * b_scale ** 2 * eye
        return -1j * g, diss, b_scale

    if isinstance(family, measure.RealAmplitude):
        g = linalg.require_hermitian(g_op, name="G")
        # For real B the zero-drift condition pins the norm-preserving part of
        # A to a real antisymmetric rotation generator W, i.e. G = i W must be
        # purely imaginary (a real-symmetric G leaks drift into the measure).
        if np.max(np.abs(g.real)) > 1e-12:
            raise ConfigError("real-amplitude: G must be purely imaginary "
                              "(i times a real antisymmetric generator)")
        if np.max(np.abs(np.asarray(b_op, dtype=complex).imag)) > 1e-12:
            raise ConfigError("real-amplitude: B must be real")
        return -1j * g, -0.5 * bdag_b, None

    if isinstance(family, measure.QuadraticForm):
        g = linalg.require_hermitian(g_op, name="G")
        t = family.t_matrix
        if t.shape[0] != n:
            raise ConfigError("quadratic-form: T dimension does not match operators")
        w = np.linalg.eigvalsh(t)
        if w.min() <= 1e-10:
            raise ConfigError(f"quadratic-form theories need strictly positive T "
                              f"(min eigenvalue {w.min():.3e})")
        t_inv = np.linalg.inv(t)
        return -1j * t_inv @ g, -0.5 * t_inv @ b_op.conj().T @ t @ b_op, None

    raise ConfigError(f"unsupported measure family {family!r}")


def solve_drift_operator(family: measure.MeasureFamily, g_op, b_op) -> np.ndarray:
    """Solve the zero-drift condition for the quantum drift operator A.

    Closed forms per family (all verified against the residual afterwards):
    norm-linear A = -iG - B^dag B / 2; quadratic-form
    A = -i T^{-1} G - T^{-1} B^dag T B / 2; norm-power adds the trace term
    -(p-1) b^2; real-amplitude restricts to real G (symmetric) and real B.
    """
    g = linalg.as_operator(g_op)
    b = linalg.as_operator(b_op, dim=g.shape[0])
    unitary, dissipative, _ = _drift_parts(family, g, b)
    a_op = unitary + dissipative
    _verify_residual(family, a_op, b)
    return a_op


def _verify_residual(family, a_op, b_op, tol: float = RESIDUAL_TOL) -> float:
    rng = np.random.default_rng(_VALIDATION_SEED)
    n = a_op.shape[0]
    worst = 0.0
    for k in range(_N_VALIDATION_STATES):
        x = linalg.random_state(rng, n, unit=(k % 2 == 0))
        worst = max(worst, measure.martingale_residual(family, a_op, b_op, x))
    if worst > tol:
        raise ConfigError(f"drift operator fails the zero-drift condition "
                          f"(max residual {worst:.3e} > {tol:.0e})")
    return worst


@dataclass(frozen=True)
class ZEntry:
    """Operators attached to one classical-coordinate bin [z_lo, z_hi)."""

    z_lo: float
    z_hi: float
    g_op: np.ndarray
    b_op: np.ndarray
    a_op: np.ndarray
    unitary: np.ndarray
    dissipative: np.ndarray
    b_scale: float | None


@dataclass(frozen=True)
class Theory:
    """An admissible hybrid theory: measure family plus solved operators.

    Immutable; all matrices are read-only views.  ``z_table`` optionally
    makes (G, B) piecewise constant in the classical coordinate, with the
    base operators serving as fallback outside every bin.
    """

    family: measure.MeasureFamily
    g_op: np.ndarray
    b_op: np.ndarray
    a_op: np.ndarray
    unitary: np.ndarray
    dissipative: np.ndarray
    b_scale: float | None = None
    z_table: tuple[ZEntry, ...] | None = None

    @property
    def dim(self) -> int:
        return self.b_op.shape[0]

    @property
    def is_uniform(self) -> bool:
        return not self.z_table

    def _entry_for(self, z: float) -> ZEntry | None:
        if self.z_table:
            for entry in self.z_table:
                if entry.z_lo <= z < entry.z_hi:
                    return entry
        return None

    def operators(self, z: float = 0.0, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Drift and coupling operators (A, B) at classical coordinate z."""
        entry = self._entry_for(z)
        if entry is None:
            return self.a_op, self.b_op
        return entry.a_op, entry.b_op

    def pointer_operator(self, z: float = 0.0, t: float = 0.0) -> np.ndarray:
        """Hermitian part B + B^dag whose eigenbasis the collapse selects."""
        _, b = self.operators(z, t)
        return b + b.conj().T

    def apply_parts(self, psi: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched products (U psi, D psi, B psi) at per-trajectory coordinates."""
        if self.is_uniform:
            return psi @ self.unitary.T, psi @ self.dissipative.T, psi @ self.b_op.T
        upsi = psi @ self.unitary.T
        dpsi = psi @ self.dissipative.T
        bpsi = psi @ self.b_op.T
        za = np.atleast_1d(np.asarray(z, dtype=float))
        for entry in self.z_table:
            mask = (za >= entry.z_lo) & (za < entry.z_hi)
            if np.any(mask):
                sub = psi[mask]
                upsi[mask] = sub @ entry.unitary.T
                dpsi[mask] = sub @ entry.dissipative.T
                bpsi[mask] = sub @ entry.b_op.T
        return upsi, dpsi, bpsi

    def terms(self, psi: np.ndarray, z: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched step ingredients: (A psi, B psi, extra classical drift)."""
        upsi, dpsi, bpsi = self.apply_parts(psi, z)
        return upsi + dpsi, bpsi, np.zeros(np.shape(z))

    def force(self, psi, z: float = 0.0, t: float = 0.0):
        """Back-reaction force at state ``psi`` and coordinate ``z``."""
        psi_a = np.asarray(psi, dtype=complex)
        single = psi_a.ndim == 1
        batch = psi_a[None, :] if single else psi_a
        zb = np.full(batch.shape[0], float(z))
        _, bpsi, _ = self.terms(batch, zb, t)
        out = measure.force_given_bx(self.family, batch, bpsi)
        return float(out[0]) if single else out


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=complex).copy()
    out.setflags(write=False)
    return out


def build_theory(family: measure.MeasureFamily, g_op, b_op,
                 z_table=None) -> Theory:
    """Construct and validate a theory.

    ``z_table`` is an optional sequence of ``(z_lo, z_hi, G, B)`` rows with
    strictly increasing, non-overlapping bins; each row is solved and
    validated independently.
    """
    g = linalg.as_operator(g_op)
    b = linalg.as_operator(b_op, dim=g.shape[0])
    unitary, dissipative, b_scale = _drift_parts(family, g, b)
    a_op = unitary + dissipative
    _verify_residual(family, a_op, b)

    entries = None
    if z_table:
        rows = []
        prev_hi = -np.inf
        for row in z_table:
            z_lo, z_hi, g_row, b_row = row
            if not (np.isfinite(z_lo) and np.isfinite(z_hi) and z_lo < z_hi):
                raise ConfigError(f"z-table bin [{z_lo}, {z_hi}) is empty or non-finite")
            if z_lo < prev_hi:
                raise ConfigError("z-table bins must be ascending and non-overlapping")
            prev_hi = z_hi
            g_e = linalg.as_operator(g_row, dim=g.shape[0])
            b_e = linalg.as_operator(b_row, dim=g.shape[0])
            u_e, d_e, bs_e = _drift_parts(family, g_e, b_e)
            a_e = u_e + d_e
            _verify_residual(family, a_e, b_e)
            rows.append(ZEntry(float(z_lo), float(z_hi), _freeze(g_e), _freeze(b_e),
                               _freeze(a_e), _freeze(u_e), _freeze(d_e), bs_e))
        entries = tuple(rows)

    return Theory(family=family, g_op=_freeze(g), b_op=_freeze(b), a_op=_freeze(a_op),
                  unitary=_freeze(unitary), dissipative=_freeze(dissipative),
                  b_scale=b_scale, z_table=entries)


class ReducedTheory:
    """Standard-form view of a theory driven by general diffusive noise.

    For noise dR = mu dt + sigma dW the effective coupling is sigma(z, t) B,
    the dissipative drift rescales by sigma^2 (re-solving the zero-drift
    condition at the effective coupling), and mu enters both the classical
    drift and the quantum drift through mu B.  The reduced system is then
    integrated against a unit Wiener process.
    """

    def __init__(self, base: Theory, noise: GeneralNoiseSpec):
        self.base = base
        self.noise = noise

    @property
    def family(self) -> measure.MeasureFamily:
        return self.base.family

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def is_uniform(self) -> bool:
        # operators depend on (z, t) through sigma/mu even for a uniform base
        return False

    def _scales(self, z: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        zb = np.atleast_1d(np.asarray(z, dtype=float))
        sigma = np.broadcast_to(np.asarray(self.noise.sigma(zb, t), dtype=float), zb.shape)
        if np.any(sigma < 0):
            raise ValueError(f"negative noise scale sigma encountered at t={t}")
        mu = np.broadcast_to(np.asarray(self.noise.mu(zb, t), dtype=float), zb.shape)
        return sigma, mu

    def operators(self, z: float = 0.0, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        entry = self.base._entry_for(z)
        if entry is None:
            u, d, b = self.base.unitary, self.base.dissipative, self.base.b_op
        else:
            u, d, b = entry.unitary, entry.dissipative, entry.b_op
        sigma, mu = self._scales(np.array([z]), t)
        s, m = float(sigma[0]), float(mu[0])
        return u + s ** 2 * d + m * b, s * b

    def pointer_operator(self, z: float = 0.0, t: float = 0.0) -> np.ndarray:
        _, b_eff = self.operators(z, t)
        return b_eff + b_eff.conj().T

    def terms(self, psi: np.ndarray, z: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        upsi, dpsi, bpsi = self.base.apply_parts(psi, z)
        sigma, mu = self._scales(z, t)
        apsi = upsi + (sigma ** 2)[:, None] * dpsi + mu[:, None] * bpsi
        return apsi, sigma[:, None] * bpsi, mu

    def force(self, psi, z: float = 0.0, t: float = 0.0):
        psi_a = np.asarray(psi, dtype=complex)
        single = psi_a.ndim == 1
        batch = psi_a[None, :] if single else psi_a
        zb = np.full(batch.shape[0], float(z))
        _, bpsi, _ = self.terms(batch, zb, t)
        out = measure.force_given_bx(self.family, batch, bpsi)
        return float(out[0]) if single else out


def classify_theory(family: measure.MeasureFamily) -> str:
    """Label the theory type generated by a measure family.

    norm-linear (c0 = 0) and quadratic-form with T proportional to the
    identity reproduce standard quantum mechanics; a generic quadratic form
    tilts the state space into an ellipsoid; norm-power couplings exert a
    constant force and are therefore trivial; the real-amplitude family is
    its own theory.  A nonzero offset c0 breaks ray invariance and is
    rejected.
    """
    if isinstance(family, measure.NormLinear):
        if family.c0 != 0.0:
            raise ConfigError("norm-linear with c0 != 0 violates ray invariance of the force")
        return LABEL_STANDARD
    if isinstance(family, measure.NormPower):
        return LABEL_TRIVIAL
    if isinstance(family, measure.RealAmplitude):
        return LABEL_REAL
    if isinstance(family, measure.QuadraticForm):
        t = family.t_matrix
        n = t.shape[0]
        scale = float(np.trace(t).real) / n
        if np.max(np.abs(t - scale * np.eye(n))) <= 1e-12:
            return LABEL_STANDARD
        return LABEL_ELLIPSOID
    raise ConfigError(f"unsupported measure family {family!r}")


# ---------------------------------------------------------------------------
# Quartic identity probes


def lemma_violation(m_op, n_op, n_samples: int, seed: int = 0) -> float:
    """Max over random unit states of |x^dag M x (x^dag x) - (x^dag N x)^2|.

    Zero (to roundoff) exactly when (M, N) = (a^2 I, a I); any other Hermitian
    pair is caught by the sampling with high probability.
    """
    m = linalg.require_hermitian(m_op, name="M")
    n = linalg.require_hermitian(n_op, name="N")
    if m.shape != n.shape:
        raise ValueError("M and N must have equal dimensions")
    dim = m.shape[0]
    rng = np.random.default_rng(seed)
    worst = 0.0
    chunk = 4096
    remaining = int(n_samples)
    while remaining > 0:
        k = min(chunk, remaining)
        remaining -= k
        x = rng.standard_normal((k, dim)) + 1j * rng.standard_normal((k, dim))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        qm = np.einsum("ki,ij,kj->k", x.conj(), m, x).real
        qn = np.einsum("ki,ij,kj->k", x.conj(), n, x).real
        ns = np.einsum("ki,ki->k", x.conj(), x).real
        worst = max(worst, float(np.max(np.abs(qm * ns - qn ** 2))))
    return worst


def lemma_solve(n_op) -> np.ndarray | None:
    """Return the unique M satisfying the quartic identity for N, if any.

    N must be a real multiple a of the identity (detected entrywise), in
    which case M = a^2 I.  When the trace saturation test
    tr(N)^2 = tr(N^2) tr(I) fails, no M exists and None is returned.
    """
    n = linalg.require_hermitian(n_op, name="N")
    dim = n.shape[0]
    a = float(np.trace(n).real) / dim
    if np.max(np.abs(n - a * np.eye(dim))) <= 1e-10:
        return a ** 2 * np.eye(dim, dtype=complex)
    tr_n = float(np.trace(n).real)
    tr_n2 = float(np.trace(n @ n).real)
    if abs(tr_n ** 2 - tr_n2 * dim) > 1e-10:
        return None
    # saturation holds numerically but N is not entrywise proportional: treat
    # as unsolvable (the identity cannot hold for a genuinely non-scalar N)
    return None


def lemma_candidate(n_op) -> np.ndarray:
    """Best-effort M for a given N from the contracted fourth-order condition.

    Solves (2 + dim) M + tr(M) I = 2 N^2 + 2 tr(N) N, the necessary linear
    relation every solution must satisfy.  For N proportional to the identity
    this reproduces the exact solution; otherwise it is the adversarial
    candidate whose violation :func:`lemma_violation` should expose.
    """
    n = linalg.require_hermitian(n_op, name="N")
    dim = n.shape[0]
    rhs = 2.0 * n @ n + 2.0 * float(np.trace(n).real) * n
    tr_m = float(np.trace(rhs).real) / (2.0 + 2.0 * dim)
    return (rhs - tr_m * np.eye(dim)) / (2.0 + dim)
