"""Measure functions on Hilbert space and their derivative bundles.

A measure function g assigns a non-negative weight to every state vector.
It plays three roles in a hybrid classical-quantum theory:

* its level set g(x) = 1 defines the normalised states,
* the zero-drift (martingale) condition on g along stochastic trajectories
  constrains the admissible quantum drift operator A for a given coupling B,
* its gradient determines the back-reaction force exerted on the classical
  coordinate, and equivalently the path-weight process that converts bare
  Wiener statistics into the interacting statistics.

Four parametric families are implemented.  Their derivative bundles
(holomorphic gradient, both second-derivative matrices) are hand-coded;
``tests`` validate every bundle against extended-precision finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ConfigError, SupportError
from .noise import WienerPath

#: States with g below this fraction of the family's natural scale are
#: treated as outside the support of the measure.
SUPPORT_FLOOR = 1e-9

_NONNEG_SAMPLES = 10_000


@dataclass(frozen=True)
class GradientBundle:
    """First and second derivatives of g at one state.

    ``grad[i] = dg/dx_i`` (holomorphic derivative, column convention),
    ``s_matrix[i, j] = d^2 g / dx_i dx_j`` (symmetric),
    ``h_matrix[i, j] = d^2 g / dconj(x)_i dx_j`` (Hermitian).
    """

    grad: np.ndarray
    s_matrix: np.ndarray
    h_matrix: np.ndarray


def _norm_sq(x: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", x.conj(), x).real


class MeasureFamily:
    """Base class for measure-function families.

    Subclasses implement ``value``/``_grad_dot``/``bundle`` and declare the
    positive-rescaling degree d such that g(s x) = s**d g(x) for real s > 0.
    All evaluation methods accept batched states of shape (..., n).
    """

    name: str = "?"

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bundle(self, x: np.ndarray) -> GradientBundle:
        raise NotImplementedError

    def _grad_dot(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Batched contraction sum_i (grad g)_i v_i used by the force."""
        raise NotImplementedError

    @property
    def scale_degree(self) -> int:
        raise NotImplementedError

    def support_scale(self, x: np.ndarray) -> np.ndarray:
        """Natural magnitude of g at ``x``; g / support_scale ~ distance from
        the support boundary (1 for families whose g never vanishes on rays)."""
        raise NotImplementedError

    def _check_nonnegative(self, dim: int) -> None:
        rng = np.random.default_rng(20240917)
        pts = rng.standard_normal((_NONNEG_SAMPLES, dim)) + 1j * rng.standard_normal((_NONNEG_SAMPLES, dim))
        vals = self.value(pts)
        if np.min(vals) < -1e-12:
            raise ConfigError(f"{self.name}: measure takes negative values (min {np.min(vals):.3e})")


@dataclass(frozen=True)
class NormLinear(MeasureFamily):
    """g(x) = c x^dag x + c0 with c > 0, c0 >= 0.

    The c0 = 0 case is the norm-squared measure of standard quantum
    mechanics; c is a unit convention absorbed by the initial normalisation.
    """

    c: float = 1.0
    c0: float = 0.0
    name: str = field(default="norm-linear", init=False, repr=False)

    def __post_init__(self):
        if not (self.c > 0 and np.isfinite(self.c)):
            raise ConfigError(f"norm-linear: c must be positive, got {self.c}")
        if not (self.c0 >= 0 and np.isfinite(self.c0)):
            raise ConfigError(f"norm-linear: c0 must be non-negative, got {self.c0}")
        self._check_nonnegative(2)

    def value(self, x):
        return self.c * _norm_sq(np.asarray(x, dtype=complex)) + self.c0

    def bundle(self, x):
        xa = linalg.as_state(x)
        n = xa.shape[0]
        return GradientBundle(grad=self.c * xa.conj(),
                              s_matrix=np.zeros((n, n), dtype=complex),
                              h_matrix=self.c * np.eye(n, dtype=complex))

    def _grad_dot(self, x, v):
        return self.c * np.einsum("...i,...i->...", x.conj(), v)

    @property
    def scale_degree(self) -> int:
        if self.c0 != 0.0:
            raise ConfigError("norm-linear with c0 != 0 is not homogeneous under rescaling")
        return 2

    def support_scale(self, x):
        return self.c * _norm_sq(np.asarray(x, dtype=complex)) + self.c0


@dataclass(frozen=True)
class NormPower(MeasureFamily):
    """g(x) = (x^dag x)**p for integer p >= 2 (p = 2 is the quartic measure)."""

    p: int = 2
    name: str = field(default="norm-power", init=False, repr=False)

    def __post_init__(self):
        if not (isinstance(self.p, (int, np.integer)) and self.p >= 2):
            raise ConfigError(f"norm-power: p must be an integer >= 2, got {self.p!r}")
        self._check_nonnegative(2)

    def value(self, x):
        return _norm_sq(np.asarray(x, dtype=complex)) ** self.p

    def bundle(self, x):
        xa = linalg.as_state(x)
        p = self.p
        s = _norm_sq(xa)
        n = xa.shape[0]
        grad = p * s ** (p - 1) * xa.conj()
        s_mat = p * (p - 1) * s ** (p - 2) * np.outer(xa.conj(), xa.conj())
        h_mat = p * (p - 1) * s ** (p - 2) * np.outer(xa, xa.conj()) \
            + p * s ** (p - 1) * np.eye(n, dtype=complex)
        return GradientBundle(grad=grad, s_matrix=s_mat, h_matrix=h_mat)

    def _grad_dot(self, x, v):
        s = _norm_sq(x)
        return self.p * s ** (self.p - 1) * np.einsum("...i,...i->...", x.conj(), v)

    @property
    def scale_degree(self) -> int:
        return 2 * self.p

    def support_scale(self, x):
        return self.value(x)


@dataclass(frozen=True)
class RealAmplitude(MeasureFamily):
    """g(x) = (x + conj(x))^T (x + conj(x)), the real-amplitude measure.

    Only the real part of the state carries weight; states with vanishing
    real part lie outside the support.  Rays are real-projective: physical
    quantities are invariant under rescaling by nonzero *real* factors.
    """

    name: str = field(default="real-amplitude", init=False, repr=False)

    def __post_init__(self):
        self._check_nonnegative(2)

    def value(self, x):
        xa = np.asarray(x, dtype=complex)
        r = xa + xa.conj()
        return np.einsum("...i,...i->...", r, r).real

    def bundle(self, x):
        xa = linalg.as_state(x)
        n = xa.shape[0]
        eye = np.eye(n, dtype=complex)
        return GradientBundle(grad=2.0 * (xa + xa.conj()),
                              s_matrix=2.0 * eye, h_matrix=2.0 * eye)

    def _grad_dot(self, x, v):
        r = x + np.conj(x)
        return 2.0 * np.einsum("...i,...i->...", r, v)

    @property
    def scale_degree(self) -> int:
        return 2

    def support_scale(self, x):
        return 4.0 * _norm_sq(np.asarray(x, dtype=complex))


class QuadraticForm(MeasureFamily):
    """g(x) = x^dag T x for a Hermitian positive semi-definite matrix T.

    T = c * identity reduces to the norm-squared measure; a generic T tilts
    the normalisation surface into an ellipsoid.
    """

    name = "quadratic-form"

    def __init__(self, t_matrix):
        t = linalg.require_hermitian(t_matrix, name="T")
        w = np.linalg.eigvalsh(t)
        if w.min() < -1e-12:
            raise ConfigError(f"quadratic-form: T must be positive semi-definite "
                              f"(min eigenvalue {w.min():.3e})")
        t = t.copy()
        t.setflags(write=False)
        self.t_matrix = t
        self._eig_range = (float(w.min()), float(w.max()))
        self._check_nonnegative(t.shape[0])

    def __repr__(self):
        return f"QuadraticForm(t_matrix={self.t_matrix.tolist()!r})"

    def __eq__(self, other):
        return isinstance(other, QuadraticForm) and np.array_equal(self.t_matrix, other.t_matrix)

    def __hash__(self):
        return hash(self.t_matrix.tobytes())

    @property
    def dim(self) -> int:
        return self.t_matrix.shape[0]

    def value(self, x):
        xa = np.asarray(x, dtype=complex)
        tx = xa @ self.t_matrix.T
        return np.einsum("...i,...i->...", xa.conj(), tx).real

    def bundle(self, x):
        xa = linalg.as_state(x, dim=self.dim)
        n = xa.shape[0]
        return GradientBundle(grad=self.t_matrix.T @ xa.conj(),
                              s_matrix=np.zeros((n, n), dtype=complex),
                              h_matrix=self.t_matrix.astype(complex))

    def _grad_dot(self, x, v):
        tx = x @ self.t_matrix.T
        return np.einsum("...i,...i->...", tx.conj(), v)

    @property
    def scale_degree(self) -> int:
        return 2

    def support_scale(self, x):
        return self._eig_range[1] * _norm_sq(np.asarray(x, dtype=complex))


# ---------------------------------------------------------------------------
# Module-level operations


def eval_g(family: MeasureFamily, x) -> float | np.ndarray:
    """Evaluate the measure function; batched over leading axes of ``x``."""
    xa = np.asarray(x, dtype=complex)
    if xa.ndim == 1:
        linalg.as_state(xa)
        return float(family.value(xa))
    return family.value(xa)


def grad_bundle(family: MeasureFamily, x) -> GradientBundle:
    """Analytic derivative bundle (grad, S, H) of g at a single state."""
    return family.bundle(x)


def martingale_residual(family: MeasureFamily, a_op, b_op, x) -> float:
    """Magnitude of the drift of g under dx = A x dt + B x dW.

    The expression combines the first-order drift transport with the
    second-order Ito terms carried by the S and H matrices; it must vanish
    for every state of an admissible theory (zero-drift condition on the
    path weight).
    """
    xa = linalg.as_state(x)
    a = linalg.as_operator(a_op, dim=xa.shape[0])
    b = linalg.as_operator(b_op, dim=xa.shape[0])
    bun = family.bundle(xa)
    ax = a @ xa
    bx = b @ xa
    t_drift = bun.grad @ ax
    t_drift = t_drift + np.conj(t_drift)          # + x^dag A^dag conj(grad)
    t_s = 0.5 * (bx @ bun.s_matrix @ bx)
    t_s = t_s + np.conj(t_s)                       # + conjugate-pair term
    t_h = np.vdot(bx, bun.h_matrix @ bx)
    return float(abs(t_drift + t_s + t_h))


def force(family: MeasureFamily, b_op, x) -> float | np.ndarray:
    """Back-reaction force g^{-1} (grad g^T B x + x^dag B^dag conj(grad g)).

    Real for every family (the two terms are conjugates); invariant under
    rescaling of ``x`` for ray-compatible families.  Raises
    :class:`SupportError` when g vanishes at ``x``.  Batched over leading
    axes of ``x``.
    """
    xa = np.asarray(x, dtype=complex)
    single = xa.ndim == 1
    if single:
        linalg.as_state(xa)
    b = linalg.as_operator(b_op, dim=xa.shape[-1])
    bx = xa @ b.T
    out = force_given_bx(family, xa, bx)
    return float(out) if single else out


def force_given_bx(family: MeasureFamily, x: np.ndarray, bx: np.ndarray) -> np.ndarray:
    """Force from precomputed products B x (hot path of the integrators)."""
    g = family.value(x)
    floor = SUPPORT_FLOOR * family.support_scale(x)
    bad = (g <= 0.0) | (g < floor)
    if np.any(bad):
        raise SupportError("state outside the support of the measure (g -> 0)")
    return 2.0 * np.real(family._grad_dot(x, bx)) / g


def rescale_to_unit(family: MeasureFamily, x) -> np.ndarray:
    """Rescale a state by a positive real factor so that g(x) = 1 exactly.

    Used on initial states: the path-weight normalisation requires g = 1 at
    time zero.  Raises :class:`ConfigError` when g vanishes at ``x`` (state
    outside the measure's support cannot be normalised).
    """
    xa = linalg.as_state(x)
    g = float(family.value(xa))
    if isinstance(family, NormLinear) and family.c0 != 0.0:
        # solve c s^2 x^dag x = 1 - c0 for the scale s
        rem = 1.0 - family.c0
        if rem <= 0:
            raise ConfigError(f"norm-linear with c0 = {family.c0} admits no normalised states")
        base = family.c * float(_norm_sq(xa))
        if base <= 0:
            raise ConfigError("initial state has zero norm")
        return xa * np.sqrt(rem / base)
    if g <= 0 or g < SUPPORT_FLOOR * float(family.support_scale(xa)):
        raise ConfigError("initial state lies outside the support of the measure (g = 0)")
    return xa * g ** (-1.0 / family.scale_degree)


def girsanov_log_weight(drift_path, increments, dt: float) -> float:
    """Log of the explicit change-of-measure weight.

    log g_t = sum_s mu_s dW_s - 1/2 sum_s mu_s^2 dt, the discrete form of the
    exponential martingale attached to a drift path mu.  Accumulated in log
    space so long horizons cannot overflow.
    """
    mu = np.asarray(drift_path, dtype=float)
    dw = np.asarray(increments, dtype=float)
    if mu.shape != dw.shape:
        raise ValueError(f"drift path and increments must have equal length, "
                         f"got {mu.shape} vs {dw.shape}")
    return float(np.dot(mu, dw) - 0.5 * np.dot(mu, mu) * dt)


def girsanov_weight(drift_path, wiener: WienerPath) -> float:
    """Explicit change-of-measure weight exp(sum mu dW - 1/2 sum mu^2 dt)."""
    return float(np.exp(girsanov_log_weight(drift_path, wiener.increments, wiener.dt)))
