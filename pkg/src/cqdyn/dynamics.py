"""Euler-Maruyama integration of the coupled classical-quantum dynamics.

Two pictures of the same statistics are implemented:

* the *true* (interacting) picture, where the quantum state back-reacts on
  the classical drift through the measure-derived force.  Forward sampling
  draws the innovation Wiener increment dW; the bare-noise increment that
  drives the quantum state is the realised classical fluctuation
  f dt + dW, so the quantum drift carries the force-induced correction.
  The state is optionally rescaled to g = 1 after every step (exact, since
  the force only depends on the ray).
* the *linear* (non-interacting) picture, where the classical coordinate is
  a bare Wiener path, the quantum state evolves linearly, and all coupling
  is carried by the path weight g(psi_t).

Trajectories are embarrassingly parallel.  The ensemble is processed in
fixed-size chunks whose partial results are reduced in chunk order, so the
output is bit-identical for any parallelism degree.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg, measure
from .errors import ConfigError, NonFiniteError, SupportError
from .noise import IncrementSource

PICTURE_TRUE = "true"
PICTURE_LINEAR = "linear"

#: Ensemble chunk size (trajectories); fixed so results never depend on the
#: parallelism degree.
CHUNK_SIZE = 8192

#: Number of time steps of Wiener increments generated per block.
NOISE_BLOCK = 1024

_LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class SimConfig:
    """Settings of one simulation run.

    ``psi0`` is rescaled so the measure equals one at load time; ``z0`` is
    the initial classical coordinate.  ``noise_stream`` selects an
    independent family of per-trajectory noise streams under the same seed
    (used e.g. to decorrelate the two pictures in equivalence tests).
    """

    dt: float
    t_final: float
    n_checkpoints: int = 10
    picture: str = PICTURE_TRUE
    renormalize: bool = True
    n_traj: int = 1
    seed: int = 0
    z0: float = 0.0
    psi0: np.ndarray | None = field(default=None)
    noise_stream: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.t_final < self.dt:
            raise ConfigError("t_final must be at least one step dt")
        if self.picture not in (PICTURE_TRUE, PICTURE_LINEAR):
            raise ConfigError(f"picture must be 'true' or 'linear', got {self.picture!r}")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.n_checkpoints < 1:
            raise ConfigError("n_checkpoints must be >= 1")
        if self.n_checkpoints > self.n_steps:
            raise ConfigError("more checkpoints than time steps")
        if self.psi0 is not None:
            object.__setattr__(self, "psi0", linalg.as_state(self.psi0))

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_final / self.dt)))

    @property
    def t_effective(self) -> float:
        return self.n_steps * self.dt

    @property
    def checkpoint_steps(self) -> tuple[int, ...]:
        """Strictly increasing step indices of the checkpoints (excluding 0)."""
        k = self.n_checkpoints
        raw = [int(round(j * self.n_steps / k)) for j in range(1, k + 1)]
        steps, prev = [], 0
        for s in raw:
            s = max(s, prev + 1)
            steps.append(s)
            prev = s
        if steps[-1] != self.n_steps:
            raise ConfigError("checkpoint layout does not reach t_final")
        return tuple(steps)

    @property
    def checkpoint_times(self) -> np.ndarray:
        return np.array([0.0] + [s * self.dt for s in self.checkpoint_steps])


@dataclass(frozen=True)
class CQState:
    """Instantaneous hybrid state: time, classical coordinate, quantum state."""

    t: float
    z: float
    psi: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Checkpointed path of one noise realisation.

    ``log_weight`` is identically zero in the true picture; in the linear
    picture it holds log g(psi_t) per checkpoint (g(psi_0) = 1 at load).
    """

    config: SimConfig
    states: tuple[CQState, ...]
    log_weight: np.ndarray
    wiener_seed_info: tuple[int, int]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def z_path(self) -> np.ndarray:
        return np.array([s.z for s in self.states])


@dataclass
class EnsemblePaths:
    """Checkpointed arrays for a whole ensemble (trajectory-major layout)."""

    config: SimConfig
    times: np.ndarray        # (K+1,)
    z: np.ndarray            # (n_traj, K+1)
    psi: np.ndarray          # (n_traj, K+1, n)
    log_weight: np.ndarray   # (n_traj, K+1)


def prepare_initial_state(theory, config: SimConfig) -> np.ndarray:
    """Validate and normalise the configured initial state (g = 1 exactly)."""
    if config.psi0 is None:
        raise ConfigError("config.psi0 is required for simulation")
    psi0 = linalg.as_state(config.psi0, dim=theory.dim)
    return measure.rescale_to_unit(theory.family, psi0)


def _raise_support(theory, psi, t, offset):
    g = theory.family.value(psi)
    floor = measure.SUPPORT_FLOOR * theory.family.support_scale(psi)
    bad = np.flatnonzero((g <= 0.0) | (g < floor))
    idx = int(bad[0]) + offset if bad.size else offset
    raise SupportError(f"trajectory {idx} left the support of the measure at t = {t:.6g}",
                       time=float(t), trajectory=idx)


def _step_block(theory, psi, z, dw, t, dt, picture, renormalize, offset=0):
    """Advance a batch of trajectories by one Euler-Maruyama step."""
    family = theory.family
    apsi, bpsi, mu = theory.terms(psi, z, t)
    if picture == PICTURE_TRUE:
        try:
            f = measure.force_given_bx(family, psi, bpsi)
        except SupportError:
            _raise_support(theory, psi, t, offset)
        bare = f * dt + dw                      # realised bare-noise increment
        z_new = z + (f + mu) * dt + dw
        psi_new = psi + apsi * dt + bpsi * bare[:, None]
        if renormalize:
            g = family.value(psi_new)
            floor = measure.SUPPORT_FLOOR * family.support_scale(psi_new)
            if np.any((g <= 0.0) | (g < floor)):
                _raise_support(theory, psi_new, t + dt, offset)
            psi_new *= (g ** (-1.0 / family.scale_degree))[:, None]
    else:
        z_new = z + mu * dt + dw
        psi_new = psi + apsi * dt + bpsi * dw[:, None]
    if not (np.all(np.isfinite(psi_new.view(float))) and np.all(np.isfinite(z_new))):
        bad = ~np.all(np.isfinite(psi_new.view(float)).reshape(psi_new.shape[0], -1), axis=1)
        bad |= ~np.isfinite(z_new)
        idx = int(np.flatnonzero(bad)[0]) + offset
        raise NonFiniteError(f"trajectory {idx} produced non-finite values at t = {t + dt:.6g}",
                             time=float(t + dt), trajectory=idx)
    return psi_new, z_new


def step_true(theory, state: CQState, dw: float, dt: float,
              renormalize: bool = True) -> CQState:
    """One interacting-picture step from ``state`` under increment ``dw``."""
    psi = linalg.as_state(state.psi, dim=theory.dim)
    pb, zb = _step_block(theory, psi[None, :].copy(), np.array([state.z], dtype=float),
                         np.array([float(dw)]), state.t, dt, PICTURE_TRUE, renormalize)
    return CQState(t=state.t + dt, z=float(zb[0]), psi=pb[0])


def step_linear(theory, state: CQState, dw: float, dt: float) -> CQState:
    """One linear-picture step: bare classical noise, linear quantum update."""
    psi = linalg.as_state(state.psi, dim=theory.dim)
    pb, zb = _step_block(theory, psi[None, :].copy(), np.array([state.z], dtype=float),
                         np.array([float(dw)]), state.t, dt, PICTURE_LINEAR, False)
    return CQState(t=state.t + dt, z=float(zb[0]), psi=pb[0])


def _log_g(family, psi) -> np.ndarray:
    return np.log(np.maximum(family.value(psi), _LOG_FLOOR))


def _paths_worker(args):
    theory, config, psi0, start, count = args
    n_steps = config.n_steps
    dt = config.dt
    cp_steps = config.checkpoint_steps
    n = psi0.shape[0]
    k_cp = len(cp_steps)

    psi = np.tile(psi0, (count, 1))
    z = np.full(count, config.z0, dtype=float)
    z_cp = np.empty((count, k_cp + 1))
    psi_cp = np.empty((count, k_cp + 1, n), dtype=complex)
    logw_cp = np.zeros((count, k_cp + 1))
    z_cp[:, 0] = z
    psi_cp[:, 0] = psi
    if config.picture == PICTURE_LINEAR:
        logw_cp[:, 0] = _log_g(theory.family, psi)

    src = IncrementSource(config.seed, start, count, dt, stream=config.noise_stream)
    next_cp = 0
    k = 0
    while k < n_steps:
        block = src.next_block(min(NOISE_BLOCK, n_steps - k))
        for s in range(block.shape[1]):
            psi, z = _step_block(theory, psi, z, block[:, s], k * dt, dt,
                                 config.picture, config.renormalize, offset=start)
            k += 1
            if next_cp < k_cp and k == cp_steps[next_cp]:
                j = next_cp + 1
                z_cp[:, j] = z
                psi_cp[:, j] = psi
                if config.picture == PICTURE_LINEAR:
                    logw_cp[:, j] = _log_g(theory.family, psi)
                next_cp += 1
    return z_cp, psi_cp, logw_cp


def _chunk_ranges(n_traj: int, chunk: int = CHUNK_SIZE):
    return [(start, min(chunk, n_traj - start)) for start in range(0, n_traj, chunk)]


def map_chunks(worker, args_list, parallel: int = 1):
    """Run chunk workers, possibly in a process pool; results keep list order."""
    if parallel <= 1 or len(args_list) <= 1:
        return [worker(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(worker, args_list))


def run_ensemble(theory, config: SimConfig, parallel: int = 1) -> EnsemblePaths:
    """Simulate the configured ensemble and return checkpointed arrays.

    Bit-identical output for any ``parallel`` value: per-trajectory noise
    streams are keyed by (seed, index) and chunk partials are concatenated
    in index order.
    """
    psi0 = prepare_initial_state(theory, config)
    args = [(theory, config, psi0, start, count)
            for start, count in _chunk_ranges(config.n_traj)]
    parts = map_chunks(_paths_worker, args, parallel)
    z = np.concatenate([p[0] for p in parts], axis=0)
    psi = np.concatenate([p[1] for p in parts], axis=0)
    logw = np.concatenate([p[2] for p in parts], axis=0)
    return EnsemblePaths(config=config, times=config.checkpoint_times,
                         z=z, psi=psi, log_weight=logw)


def simulate_trajectory(theory, config: SimConfig, trajectory_index: int) -> Trajectory:
    """Simulate one trajectory; deterministic in (config.seed, index)."""
    psi0 = prepare_initial_state(theory, config)
    z_cp, psi_cp, logw_cp = _paths_worker((theory, config, psi0, trajectory_index, 1))
    times = config.checkpoint_times
    states = tuple(CQState(t=float(times[j]), z=float(z_cp[0, j]), psi=psi_cp[0, j])
                   for j in range(times.shape[0]))
    return Trajectory(config=config, states=states, log_weight=logw_cp[0],
                      wiener_seed_info=(config.seed, trajectory_index))


def integrate_with_increments(theory, psi0, z0, increments, dt,
                              picture=PICTURE_TRUE, renormalize=True,
                              record_steps=()):
    """Drive a batch of trajectories with caller-supplied increments.

    ``increments`` has shape (count, n_steps).  Used by convergence studies
    (the same Brownian path aggregated to several resolutions) and by
    pathwise weight-identity checks.  Returns the final (psi, z) plus a dict
    of recorded intermediate states keyed by step index.
    """
    inc = np.asarray(increments, dtype=float)
    count, n_steps = inc.shape
    psi = np.tile(linalg.as_state(psi0), (count, 1)).astype(complex)
    z = np.full(count, float(z0))
    record = {}
    want = set(record_steps)
    for k in range(n_steps):
        psi, z = _step_block(theory, psi, z, inc[:, k], k * dt, dt, picture, renormalize)
        if (k + 1) in want:
            record[k + 1] = (psi.copy(), z.copy())
    return psi, z, record


# ---------------------------------------------------------------------------
# Weighted density fields


@dataclass
class WeightedDensityField:
    """Histogram estimate of the weighted quantum density over the classical
    coordinate: per bin, the mean of w * psi psi^dag / (psi^dag psi) and the
    scalar weight mass, with elementwise variance accumulators for error
    bars.  In the true picture w = 1; in the linear picture w = g(psi)."""

    bin_edges: np.ndarray
    mass_sum: np.ndarray        # (nbins,)
    mass_sq_sum: np.ndarray     # (nbins,)
    counts: np.ndarray          # (nbins,)
    mat_sum: np.ndarray         # (nbins, n, n) complex
    mat_sq_re: np.ndarray       # (nbins, n, n)
    mat_sq_im: np.ndarray       # (nbins, n, n)
    outside_mass: float
    outside_count: int
    n_traj: int

    @property
    def n_bins(self) -> int:
        return self.mass_sum.shape[0]

    @property
    def mass(self) -> np.ndarray:
        """Per-bin scalar mass, normalised by the ensemble size."""
        return self.mass_sum / self.n_traj

    @property
    def total_mass(self) -> float:
        return float((self.mass_sum.sum() + self.outside_mass) / self.n_traj)

    def mass_stderr(self) -> np.ndarray:
        m = self.mass_sum / self.n_traj
        var = np.maximum(self.mass_sq_sum / self.n_traj - m ** 2, 0.0)
        return np.sqrt(var / self.n_traj)

    def matrix_mean(self) -> np.ndarray:
        return self.mat_sum / self.n_traj

    def matrix_stderr(self) -> np.ndarray:
        """Per-element standard error of matrix_mean; components combined as
        sqrt(se_re^2 + se_im^2)."""
        mean = self.mat_sum / self.n_traj
        var_re = np.maximum(self.mat_sq_re / self.n_traj - mean.real ** 2, 0.0)
        var_im = np.maximum(self.mat_sq_im / self.n_traj - mean.imag ** 2, 0.0)
        return np.sqrt((var_re + var_im) / self.n_traj)

    def z_marginal(self) -> np.ndarray:
        """Normalised classical marginal over the bins (excludes overflow)."""
        total = self.mass_sum.sum() + self.outside_mass
        if total <= 0:
            raise ValueError("empty density field")
        return self.mass_sum / total

    def outside_fraction(self) -> float:
        total = self.mass_sum.sum() + self.outside_mass
        return float(self.outside_mass / total) if total > 0 else 0.0


def weighted_density(paths: EnsemblePaths, bin_edges, checkpoint: int) -> WeightedDensityField:
    """Accumulate the weighted density field at one checkpoint index.

    ``checkpoint`` indexes ``paths.times`` (0 is the initial time).  The
    picture determines the weights: unit weights in the true picture, path
    weights g(psi) in the linear picture.
    """
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.shape[0] < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be a 1-D increasing array")
    k = int(checkpoint)
    if not 0 <= k < paths.times.shape[0]:
        raise ValueError(f"checkpoint {k} out of range (0..{paths.times.shape[0] - 1})")
    n_traj = paths.z.shape[0]
    if n_traj == 0:
        raise ValueError("empty ensemble")

    z = paths.z[:, k]
    psi = paths.psi[:, k, :]
    if paths.config.picture == PICTURE_LINEAR:
        w = np.exp(paths.log_weight[:, k])
    else:
        w = np.ones(n_traj)

    nbins = edges.shape[0] - 1
    n = psi.shape[1]
    idx = np.searchsorted(edges, z, side="right") - 1
    inside = (z >= edges[0]) & (z < edges[-1]) & (idx >= 0) & (idx < nbins)

    norm = np.einsum("ti,ti->t", psi.conj(), psi).real
    rho = (psi[:, :, None] * psi.conj()[:, None, :]) / norm[:, None, None]
    contrib = w[:, None, None] * rho

    field_ = WeightedDensityField(
        bin_edges=edges,
        mass_sum=np.zeros(nbins), mass_sq_sum=np.zeros(nbins),
        counts=np.zeros(nbins, dtype=int),
        mat_sum=np.zeros((nbins, n, n), dtype=complex),
        mat_sq_re=np.zeros((nbins, n, n)), mat_sq_im=np.zeros((nbins, n, n)),
        outside_mass=float(w[~inside].sum()), outside_count=int((~inside).sum()),
        n_traj=n_traj)

    ii = idx[inside]
    np.add.at(field_.mass_sum, ii, w[inside])
    np.add.at(field_.mass_sq_sum, ii, w[inside] ** 2)
    np.add.at(field_.counts, ii, 1)
    np.add.at(field_.mat_sum, ii, contrib[inside])
    np.add.at(field_.mat_sq_re, ii, contrib[inside].real ** 2)
    np.add.at(field_.mat_sq_im, ii, contrib[inside].imag ** 2)
    return field_


def default_bin_edges(config: SimConfig, n_bins: int = 20) -> np.ndarray:
    """Uniform bins spanning z0 +/- 4 sqrt(T), the bulk of the bare noise."""
    half = 4.0 * np.sqrt(config.t_effective)
    return np.linspace(config.z0 - half, config.z0 + half, n_bins + 1)


# ---------------------------------------------------------------------------
# Weight diagnostics and exports


def effective_sample_size(log_weights) -> float:
    """(sum w)^2 / sum w^2 computed stably in log space."""
    lw = np.asarray(log_weights, dtype=float)
    m = lw.max()
    w = np.exp(lw - m)
    s1 = w.sum()
    s2 = (w ** 2).sum()
    return float(s1 ** 2 / s2) if s2 > 0 else 0.0


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write a checkpointed trajectory as CSV (t, z, state components, log weight)."""
    n = traj.states[0].psi.shape[0]
    header = ["t", "z"] + [f"re_psi_{i}" for i in range(n)] + [f"im_psi_{i}" for i in range(n)] + ["log_weight"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j, st in enumerate(traj.states):
            row = [repr(st.t), repr(st.z)]
            row += [repr(float(v)) for v in st.psi.real] + [repr(float(v)) for v in st.psi.imag]
            row.append(repr(float(traj.log_weight[j])))
            writer.writerow(row)


def summarize_ensemble(paths: EnsemblePaths) -> dict:
    """Per-checkpoint summary: mean weight, stderr, effective sample size,
    classical moments.  JSON-ready."""
    k_total = paths.times.shape[0]
    n_traj = paths.z.shape[0]
    out = {"n_traj": n_traj, "picture": paths.config.picture, "checkpoints": []}
    for j in range(k_total):
        w = np.exp(paths.log_weight[:, j])
        mean_w = float(w.mean())
        se_w = float(w.std(ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else 0.0
        out["checkpoints"].append({
            "t": float(paths.times[j]),
            "mean_weight": mean_w,
            "stderr_weight": se_w,
            "n_eff": effective_sample_size(paths.log_weight[:, j]),
            "mean_z": float(paths.z[:, j].mean()),
            "var_z": float(paths.z[:, j].var(ddof=1)) if n_traj > 1 else 0.0,
        })
    return out
