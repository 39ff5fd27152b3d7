"""Classical filtering analogue of the hybrid dynamics.

A hidden diffusion Y responds on an observed coordinate Z.  The unnormalised
conditional density over Y obeys a *linear* stochastic PDE driven by the
observation increments, structurally parallel to the linear picture of the
hybrid dynamics: evolving the density against bare Wiener increments and
weighting by its total mass g_t reproduces the joint statistics of (Y, Z).

The generator part is discretised in conservative flux form with centred
second-order stencils and zero-flux boundaries, so for f = 0 the total mass
is conserved to roundoff and the mass process is an exact discrete
martingale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import NOISE_BLOCK, SimConfig, map_chunks, _chunk_ranges
from .errors import ConfigError
from .noise import IncrementSource, _generator

_STREAM_OBS = 0      # observation noise W (also drives the non-interacting picture)
_STREAM_HIDDEN = 1   # hidden-state noise V
_STREAM_INIT = 2     # prior sampling of Y(0)

#: Boundary-mass fraction above which the grid is declared too small.
LEAK_FRACTION = 0.01


@dataclass(frozen=True)
class ZakaiModel:
    """Hidden drift h(y), observation rate f(y) and the y-grid.

    The explicit scheme is stable for dt <= dy^2 / 2; every stepping entry
    point enforces this bound.
    """

    h: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    y_min: float = -6.0
    y_max: float = 6.0
    n_points: int = 241

    def __post_init__(self):
        if not (self.y_max > self.y_min):
            raise ConfigError("y_max must exceed y_min")
        if self.n_points < 8:
            raise ConfigError("grid needs at least 8 points")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_points)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.n_points - 1)

    def max_stable_dt(self) -> float:
        return 0.5 * self.dy ** 2

    def check_dt(self, dt: float) -> None:
        if dt > self.max_stable_dt() * (1 + 1e-12):
            raise ConfigError(f"explicit scheme unstable: dt = {dt:.3e} exceeds "
                              f"dy^2/2 = {self.max_stable_dt():.3e}")

    def h_values(self) -> np.ndarray:
        return np.asarray(self.h(self.grid), dtype=float)

    def f_values(self) -> np.ndarray:
        return np.asarray(self.f(self.grid), dtype=float)


def gaussian_field(model: ZakaiModel, mean: float, var: float) -> np.ndarray:
    """Gaussian density on the grid, normalised so sum(P) dy = 1 exactly."""
    if var <= 0:
        raise ConfigError("prior variance must be positive")
    y = model.grid
    p = np.exp(-0.5 * (y - mean) ** 2 / var)
    return p / (p.sum() * model.dy)


def field_moments(model: ZakaiModel, p: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mass, mean, variance) of density fields, batched over leading axes."""
    y = model.grid
    mass = p.sum(axis=-1) * model.dy
    mean = (p * y).sum(axis=-1) * model.dy / mass
    var = (p * y ** 2).sum(axis=-1) * model.dy / mass - mean ** 2
    return mass, mean, var


def _stencil(model: ZakaiModel, dt: float):
    """Precomputed three-point update weights of the generator step.

    The conservative flux form (advection by h at face midpoints, unit
    diffusion, zero flux through the outer faces) collapses to one centre
    weight per node plus one weight per neighbour; the weights of each node
    sum to one exactly, so the f = 0 step conserves total mass to roundoff.
    """
    hv = model.h_values()
    alpha = (dt / (2.0 * model.dy)) * 0.5 * (hv[:-1] + hv[1:])
    beta = dt / (2.0 * model.dy ** 2)
    center = np.full(model.n_points, 1.0 - 2.0 * beta)
    center[:-1] -= alpha
    center[1:] += alpha
    center[0] += beta
    center[-1] += beta
    to_left = beta - alpha        # weight of P[i+1] in P'[i]
    to_right = beta + alpha       # weight of P[i] in P'[i+1]
    return center, to_left, to_right


_STENCIL_CACHE: dict = {}


def _cached_stencil(model: ZakaiModel, dt: float):
    key = (id(model), float(dt))
    hit = _STENCIL_CACHE.get(key)
    if hit is None:
        model.check_dt(dt)
        hit = _stencil(model, dt) + (model.f_values(),)
        _STENCIL_CACHE[key] = hit
    return hit


def zakai_step(model: ZakaiModel, p: np.ndarray, dz_increment, dt: float) -> np.ndarray:
    """One explicit step of the unnormalised filtering PDE.

    Applies the conservative generator update (advection by h plus unit
    diffusion, zero flux through the boundaries) and the multiplicative
    observation term f(y) P dZ.  Batched over leading axes of ``p`` with a
    matching batch of ``dz_increment``.
    """
    pa = np.asarray(p, dtype=float)
    if pa.shape[-1] != model.n_points:
        raise ValueError(f"field has {pa.shape[-1]} points, grid has {model.n_points}")
    if not np.all(np.isfinite(pa)):
        raise ValueError("field contains non-finite values")
    dz = np.asarray(dz_increment, dtype=float)

    center, to_left, to_right, fv = _cached_stencil(model, dt)
    out = pa * (center + dz[..., None] * fv)
    out[..., :-1] += pa[..., 1:] * to_left
    out[..., 1:] += pa[..., :-1] * to_right

    mass = out.sum(axis=-1)
    edge = out[..., 0] + out[..., -1]
    bad = edge > LEAK_FRACTION * np.maximum(mass, 1e-300)
    if np.any(bad):
        raise ValueError("mass accumulating at the grid boundary exceeds 1% "
                         "(grid too small for this model/horizon)")
    return out


def zakai_simulate_hidden(model: ZakaiModel, config: SimConfig,
                          trajectory_index: int = 0, y0: float = 0.0
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Euler paths of the hidden/observed pair (Y, Z) for one realisation.

    Hidden and observation noises come from independent per-trajectory
    streams.  Returns paths on the full step grid, initial values included.
    """
    n_steps, dt = config.n_steps, config.dt
    obs = IncrementSource(config.seed, trajectory_index, 1, dt, stream=_STREAM_OBS)
    hid = IncrementSource(config.seed, trajectory_index, 1, dt, stream=_STREAM_HIDDEN)
    dw = obs.next_block(n_steps)[0]
    dv = hid.next_block(n_steps)[0]
    y = np.empty(n_steps + 1)
    z = np.empty(n_steps + 1)
    y[0], z[0] = y0, config.z0
    for k in range(n_steps):
        y[k + 1] = y[k] + float(model.h(y[k])) * dt + dv[k]
        z[k + 1] = z[k] + float(model.f(y[k])) * dt + dw[k]
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        raise ValueError("hidden simulation produced non-finite values")
    return y, z


def zakai_filter_path(model: ZakaiModel, p0: np.ndarray, dz_path: np.ndarray,
                      dt: float, renormalize: bool = True) -> dict:
    """Evolve the filtering density along one observation path.

    With ``renormalize`` the density is divided by its mass after every step
    (the normalised filter picture; total mass is then identically one).
    Returns per-step arrays of mass, posterior mean and variance, the final
    field, and the minimum field value encountered.
    """
    model.check_dt(dt)
    p = np.asarray(p0, dtype=float).copy()
    n_steps = len(dz_path)
    mass = np.empty(n_steps + 1)
    mean = np.empty(n_steps + 1)
    var = np.empty(n_steps + 1)
    mass[0], mean[0], var[0] = field_moments(model, p)
    min_value = float(p.min())
    for k in range(n_steps):
        p = zakai_step(model, p, dz_path[k], dt)
        m, mu, v = field_moments(model, p)
        mass[k + 1], mean[k + 1], var[k + 1] = m, mu, v
        min_value = min(min_value, float(p.min()))
        if renormalize:
            p = p / m
    return {"mass": mass, "mean": mean, "var": var, "field": p, "min_value": min_value}


def kalman_bucy_filter(a: float, c: float, dz_path: np.ndarray, dt: float,
                       m0: float, v0: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact-moment filter for the linear-Gaussian model dY = -a Y dt + dV,
    dZ = c Y dt + dW, integrated on the same observation grid.

    dm = -a m dt + v c (dZ - c m dt),  dv/dt = -2 a v + 1 - c^2 v^2.
    Serves as the independent oracle for the filtering PDE.
    """
    n = len(dz_path)
    m = np.empty(n + 1)
    v = np.empty(n + 1)
    m[0], v[0] = m0, v0
    for k in range(n):
        m[k + 1] = m[k] - a * m[k] * dt + v[k] * c * (dz_path[k] - c * m[k] * dt)
        v[k + 1] = v[k] + (-2.0 * a * v[k] + 1.0 - c ** 2 * v[k] ** 2) * dt
    return m, v


def linear_coefficients(model: ZakaiModel) -> tuple[float, float]:
    """Extract (a, c) assuming h(y) = -a y and f(y) = c y; reject otherwise."""
    y = model.grid
    hv = model.h_values()
    fv = model.f_values()
    a = -float(model.h(1.0))
    c = float(model.f(1.0))
    if np.max(np.abs(hv + a * y)) > 1e-9 or np.max(np.abs(fv - c * y)) > 1e-9:
        raise ConfigError("Kalman-Bucy comparison requires linear h and f")
    return a, c


# ---------------------------------------------------------------------------
# Joint-density comparison of the two constructions


def _direct_joint_worker(args):
    model, config, prior, start, count = args
    n_steps, dt = config.n_steps, config.dt
    m0, v0 = prior
    init = IncrementSource(config.seed, start, count, 1.0, stream=_STREAM_INIT)
    y = m0 + np.sqrt(v0) * init.next_block(1)[:, 0]
    z = np.full(count, config.z0)
    obs = IncrementSource(config.seed, start, count, dt, stream=_STREAM_OBS)
    hid = IncrementSource(config.seed, start, count, dt, stream=_STREAM_HIDDEN)
    k = 0
    while k < n_steps:
        nb = min(NOISE_BLOCK, n_steps - k)
        dw = obs.next_block(nb)
        dv = hid.next_block(nb)
        for s in range(nb):
            y_new = y + np.asarray(model.h(y), dtype=float) * dt + dv[:, s]
            z = z + np.asarray(model.f(y), dtype=float) * dt + dw[:, s]
            y = y_new
        k += nb
    return y, z


def _filter_joint_worker(args):
    model, config, prior, y_edges, z_edges, start, count = args
    n_steps, dt = config.n_steps, config.dt
    p = np.tile(gaussian_field(model, prior[0], prior[1]), (count, 1))
    z = np.full(count, config.z0)
    obs = IncrementSource(config.seed, start, count, dt, stream=_STREAM_OBS)
    k = 0
    while k < n_steps:
        nb = min(NOISE_BLOCK, n_steps - k)
        dw = obs.next_block(nb)
        for s in range(nb):
            p = zakai_step(model, p, dw[:, s], dt)
            z = z + dw[:, s]
        k += nb
    # aggregate each trajectory's weighted y-density into the joint histogram
    n_y = len(y_edges) - 1
    n_z = len(z_edges) - 1
    y_idx = np.searchsorted(y_edges, model.grid, side="right") - 1
    inside_y = (model.grid >= y_edges[0]) & (model.grid < y_edges[-1])
    joint = np.zeros((n_z + 1, n_y + 1))   # trailing row/col catch overflow
    y_masses = np.zeros((count, n_y + 1))
    w = p * model.dy
    for b in range(n_y):
        cols = inside_y & (y_idx == b)
        y_masses[:, b] = w[:, cols].sum(axis=1)
    y_masses[:, n_y] = w[:, ~inside_y].sum(axis=1)
    z_idx = np.searchsorted(z_edges, z, side="right") - 1
    z_idx = np.where((z >= z_edges[0]) & (z < z_edges[-1]), z_idx, n_z)
    np.add.at(joint, z_idx, y_masses)
    g_final = p.sum(axis=1) * model.dy
    return joint, g_final, z_idx


def _histogram_joint(y, z, y_edges, z_edges):
    n_y = len(y_edges) - 1
    n_z = len(z_edges) - 1
    joint = np.zeros((n_z + 1, n_y + 1))
    yi = np.searchsorted(y_edges, y, side="right") - 1
    zi = np.searchsorted(z_edges, z, side="right") - 1
    yi = np.where((y >= y_edges[0]) & (y < y_edges[-1]), yi, n_y)
    zi = np.where((z >= z_edges[0]) & (z < z_edges[-1]), zi, n_z)
    np.add.at(joint, (zi, yi), 1.0)
    return joint


@dataclass
class ZakaiJointReport:
    """Comparison of direct (Y, Z) sampling against the weighted filter
    construction on a common (z, y) histogram (overflow buckets included)."""

    y_edges: np.ndarray
    z_edges: np.ndarray
    joint_direct: np.ndarray
    joint_filter: np.ndarray
    tv_distance: float
    z_marginal_direct: np.ndarray
    z_marginal_filter: np.ndarray
    z_marginal_max_sigma: float
    mean_g: float
    stderr_g: float
    n_traj: int

    def to_dict(self) -> dict:
        return {
            "n_traj": self.n_traj,
            "tv_distance": self.tv_distance,
            "mean_g": self.mean_g,
            "stderr_g": self.stderr_g,
            "z_marginal_max_sigma": self.z_marginal_max_sigma,
            "y_edges": self.y_edges.tolist(),
            "z_edges": self.z_edges.tolist(),
            "z_marginal_direct": self.z_marginal_direct.tolist(),
            "z_marginal_filter": self.z_marginal_filter.tolist(),
        }


def zakai_joint_check(model: ZakaiModel, config: SimConfig, bins: int = 15,
                      prior: tuple[float, float] = (0.0, 0.5),
                      parallel: int = 1) -> ZakaiJointReport:
    """Compare the joint (Y, Z) law from direct simulation against the
    non-interacting filtering construction at the final time.

    Both constructions see the same number of trajectories; the hidden state
    is drawn from the Gaussian prior that also initialises the density field.
    """
    model.check_dt(config.dt)
    ranges = _chunk_ranges(config.n_traj)
    direct_parts = map_chunks(_direct_joint_worker,
                              [(model, config, prior, s, c) for s, c in ranges], parallel)
    y_fin = np.concatenate([p[0] for p in direct_parts])
    z_fin = np.concatenate([p[1] for p in direct_parts])

    # common histogram ranges from the direct sample (+/- 4 sd, deterministic)
    y_edges = np.linspace(y_fin.mean() - 4 * y_fin.std(), y_fin.mean() + 4 * y_fin.std(), bins + 1)
    z_edges = np.linspace(z_fin.mean() - 4 * z_fin.std(), z_fin.mean() + 4 * z_fin.std(), bins + 1)

    joint_direct = _histogram_joint(y_fin, z_fin, y_edges, z_edges)
    filter_parts = map_chunks(_filter_joint_worker,
                              [(model, config, prior, y_edges, z_edges, s, c) for s, c in ranges],
                              parallel)
    joint_filter = sum(p[0] for p in filter_parts)
    g_final = np.concatenate([p[1] for p in filter_parts])
    z_bins_filter = np.concatenate([p[2] for p in filter_parts])

    pd = joint_direct / joint_direct.sum()
    pf = joint_filter / joint_filter.sum()
    tv = 0.5 * float(np.abs(pd - pf).sum())

    # z-marginals with combined per-bin standard errors
    n = config.n_traj
    md = pd.sum(axis=1)
    mf = joint_filter.sum(axis=1) / joint_filter.sum()
    se_d = np.sqrt(np.maximum(md * (1 - md), 1e-300) / n)
    # filter marginal is a ratio of weighted sums; delta-method error bars
    n_zrows = md.shape[0]
    g_sum = np.zeros(n_zrows)
    g_sq_sum = np.zeros(n_zrows)
    np.add.at(g_sum, z_bins_filter, g_final)
    np.add.at(g_sq_sum, z_bins_filter, g_final ** 2)
    tot_g = g_final.sum()
    tot_g_sq = (g_final ** 2).sum()
    resid_sq = (1 - mf) ** 2 * g_sq_sum + mf ** 2 * (tot_g_sq - g_sq_sum)
    se_f = np.sqrt(np.maximum(resid_sq, 1e-300)) / tot_g
    sig = np.abs(md - mf) / np.sqrt(se_d ** 2 + se_f ** 2)

    return ZakaiJointReport(
        y_edges=y_edges, z_edges=z_edges,
        joint_direct=joint_direct, joint_filter=joint_filter,
        tv_distance=tv,
        z_marginal_direct=md, z_marginal_filter=mf,
        z_marginal_max_sigma=float(sig.max()),
        mean_g=float(g_final.mean()),
        stderr_g=float(g_final.std(ddof=1) / np.sqrt(n)),
        n_traj=n)


@dataclass
class KalmanTrackReport:
    """Normalised filter moments against the exact-moment oracle on one
    shared observation path."""

    times: np.ndarray
    filter_mean: np.ndarray
    filter_var: np.ndarray
    oracle_mean: np.ndarray
    oracle_var: np.ndarray
    rms_mean_rel: float
    rms_var_rel: float
    min_field_value: float

    def to_dict(self) -> dict:
        return {
            "rms_mean_rel": self.rms_mean_rel,
            "rms_var_rel": self.rms_var_rel,
            "min_field_value": self.min_field_value,
            "t_final": float(self.times[-1]),
        }


def zakai_kalman_check(model: ZakaiModel, config: SimConfig,
                       prior: tuple[float, float] = (0.0, 0.5),
                       trajectory_index: int = 0) -> KalmanTrackReport:
    """Track one hidden path with the filtering PDE and the exact-moment
    oracle, comparing posterior mean and variance in relative RMS."""
    a, c = linear_coefficients(model)
    m0, v0 = prior
    rng = _generator(config.seed, trajectory_index, _STREAM_INIT)
    y0 = m0 + np.sqrt(v0) * rng.standard_normal()
    y_path, z_path = zakai_simulate_hidden(model, config, trajectory_index, y0=y0)
    dz = np.diff(z_path)
    p0 = gaussian_field(model, m0, v0)
    filt = zakai_filter_path(model, p0, dz, config.dt, renormalize=True)
    km, kv = kalman_bucy_filter(a, c, dz, config.dt, m0, v0)
    times = np.arange(len(dz) + 1) * config.dt

    def rel_rms(x, ref):
        return float(np.sqrt(np.mean((x - ref) ** 2)) / np.sqrt(np.mean(ref ** 2)))

    return KalmanTrackReport(
        times=times,
        filter_mean=filt["mean"], filter_var=filt["var"],
        oracle_mean=km, oracle_var=kv,
        rms_mean_rel=rel_rms(filt["mean"], km),
        rms_var_rel=rel_rms(filt["var"], kv),
        min_field_value=filt["min_value"])
