"""Reproducible Wiener increments and reduction of general diffusive noise.

Every trajectory owns an independent noise stream derived by hashing a master
seed together with the trajectory index (and a small stream id, so a single
trajectory can consume several independent processes).  Streams are backed by
the counter-based Philox generator, so the full ensemble is bit-identical no
matter how trajectories are scheduled across chunks, processes or runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class WienerPath:
    """Increments dW of a discretised Wiener process on a uniform grid.

    ``increments[k]`` is W((k+1) dt) - W(k dt), drawn i.i.d. Normal(0, dt).
    The identifying triple (seed, trajectory_index, stream) regenerates the
    path exactly; increments are never persisted.
    """

    dt: float
    increments: np.ndarray
    seed: int
    trajectory_index: int
    stream: int = 0

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    def cumulative(self) -> np.ndarray:
        """W at grid times dt, 2 dt, ..., n dt."""
        return np.cumsum(self.increments)


def _generator(seed: int, trajectory_index: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(trajectory_index, stream))
    return np.random.Generator(np.random.Philox(ss))


def _check_grid(n_steps: int, dt: float) -> None:
    if not (isinstance(n_steps, (int, np.integer)) and n_steps >= 1):
        raise ConfigError(f"n_steps must be a positive integer, got {n_steps!r}")
    if not (dt > 0 and np.isfinite(dt)):
        raise ConfigError(f"dt must be positive and finite, got {dt!r}")


def wiener_increments(seed: int, trajectory_index: int, n_steps: int, dt: float,
                      stream: int = 0) -> WienerPath:
    """Generate the Wiener increments for one trajectory.

    Deterministic in all arguments: two calls with identical arguments return
    bit-identical paths, independently of anything generated in between.
    """
    _check_grid(n_steps, dt)
    gen = _generator(seed, trajectory_index, stream)
    inc = gen.standard_normal(n_steps) * np.sqrt(dt)
    inc.setflags(write=False)
    return WienerPath(dt=dt, increments=inc, seed=seed,
                      trajectory_index=trajectory_index, stream=stream)


class IncrementSource:
    """Block reader over the per-trajectory streams of a contiguous index range.

    Yields arrays of shape (count, block_steps).  Concatenating the blocks for
    row i reproduces ``wiener_increments(seed, first_index + i, ...)`` exactly,
    because consecutive ``standard_normal`` calls continue each stream without
    buffering.  This keeps memory bounded on long horizons.
    """

    def __init__(self, seed: int, first_index: int, count: int, dt: float, stream: int = 0):
        _check_grid(1, dt)
        self._gens = [_generator(seed, first_index + i, stream) for i in range(count)]
        self._sqrt_dt = np.sqrt(dt)
        self.count = count

    def next_block(self, n_steps: int) -> np.ndarray:
        out = np.empty((self.count, n_steps))
        for i, gen in enumerate(self._gens):
            out[i] = gen.standard_normal(n_steps)
        out *= self._sqrt_dt
        return out


@dataclass(frozen=True)
class GeneralNoiseSpec:
    """Drift and scale of a general diffusive noise dR = mu dt + sigma dW.

    ``mu(z, t)`` and ``sigma(z, t)`` must accept scalar or array ``z`` and
    return broadcast-compatible values; ``sigma`` must be non-negative
    everywhere it is evaluated (checked at integration time).
    """

    mu: Callable[[np.ndarray, float], np.ndarray]
    sigma: Callable[[np.ndarray, float], np.ndarray]


def reduce_general_noise(spec: GeneralNoiseSpec, theory):
    """Absorb a general noise specification into standard white-noise form.

    The returned theory evolves under a unit Wiener process: the noise drift
    ``mu`` moves into the classical drift and (via the coupling operator) into
    the quantum drift, while the coupling operator is rescaled to sigma * B at
    each step, with the dissipative part of the quantum drift re-solved at the
    effective coupling so the path-weight process stays drift-free.
    """
    from .theory import ReducedTheory

    return ReducedTheory(base=theory, noise=spec)
