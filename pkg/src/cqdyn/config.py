"""Declarative JSON configuration: parsing, validation, serialisation.

One config file carries up to three sections: ``theory`` (dimension, measure
family, operators), ``sim`` (grid, picture, ensemble size, seed, initial
state) and ``experiment`` (driver-specific knobs).  Complex scalars are
written as ``[re, im]`` pairs and complex matrices as nested arrays of such
pairs, keeping files language-neutral and diffable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import measure
from .dynamics import SimConfig
from .errors import ConfigError
from .theory import Theory, build_theory
from .zakai import ZakaiModel


def complex_from_pair(pair) -> complex:
    if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
        raise ConfigError(f"complex numbers are written as [re, im], got {pair!r}")
    return complex(float(pair[0]), float(pair[1]))


def complex_to_pair(value: complex) -> list[float]:
    return [float(np.real(value)), float(np.imag(value))]


def matrix_from_pairs(rows) -> np.ndarray:
    try:
        return np.array([[complex_from_pair(entry) for entry in row] for row in rows])
    except (TypeError, ConfigError) as exc:
        raise ConfigError(f"malformed complex matrix: {exc}") from None


def matrix_to_pairs(m) -> list:
    arr = np.asarray(m, dtype=complex)
    return [[complex_to_pair(v) for v in row] for row in arr]


def vector_from_pairs(entries) -> np.ndarray:
    try:
        return np.array([complex_from_pair(entry) for entry in entries])
    except (TypeError, ConfigError) as exc:
        raise ConfigError(f"malformed complex vector: {exc}") from None


def family_from_config(section: dict) -> measure.MeasureFamily:
    """Build the measure family named by the ``measure.family`` key."""
    if not isinstance(section, dict) or "family" not in section:
        raise ConfigError("theory.measure must name a family")
    name = section["family"]
    if name == "norm-linear":
        return measure.NormLinear(c=float(section.get("c", 1.0)),
                                  c0=float(section.get("c0", 0.0)))
    if name == "norm-power":
        return measure.NormPower(p=int(section.get("p", 2)))
    if name == "real-amplitude":
        return measure.RealAmplitude()
    if name == "quadratic-form":
        if "T" not in section:
            raise ConfigError("quadratic-form measure needs the matrix T")
        return measure.QuadraticForm(matrix_from_pairs(section["T"]))
    raise ConfigError(f"unknown measure family {name!r}")


def theory_from_config(section: dict) -> Theory:
    if not isinstance(section, dict):
        raise ConfigError("missing theory section")
    try:
        dim = int(section["dimension"])
        family = family_from_config(section["measure"])
        g_op = matrix_from_pairs(section["G"])
        b_op = matrix_from_pairs(section["B"])
    except KeyError as exc:
        raise ConfigError(f"theory section is missing {exc}") from None
    if g_op.shape != (dim, dim) or b_op.shape != (dim, dim):
        raise ConfigError(f"operator shapes {g_op.shape}/{b_op.shape} do not match "
                          f"dimension {dim}")
    z_table = None
    if section.get("z_table"):
        z_table = []
        for row in section["z_table"]:
            if len(row) != 4:
                raise ConfigError("z_table rows are [z_lo, z_hi, G, B]")
            z_table.append((float(row[0]), float(row[1]),
                            matrix_from_pairs(row[2]), matrix_from_pairs(row[3])))
    return build_theory(family, g_op, b_op, z_table=z_table)


def sim_from_config(section: dict, *, seed=None, n_traj=None, dt=None) -> SimConfig:
    """Build the simulation settings, applying CLI overrides when given."""
    if not isinstance(section, dict):
        raise ConfigError("missing sim section")
    try:
        kwargs = {
            "dt": float(dt if dt is not None else section["dt"]),
            "t_final": float(section["t_final"]),
        }
    except KeyError as exc:
        raise ConfigError(f"sim section is missing {exc}") from None
    kwargs["n_checkpoints"] = int(section.get("n_checkpoints", 10))
    kwargs["picture"] = section.get("picture", "true")
    kwargs["renormalize"] = bool(section.get("renormalize", True))
    kwargs["n_traj"] = int(n_traj if n_traj is not None else section.get("n_traj", 1))
    kwargs["seed"] = int(seed if seed is not None else section.get("seed", 0))
    kwargs["z0"] = float(section.get("z0", 0.0))
    if "psi0" in section:
        kwargs["psi0"] = vector_from_pairs(section["psi0"])
    return SimConfig(**kwargs)


@dataclass(frozen=True)
class ScalarFunction:
    """Picklable scalar function of y used in filtering model configs."""

    form: str
    coeffs: tuple[float, ...] = ()

    def __call__(self, y):
        ya = np.asarray(y, dtype=float)
        if self.form == "zero":
            return np.zeros_like(ya)
        if self.form == "linear":
            return self.coeffs[0] * ya
        if self.form == "poly":
            return np.polynomial.polynomial.polyval(ya, np.asarray(self.coeffs))
        raise ConfigError(f"unknown function form {self.form!r}")


def scalar_function_from_config(section) -> ScalarFunction:
    if section in (None, "zero"):
        return ScalarFunction("zero")
    if not isinstance(section, dict) or "form" not in section:
        raise ConfigError("functions are written as {'form': ..., 'coeff(s)': ...}")
    form = section["form"]
    if form == "zero":
        return ScalarFunction("zero")
    if form == "linear":
        return ScalarFunction("linear", (float(section["coeff"]),))
    if form == "poly":
        return ScalarFunction("poly", tuple(float(c) for c in section["coeffs"]))
    raise ConfigError(f"unknown function form {form!r}")


def zakai_model_from_config(section: dict) -> ZakaiModel:
    grid = section.get("grid", {})
    return ZakaiModel(
        h=scalar_function_from_config(section.get("h")),
        f=scalar_function_from_config(section.get("f")),
        y_min=float(grid.get("y_min", -6.0)),
        y_max=float(grid.get("y_max", 6.0)),
        n_points=int(grid.get("n_points", 241)))


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return data
