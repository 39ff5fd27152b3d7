import numpy as np
import pytest

from cqdyn.config import ScalarFunction
from cqdyn.dynamics import SimConfig
from cqdyn.errors import ConfigError
from cqdyn.noise import IncrementSource, wiener_increments
from cqdyn.zakai import (ZakaiModel, field_moments, gaussian_field,
                         kalman_bucy_filter, linear_coefficients,
                         zakai_filter_path, zakai_joint_check,
                         zakai_kalman_check, zakai_simulate_hidden, zakai_step)


def linear_model(**kw):
    return ZakaiModel(h=ScalarFunction("linear", (-1.0,)),
                      f=ScalarFunction("linear", (1.0,)), **kw)


def test_model_validation():
    with pytest.raises(ConfigError):
        ZakaiModel(h=ScalarFunction("zero"), f=ScalarFunction("zero"),
                   y_min=1.0, y_max=-1.0)
    model = linear_model()
    with pytest.raises(ConfigError):
        model.check_dt(1.0)          # far above dy^2 / 2
    model.check_dt(model.max_stable_dt())


def test_hidden_simulation_matches_streams():
    model = linear_model()
    cfg = SimConfig(dt=1e-2, t_final=0.05, n_checkpoints=1, n_traj=1, seed=13)
    y, z = zakai_simulate_hidden(model, cfg, trajectory_index=2, y0=0.4)
    dw = wiener_increments(13, 2, 5, 1e-2, stream=0).increments
    dv = wiener_increments(13, 2, 5, 1e-2, stream=1).increments
    yy, zz = 0.4, 0.0
    for k in range(5):
        yy, zz = yy + (-yy) * 1e-2 + dv[k], zz + y[k] * 1e-2 + dw[k]
        assert y[k + 1] == pytest.approx(yy, abs=1e-15)
        assert z[k + 1] == pytest.approx(zz, abs=1e-15)


def test_hidden_independent_noises():
    model = ZakaiModel(h=ScalarFunction("zero"), f=ScalarFunction("zero"))
    cfg = SimConfig(dt=1e-2, t_final=2.0, n_checkpoints=1, n_traj=1, seed=3)
    # with h = f = 0 both coordinates are bare Wiener paths from separate streams
    n = 400
    finals = np.array([zakai_simulate_hidden(model, cfg, i)[0][-1] for i in range(n)])
    finals_z = np.array([zakai_simulate_hidden(model, cfg, i)[1][-1] for i in range(n)])
    t = cfg.t_effective
    assert abs(finals.var() - t) <= 5 * t * np.sqrt(2.0 / n)
    assert abs(finals_z.var() - t) <= 5 * t * np.sqrt(2.0 / n)
    cov = np.mean(finals * finals_z)
    assert abs(cov) <= 5 * t / np.sqrt(n)


def test_hidden_ou_stationary_variance():
    # vectorised mean-reverting ensemble on production noise streams
    n_traj, dt, n_steps = 10_000, 5e-3, 800
    src = IncrementSource(seed=77, first_index=0, count=n_traj, dt=dt, stream=1)
    y = np.zeros(n_traj)
    samples = []
    for k in range(n_steps):
        y = y + (-y) * dt + src.next_block(1)[:, 0]
        if k * dt >= 2.0:
            samples.append(y.var())
    var = np.mean(samples)
    assert abs(var - 0.5) <= 0.05 * 0.5


def test_observation_correlates_with_hidden_state():
    model = linear_model()
    cfg = SimConfig(dt=1e-2, t_final=3.0, n_checkpoints=1, n_traj=1, seed=21)
    y, z = zakai_simulate_hidden(model, cfg, 0, y0=1.5)
    dz_drift = np.diff(z) - wiener_increments(21, 0, 300, 1e-2, stream=0).increments
    assert np.corrcoef(dz_drift, y[:-1])[0, 1] > 0.99   # dZ drift is f(Y) dt


def test_zakai_step_conserves_mass_without_observation():
    model = ZakaiModel(h=ScalarFunction("linear", (-1.0,)), f=ScalarFunction("zero"))
    p = gaussian_field(model, 0.3, 0.4)
    dt = model.max_stable_dt()
    res = zakai_filter_path(model, p, np.zeros(int(1.0 / dt)), dt, renormalize=False)
    assert np.max(np.abs(res["mass"] - 1.0)) <= 1e-6     # observed: roundoff only


def test_zakai_step_solves_heat_equation():
    model = ZakaiModel(h=ScalarFunction("zero"), f=ScalarFunction("zero"))
    p = gaussian_field(model, 0.0, 0.25)
    dt = model.max_stable_dt()
    n = int(round(0.5 / dt))
    for _ in range(n):
        p = zakai_step(model, p, 0.0, dt)
    _, mean, var = field_moments(model, p)
    assert mean == pytest.approx(0.0, abs=1e-10)
    assert var == pytest.approx(0.25 + n * dt, rel=2e-3)
    exact = np.exp(-0.5 * model.grid ** 2 / var) / np.sqrt(2 * np.pi * var)
    assert np.max(np.abs(p - exact)) <= 1e-2 * exact.max()


def test_zakai_step_detects_instability_and_leaks():
    model = linear_model()
    with pytest.raises(ConfigError):
        zakai_step(model, gaussian_field(model, 0, 0.5), 0.0, 10 * model.max_stable_dt())
    # outward drift on a tiny grid piles mass at the boundary
    leaky = ZakaiModel(h=ScalarFunction("linear", (+4.0,)), f=ScalarFunction("zero"),
                       y_min=-1.0, y_max=1.0, n_points=41)
    p = gaussian_field(leaky, 0.0, 0.1)
    dt = leaky.max_stable_dt()
    with pytest.raises(ValueError, match="boundary"):
        for _ in range(2000):
            p = zakai_step(leaky, p, 0.0, dt)


def test_zakai_step_batched_matches_loop():
    model = linear_model(n_points=81)
    p0 = gaussian_field(model, 0.0, 0.5)
    dt = model.max_stable_dt()
    dz = np.array([0.01, -0.02, 0.0])
    batch = zakai_step(model, np.tile(p0, (3, 1)), dz, dt)
    for i in range(3):
        assert np.allclose(batch[i], zakai_step(model, p0, dz[i], dt), atol=1e-15)


def test_normalized_filter_mass_and_positivity():
    model = linear_model()
    cfg = SimConfig(dt=model.max_stable_dt(), t_final=1.0, n_checkpoints=1,
                    n_traj=1, seed=42)
    track = zakai_kalman_check(model, cfg)
    assert track.min_field_value >= 0.0


def test_kalman_tracking_within_two_percent():
    model = linear_model()
    cfg = SimConfig(dt=model.max_stable_dt(), t_final=1.0, n_checkpoints=1,
                    n_traj=1, seed=7)
    track = zakai_kalman_check(model, cfg)
    assert track.rms_mean_rel <= 0.02
    assert track.rms_var_rel <= 0.02


def test_kalman_oracle_static_limit():
    # with no observations (dZ = 0) the variance follows the Riccati flow
    m, v = kalman_bucy_filter(1.0, 1.0, np.zeros(4000), 1e-3, 0.0, 0.5)
    assert m[-1] == pytest.approx(0.0, abs=1e-12)
    v_inf = np.sqrt(2.0) - 1.0
    assert v[-1] == pytest.approx(v_inf, rel=1e-2)


def test_linear_coefficients_extraction():
    model = linear_model()
    assert linear_coefficients(model) == pytest.approx((1.0, 1.0))
    bad = ZakaiModel(h=ScalarFunction("poly", (0.0, -1.0, 0.3)), f=ScalarFunction("linear", (1.0,)))
    with pytest.raises(ConfigError):
        linear_coefficients(bad)


def test_filter_mass_is_martingale():
    # unnormalised masses average to one over independent observation streams
    model = linear_model()
    dt = model.max_stable_dt()
    n_traj, n_steps = 600, 400
    p = np.tile(gaussian_field(model, 0.0, 0.5), (n_traj, 1))
    src = IncrementSource(seed=5, first_index=0, count=n_traj, dt=dt, stream=0)
    for _ in range(n_steps):
        p = zakai_step(model, p, src.next_block(1)[:, 0], dt)
    mass = p.sum(axis=1) * model.dy
    se = mass.std(ddof=1) / np.sqrt(n_traj)
    assert abs(mass.mean() - 1.0) <= 5 * se


def test_joint_check_factorizes_without_observation():
    model = ZakaiModel(h=ScalarFunction("linear", (-1.0,)), f=ScalarFunction("zero"))
    cfg = SimConfig(dt=model.max_stable_dt(), t_final=0.5, n_checkpoints=1,
                    n_traj=8000, seed=11)
    rep = zakai_joint_check(model, cfg, bins=8)
    assert rep.tv_distance <= 0.08
    assert rep.mean_g == pytest.approx(1.0, abs=1e-9)   # f = 0: mass frozen
    assert rep.z_marginal_max_sigma <= 5.0


def test_joint_check_linear_gaussian_smoke():
    model = linear_model()
    cfg = SimConfig(dt=model.max_stable_dt(), t_final=0.5, n_checkpoints=1,
                    n_traj=6000, seed=19)
    rep = zakai_joint_check(model, cfg, bins=9)
    assert rep.tv_distance <= 0.12
    assert abs(rep.mean_g - 1.0) <= 5 * rep.stderr_g
    assert rep.z_marginal_max_sigma <= 5.0
