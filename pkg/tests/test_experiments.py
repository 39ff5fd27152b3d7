import numpy as np
import pytest

import cqdyn
from cqdyn.dynamics import SimConfig
from cqdyn.errors import ConfigError, InconclusiveRunError
from cqdyn.experiments import (born_rule_test, convergence_study,
                               default_collapse_horizon,
                               girsanov_consistency_test, lemma_sweep,
                               martingale_sweep, picture_equivalence_test,
                               tv_distance)
from cqdyn.linalg import random_state
from oracle_utils import SX, SZ, I2


def collapse_theory(b_scale=0.5):
    return cqdyn.build_theory(cqdyn.NormLinear(), np.zeros((2, 2), dtype=complex),
                              b_scale * SZ)


def test_default_horizon_scales_with_gap():
    assert default_collapse_horizon(collapse_theory(0.5)) == pytest.approx(60.0 / 4.0)
    assert default_collapse_horizon(collapse_theory(1.0)) == pytest.approx(60.0 / 16.0)


def test_born_eigenstate_collapses_immediately():
    th = collapse_theory()
    psi0 = np.array([1.0, 0.0], dtype=complex)
    cfg = SimConfig(dt=1e-3, t_final=0.1, n_checkpoints=1, n_traj=400, seed=1, psi0=psi0)
    rep = born_rule_test(th, psi0, cfg)
    # pointer eigenvalues ascend: outcome 1 is the +1 eigenvector (1, 0)
    assert rep.observed_freq[1] == pytest.approx(1.0)
    assert rep.collapsed_count == 400
    assert rep.p_value == pytest.approx(1.0)
    assert rep.mean_collapse_time == pytest.approx(1e-3)


def test_born_symmetric_state():
    th = collapse_theory()
    psi0 = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)
    cfg = SimConfig(dt=1e-3, t_final=15.0, n_checkpoints=5, n_traj=2000, seed=2, psi0=psi0)
    rep = born_rule_test(th, psi0, cfg)
    assert abs(rep.observed_freq[0] - 0.5) <= 3 * np.sqrt(0.25 / 2000)
    assert rep.p_value >= 1e-3


def test_born_collapsed_population_is_monotone():
    th = collapse_theory()
    psi0 = np.array([np.sqrt(0.3), np.sqrt(0.7)], dtype=complex)
    cfg = SimConfig(dt=1e-3, t_final=15.0, n_checkpoints=10, n_traj=1500, seed=3, psi0=psi0)
    rep = born_rule_test(th, psi0, cfg)
    m, se = rep.maxpop_mean, rep.maxpop_stderr
    for j in range(len(m) - 1):
        assert m[j + 1] >= m[j] - 2 * np.hypot(se[j], se[j + 1])


def test_born_chi_square_randomized_instances():
    rng = np.random.default_rng(2024)
    for dim in (2, 3):
        for _ in range(5):
            evals = np.cumsum(0.8 + rng.uniform(0, 0.6, size=dim))   # gaps >= 0.8
            b_op = np.diag(evals).astype(complex)
            th = cqdyn.build_theory(cqdyn.NormLinear(),
                                    np.zeros((dim, dim), dtype=complex), b_op)
            psi0 = random_state(rng, dim, unit=True)
            cfg = SimConfig(dt=1e-3, t_final=default_collapse_horizon(th),
                            n_checkpoints=2, n_traj=800,
                            seed=int(rng.integers(2**31)), psi0=psi0)
            rep = born_rule_test(th, psi0, cfg)
            assert rep.uncollapsed_fraction <= 0.1
            assert rep.p_value >= 1e-3


def test_born_real_amplitude_frequencies():
    th = cqdyn.build_theory(cqdyn.RealAmplitude(), np.zeros((2, 2)),
                            np.diag([0.5, -0.5]).astype(complex))
    psi0 = np.array([np.sqrt(0.3), np.sqrt(0.7)], dtype=complex)
    cfg = SimConfig(dt=1e-3, t_final=15.0, n_checkpoints=5, n_traj=1500, seed=8, psi0=psi0)
    rep = born_rule_test(th, psi0, cfg)
    assert rep.collapsed_count >= 0.99 * 1500
    assert abs(rep.observed_freq[1] - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / 1500)


def test_born_rejects_bad_setups():
    psi0 = np.array([1.0, 1.0]) / np.sqrt(2)
    degenerate = cqdyn.build_theory(cqdyn.NormLinear(), np.zeros((2, 2)), 0.5 * I2)
    cfg = SimConfig(dt=1e-3, t_final=1.0, n_checkpoints=1, n_traj=10, seed=0, psi0=psi0)
    with pytest.raises(ConfigError, match="degenerate"):
        born_rule_test(degenerate, psi0, cfg)
    rotating = cqdyn.build_theory(cqdyn.NormLinear(), SX, 0.5 * SZ)
    with pytest.raises(ConfigError, match="commute"):
        born_rule_test(rotating, psi0, cfg)
    trivial = cqdyn.build_theory(cqdyn.NormPower(2), SX, 0.5 * I2)
    with pytest.raises(ConfigError):
        born_rule_test(trivial, psi0, cfg)


def test_born_inconclusive_when_horizon_too_short():
    th = collapse_theory()
    psi0 = np.array([1.0, 1.0]) / np.sqrt(2)
    cfg = SimConfig(dt=1e-3, t_final=0.05, n_checkpoints=1, n_traj=50, seed=4, psi0=psi0)
    with pytest.raises(InconclusiveRunError):
        born_rule_test(th, psi0, cfg)


def test_martingale_no_dynamics_is_exact():
    th = cqdyn.build_theory(cqdyn.NormLinear(), np.zeros((2, 2)), np.zeros((2, 2)))
    cfg = SimConfig(dt=1e-2, t_final=1.0, n_checkpoints=10, n_traj=100, seed=5,
                    psi0=np.array([0.6, 0.8j]))
    rep = martingale_sweep(th, cfg)
    assert np.all(rep.mean_g == 1.0)


def test_martingale_unitary_generator_stays_near_one():
    # B = 0 conserves the measure exactly in continuum; the explicit scheme
    # leaks O(dt^2) per step through the unitary generator
    th = cqdyn.build_theory(cqdyn.NormLinear(), SX, np.zeros((2, 2)))
    cfg = SimConfig(dt=1e-3, t_final=1.0, n_checkpoints=10, n_traj=16, seed=5,
                    psi0=np.array([0.6, 0.8j]))
    rep = martingale_sweep(th, cfg)
    assert np.max(np.abs(rep.mean_g - 1.0)) <= 2e-3


def test_martingale_all_families():
    theories = {
        "norm-linear": (cqdyn.build_theory(cqdyn.NormLinear(), SX, 0.5 * SZ),
                        np.array([0.7, 0.6 + 0.2j])),
        "norm-power": (cqdyn.build_theory(cqdyn.NormPower(2), SX, 0.25 * I2 + 0.3j * SX),
                       np.array([0.7, 0.6 + 0.2j])),
        "real-amplitude": (cqdyn.build_theory(
            cqdyn.RealAmplitude(), 0.7j * np.array([[0, 1], [-1, 0]]),
            (0.5 * SZ + 0.2 * SX).real.astype(complex)), np.array([0.7, 0.6])),
        "quadratic-form": (cqdyn.build_theory(cqdyn.QuadraticForm(np.diag([2.0, 1.0])),
                                              SX, 0.5 * SZ),
                           np.array([0.7, 0.6 + 0.2j])),
    }
    for name, (th, psi0) in theories.items():
        cfg = SimConfig(dt=1e-3, t_final=1.0, n_checkpoints=10, n_traj=1500,
                        seed=6, psi0=psi0)
        rep = martingale_sweep(th, cfg)
        assert rep.max_sigma_dev <= 5.0, f"{name}: {rep.max_sigma_dev}"


def test_ess_warning_on_degenerate_weights():
    th = cqdyn.build_theory(cqdyn.NormPower(2), np.zeros((2, 2)), 1.5 * I2)
    cfg = SimConfig(dt=1e-3, t_final=2.0, n_checkpoints=2, n_traj=300, seed=7,
                    psi0=np.array([1.0, 0.0]))
    with pytest.warns(RuntimeWarning, match="effective sample size"):
        rep = martingale_sweep(th, cfg)
    assert rep.ess_warning


def test_equivalence_pure_noise():
    th = cqdyn.build_theory(cqdyn.NormLinear(), SX, np.zeros((2, 2)))
    cfg = SimConfig(dt=0.05, t_final=1.0, n_checkpoints=1, n_traj=100_000, seed=9,
                    psi0=np.array([1.0, 0.0]))
    rep = picture_equivalence_test(th, cfg, bins=20)
    assert rep.tv_z_marginal <= 0.03
    assert rep.agree_fraction >= 0.95


def test_equivalence_standard_theory_moderate():
    th = collapse_theory()
    cfg = SimConfig(dt=1e-3, t_final=1.0, n_checkpoints=1, n_traj=20_000, seed=10,
                    psi0=np.array([0.8, 0.6j]))
    rep = picture_equivalence_test(th, cfg, bins=20)
    assert rep.tv_z_marginal <= 0.1
    assert rep.agree_fraction >= 0.9
    assert abs(rep.total_mass_linear - 1.0) <= 0.05


def test_girsanov_consistency_small_coupling():
    th = cqdyn.build_theory(cqdyn.NormLinear(), 0.5 * SX, 0.05 * SZ)
    cfg = SimConfig(dt=1e-4, t_final=0.5, n_checkpoints=1, n_traj=1, seed=11,
                    psi0=np.array([0.6, 0.8]), picture="linear", renormalize=False)
    rep = girsanov_consistency_test(th, cfg, n_paths=30)
    assert rep.max_rel_error <= 1e-3


def test_convergence_order_one_half():
    th = cqdyn.build_theory(cqdyn.NormLinear(), SX, np.diag([1.0, 0.2]).astype(complex))
    cfg = SimConfig(dt=1e-3, t_final=0.5, n_checkpoints=1, n_traj=1, seed=31,
                    psi0=np.array([0.8, 0.6j]))
    rep = convergence_study(th, cfg, dts=(4e-3, 2e-3, 1e-3), dt_ref=6.25e-5, n_traj=160)
    assert rep.ratio_spread <= 2.0
    assert rep.rms_errors[0] > rep.rms_errors[-1]


def test_convergence_rejects_incompatible_grids():
    th = collapse_theory()
    cfg = SimConfig(dt=1e-3, t_final=0.5, n_checkpoints=1, n_traj=1, seed=0,
                    psi0=np.array([1.0, 0.0]))
    with pytest.raises(ConfigError):
        convergence_study(th, cfg, dts=(3e-3,), dt_ref=2e-3, n_traj=4)


def test_lemma_sweep_verdicts():
    rep = lemma_sweep(dims=(2, 3), n_random=20, n_samples=10_000, seed=55)
    assert rep.identity_max_violation <= 1e-12
    assert rep.random_min_violation >= 0.1
    assert rep.solve_agreements == rep.solve_checks
    assert rep.passed


def test_tv_distance_basics():
    assert tv_distance([1, 0], [0, 1]) == pytest.approx(1.0)
    assert tv_distance([2, 2], [1, 1]) == pytest.approx(0.0)
