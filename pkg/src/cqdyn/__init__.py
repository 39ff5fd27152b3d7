"""cqdyn: classical-quantum hybrid stochastic dynamics.

Builds quantum-like theories from a positive measure function on Hilbert
space, integrates the coupled classical/quantum SDEs in the interacting and
in the linear (weight-carrying) picture, and ships statistical drivers that
verify collapse statistics, weight-martingale behaviour, picture equivalence
and the classical-filtering analogue.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, InconclusiveRunError, NonFiniteError,
                     SupportError)
from .linalg import (hermitian_eigensystem, inner, quadratic_form)
from .measure import (GradientBundle, MeasureFamily, NormLinear, NormPower,
                      QuadraticForm, RealAmplitude, eval_g, force, girsanov_weight,
                      grad_bundle, martingale_residual, rescale_to_unit)
from .noise import (GeneralNoiseSpec, WienerPath, reduce_general_noise,
                    wiener_increments)
from .theory import (ReducedTheory, Theory, build_theory, classify_theory,
                     lemma_solve, lemma_violation, solve_drift_operator)
from .dynamics import (CQState, SimConfig, Trajectory, WeightedDensityField,
                       run_ensemble, simulate_trajectory, step_linear, step_true,
                       weighted_density)
from .zakai import (ZakaiModel, kalman_bucy_filter, zakai_joint_check,
                    zakai_kalman_check, zakai_simulate_hidden, zakai_step)
from .experiments import (born_rule_test, convergence_study,
                          girsanov_consistency_test, lemma_sweep,
                          martingale_sweep, picture_equivalence_test)

__all__ = [
    "__version__",
    "ConfigError", "InconclusiveRunError", "NonFiniteError", "SupportError",
    "inner", "quadratic_form", "hermitian_eigensystem",
    "MeasureFamily", "NormLinear", "NormPower", "RealAmplitude", "QuadraticForm",
    "GradientBundle", "eval_g", "grad_bundle", "martingale_residual", "force",
    "girsanov_weight", "rescale_to_unit",
    "WienerPath", "GeneralNoiseSpec", "wiener_increments", "reduce_general_noise",
    "Theory", "ReducedTheory", "build_theory", "solve_drift_operator",
    "classify_theory", "lemma_violation", "lemma_solve",
    "SimConfig", "CQState", "Trajectory", "WeightedDensityField",
    "step_true", "step_linear", "simulate_trajectory", "run_ensemble",
    "weighted_density",
    "ZakaiModel", "zakai_simulate_hidden", "zakai_step", "zakai_joint_check",
    "zakai_kalman_check", "kalman_bucy_filter",
    "born_rule_test", "martingale_sweep", "picture_equivalence_test",
    "girsanov_consistency_test", "convergence_study", "lemma_sweep",
]
