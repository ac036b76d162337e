"""Regularized pairwise-difference estimation for high-dimensional partially linear models."""

from .baselines import ProjectionConfig, SplineConfig, bspline_fit, projection_fit
from .bench import ExperimentPlan, aggregate, path_sweep_curve, perturbation_diagnostic, \
    run_cell, scaling_grid
from .core import Dataset, PairSet, build_pairs, gradient, loss, u_stat_g, u_stat_noise
from .errors import DataError, NoActivePairsError, NumericalError, PairDiffError
from .kernel import Kernel, eval_kernel
from .simulate import ScenarioSpec, g_eval, generate, true_beta
from .solver import FitConfig, FitResult, cv_select, default_bandwidth, fit_prd, lambda_path, \
    soft_threshold, solve

__version__ = "0.1.0"
