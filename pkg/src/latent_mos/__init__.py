"""Latent mixture-of-symmetries models for irregularly sampled time series."""
from .engine import Parameter, Tensor, backward, finite_diff_check, no_grad
from .groups import (AffineAction, Generator, HomogeneousLatent, apply_action, build_rotation,
                     build_scaling, build_translation, commutator_defect, compose_actions,
                     equivariance_check, fractional_action, generator_of, mos_step,
                     orthonormalize_2col)
from .config import ExperimentConfig, load_config
from .data import Dataset, Trajectory, gen_dataset, load_csv, save_csv, simulate_ode
from .integrate import rk4_step
from .training import evaluate, run_training

__version__ = "0.1.0"

__all__ = [
    "AffineAction", "Dataset", "ExperimentConfig", "Generator", "HomogeneousLatent", "Parameter",
    "Tensor", "Trajectory", "apply_action", "backward", "build_rotation", "build_scaling",
    "build_translation", "commutator_defect", "compose_actions", "equivariance_check", "evaluate",
    "finite_diff_check", "fractional_action", "gen_dataset", "generator_of", "load_config",
    "load_csv", "mos_step", "no_grad", "orthonormalize_2col", "rk4_step", "run_training",
    "save_csv", "simulate_ode",
]
