"""Verification oracles, synthetic data and training."""

from .data import coulomb_target, random_features, random_graph, synthetic_dataset
from .equivariance import EquivarianceReport, check_equivariance, rotate_features
from .oracles import brute_force_type_component, directional_derivative, finite_diff_grad
from .train import Scalers, TrainConfig, TrainRun, load_model, predict, train
