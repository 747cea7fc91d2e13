"""Sampled-interaction target tracking for networked two-link manipulators."""

from .dcea import DceaConfig, EstimatorState, Order
from .models import RobotModel, example_disturbance, example_target, model_bounds
from .simulate import HybridState, metrics, run_scenario
from .stability import (alpha_beta_bound, h_bound_second_order, region_estimates,
                        small_value_norm, stability_report)
from .topology import Topology, build_topology, paper_topology, spectrum_D

__all__ = [
    "DceaConfig", "EstimatorState", "HybridState", "Order", "RobotModel", "Topology",
    "alpha_beta_bound", "build_topology", "example_disturbance", "example_target",
    "h_bound_second_order", "metrics", "model_bounds", "paper_topology",
    "region_estimates", "run_scenario", "small_value_norm", "spectrum_D",
    "stability_report",
]
