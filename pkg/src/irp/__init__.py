"""Iterative residual policy workbench: simulators, datasets, predictors,
the sampling-based control loop, baselines and the evaluation harness."""

__version__ = "0.1.0"

from .core import (
    ClothAction,
    ClothParams,
    Goal,
    GridSpec,
    RopeAction,
    RopeParams,
    SimulationDiverged,
    Trajectory,
    WorldVariant,
    apply_delta,
    denormalize_action,
    normalize_action,
    rng_stream,
)

__all__ = [
    "ClothAction",
    "ClothParams",
    "Goal",
    "GridSpec",
    "RopeAction",
    "RopeParams",
    "SimulationDiverged",
    "Trajectory",
    "WorldVariant",
    "apply_delta",
    "denormalize_action",
    "normalize_action",
    "rng_stream",
]
