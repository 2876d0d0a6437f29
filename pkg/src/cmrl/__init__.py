"""Discovering hidden latch events behind stochastic rewards, and planning with them."""

from .errors import CmrlError, ConfigError, DataError, NumericError
from .trajectory import AttributeSchema, AttributeSpec, Dataset, load_dataset, save_dataset
from .discovery import CausalGraph, DiscoveryConfig, discover
from .memory import MemoryUnit, augment_dataset
from .planner import AugmentedStateIndex, fit_model, value_iteration
from .sim import PaintingConfig, TireConfig, collect_random, evaluate_policy

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema",
    "AttributeSpec",
    "AugmentedStateIndex",
    "CausalGraph",
    "CmrlError",
    "ConfigError",
    "DataError",
    "Dataset",
    "DiscoveryConfig",
    "MemoryUnit",
    "NumericError",
    "PaintingConfig",
    "TireConfig",
    "augment_dataset",
    "collect_random",
    "discover",
    "evaluate_policy",
    "fit_model",
    "load_dataset",
    "save_dataset",
    "value_iteration",
]
