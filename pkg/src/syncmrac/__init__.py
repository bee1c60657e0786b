"""Model reference adaptive control with a coupled virtual reference model."""
from .model import BaselineGains, PlantModel, UncertaintyModel, f16_short_period
from .coupling import AllocationPolicy, CouplingDesign, allocate
from .sim import SimConfig, run_simulation, simulate
from .experiment import ExperimentConfig, default_config, load_config, run_grid

__version__ = "0.1.0"

__all__ = ["AllocationPolicy", "BaselineGains", "CouplingDesign", "ExperimentConfig", "PlantModel",
           "SimConfig", "UncertaintyModel", "allocate", "default_config", "f16_short_period",
           "load_config", "run_grid", "run_simulation", "simulate"]
