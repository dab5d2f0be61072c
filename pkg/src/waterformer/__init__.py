"""Underwater image enhancement with a physics-constrained transformer."""

__version__ = "0.1.0"

from .model import ModelConfig, WaterFormer, build_model, count_macs, count_params
from .physics import DegradationParams, degrade, make_water_type, recover_analytic, soft_reconstruct

__all__ = [
    "ModelConfig", "WaterFormer", "build_model", "count_macs", "count_params",
    "DegradationParams", "degrade", "make_water_type", "recover_analytic",
    "soft_reconstruct", "__version__",
]
