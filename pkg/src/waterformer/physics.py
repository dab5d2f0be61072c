"""Underwater image formation model and its inversion.

All image-space functions operate on (h, w, 3) float arrays in [0, 1].
``soft_reconstruct`` is the differentiable counterpart used as the final
network layer and therefore works on channel-first torch tensors.
"""

import functools
import importlib.resources
import logging
from dataclasses import dataclass

import numpy as np
import torch
import yaml

from .errors import ConfigurationError, DimensionError, DomainError

log = logging.getLogger(__name__)

OPEN_SEA_TYPES = ("I", "IA", "IB", "II", "III")
NEARSHORE_TYPES = ("1", "3", "5", "7", "9")
WATER_TYPE_IDS = OPEN_SEA_TYPES + NEARSHORE_TYPES

# Guards the 1/T singularity in the analytic recovery; K = 1/T - 1 <= 19.
T_MIN_DEFAULT = 0.05


@dataclass
class DegradationParams:
    """Per-channel background light (3,) and transmission map (h, w, 3).

    The transmission may be (1, 1, 3) when it is spatially constant; it is
    broadcast against the image.
    """

    background: np.ndarray
    transmission: np.ndarray

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        self.transmission = np.asarray(self.transmission, dtype=np.float64)
        if self.transmission.ndim != 3 or self.transmission.shape[-1] != 3:
            raise DimensionError(
                f"transmission must be (h, w, 3), got {self.transmission.shape}")


@functools.cache
def water_types():
    """Load the degradation preset table shipped with the package."""
    text = importlib.resources.files("waterformer").joinpath("water_types.yaml").read_text()
    raw = yaml.safe_load(text)["types"]
    return {
        str(name): (np.array(entry["beta"], dtype=np.float64),
                    np.array(entry["background"], dtype=np.float64))
        for name, entry in raw.items()
    }


def make_water_type(type_id, depth):
    """Build DegradationParams for one preset and a depth map.

    depth is a scalar or an (h, w) array of path lengths in meters;
    T = exp(-beta * depth) per channel.
    """
    table = water_types()
    key = str(type_id)
    if key not in table:
        raise ConfigurationError(
            f"unknown water type {type_id!r}; expected one of {sorted(table)}")
    beta, background = table[key]
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim == 0:
        depth = depth.reshape(1, 1)
    elif depth.ndim != 2:
        raise DimensionError(f"depth must be scalar or (h, w), got shape {depth.shape}")
    if np.any(depth < 0):
        raise DomainError("depth must be nonnegative")
    transmission = np.exp(-depth[:, :, None] * beta[None, None, :])
    return DegradationParams(background=background, transmission=transmission)


def _check_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise DimensionError(f"{name} must be (h, w, 3), got {img.shape}")
    return img


def degrade(clean, params):
    """Forward image formation: U = I*T + A*(1 - T), clamped to [0, 1]."""
    clean = _check_image(clean, "clean")
    t = params.transmission
    if t.shape[:2] not in ((1, 1), clean.shape[:2]):
        raise DimensionError(
            f"transmission {t.shape} does not broadcast over image {clean.shape}")
    degraded = clean * t + params.background * (1.0 - t)
    lo, hi = degraded.min(), degraded.max()
    if lo < 0.0 or hi > 1.0:
        log.debug("degrade pre-clamp range [%g, %g]", lo, hi)
    return np.clip(degraded, 0.0, 1.0)


def recover_analytic(degraded, params, t_min=T_MIN_DEFAULT):
    """Invert the formation model: I = U*(1/T - 1) + A*(1 - 1/T) + U."""
    degraded = _check_image(degraded, "degraded")
    t = params.transmission
    tmin_actual = t.min()
    if tmin_actual < t_min:
        raise DomainError(
            f"transmission minimum {tmin_actual:.6g} is below t_min={t_min:.6g}")
    k = 1.0 / t - 1.0
    return degraded * k - params.background * k + degraded


def soft_reconstruct(inp, o, clamp=False):
    """Differentiable reconstruction out = inp*K - B + inp.

    inp is a (..., 3, h, w) tensor and o a (..., 6, h, w) tensor whose
    channels are ordered [K_R, K_G, K_B, B_R, B_G, B_B]. Left unclamped by
    default so loss gradients are not zeroed at saturation.
    """
    if o.shape[-3] != 6:
        raise DimensionError(f"o must have 6 channels, got {o.shape[-3]}")
    if inp.shape[-3] != 3:
        raise DimensionError(f"inp must have 3 channels, got {inp.shape[-3]}")
    k, b = torch.split(o, 3, dim=-3)
    out = inp * k - b + inp
    return out.clamp(0.0, 1.0) if clamp else out


def recon_vars_from_params(params):
    """True (K, B) maps for given physical parameters: K = 1/T - 1, B = A*K."""
    k = 1.0 / params.transmission - 1.0
    b = params.background * k
    return k, b
