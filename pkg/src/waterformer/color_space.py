"""RGB <-> YIQ conversion and per-channel statistics.

Shared by the loss suite (torch path) and the metric suite (numpy path);
both dispatch on the input type so there is exactly one set of matrix
constants. Channels live on the last axis: an RGB image is (..., 3) and
its YIQ counterpart is (..., 3) ordered [Y, I, Q].
"""

import numpy as np
import torch

# Row-major luma/chroma transform; applied to normalized stored pixel
# values (no linearization), the universal convention for YIQ.
RGB_TO_YIQ = np.array([
    [0.299, 0.587, 0.114],
    [0.596, -0.274, -0.322],
    [0.211, -0.523, 0.312],
], dtype=np.float64)

# Inverse of RGB_TO_YIQ computed once at 40-digit precision and frozen,
# so the round trip never depends on a runtime matrix inversion.
YIQ_TO_RGB = np.array([
    [1.0, 0.95617068540414503691, 0.62143256634658558296],
    [1.0, -0.27268860233010626482, -0.64681323702017377331],
    [1.0, -1.1037440821760262157, 1.7006230946773062774],
], dtype=np.float64)


def _matmul_last_axis(img, matrix):
    if isinstance(img, torch.Tensor):
        m = torch.as_tensor(matrix, dtype=img.dtype, device=img.device)
        return img @ m.T
    img = np.asarray(img)
    return (img @ matrix.T.astype(img.dtype, copy=False)
            if img.dtype in (np.float32, np.float64) else img @ matrix.T)


def rgb_to_yiq(img):
    """Convert an (..., 3) RGB array or tensor to YIQ. No clamping."""
    return _matmul_last_axis(img, RGB_TO_YIQ)


def yiq_to_rgb(img, return_excursion=False):
    """Convert an (..., 3) YIQ array or tensor back to RGB.

    RGB output is clamped to [0, 1] at this API boundary. With
    ``return_excursion=True`` also returns the largest pre-clamp
    excursion outside [0, 1] (0.0 when everything was in range).
    """
    rgb = _matmul_last_axis(img, YIQ_TO_RGB)
    if isinstance(rgb, torch.Tensor):
        excursion = torch.clamp(-rgb, min=0.0).max()
        excursion = torch.maximum(excursion, torch.clamp(rgb - 1.0, min=0.0).max())
        out = rgb.clamp(0.0, 1.0)
        excursion = float(excursion)
    else:
        excursion = float(max(np.maximum(-rgb, 0.0).max(), np.maximum(rgb - 1.0, 0.0).max()))
        out = np.clip(rgb, 0.0, 1.0)
    if return_excursion:
        return out, excursion
    return out


def luma(img):
    """Y channel of an (..., 3) RGB input."""
    return rgb_to_yiq(img)[..., 0]


def channel_stats(channel):
    """Population mean and variance (divide by N) of one channel."""
    if isinstance(channel, torch.Tensor):
        mean = channel.mean()
        var = ((channel - mean) ** 2).mean()
        return mean, var
    channel = np.asarray(channel)
    if channel.size == 0:
        raise ValueError("channel_stats requires a nonempty channel")
    mean = channel.mean()
    return float(mean), float(((channel - mean) ** 2).mean())
