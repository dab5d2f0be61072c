"""Training objective: reconstruction, chromatic consistency, edge color.

All losses are differentiable torch functions over channel-first image
tensors, (3, h, w) or (b, 3, h, w), and are symmetric in (gt, pred).
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .color_space import rgb_to_yiq
from .errors import ConfigurationError, DimensionError


@dataclass
class LossWeights:
    l1: float = 3.0
    chroma: float = 1.0
    sobel: float = 3.0

    def __post_init__(self):
        if min(self.l1, self.chroma, self.sobel) < 0:
            raise ConfigurationError("loss weights must be nonnegative")


@dataclass
class ChromaConfig:
    window: int = 15
    stride: int = 1
    c1: float = 0.001
    c2: float = 0.001
    # The similarity ratio is used raw by default; it can dip below 0 for
    # anticorrelated chroma even though values near 1 mean consistency.
    clip_similarity: bool = False

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigurationError("chroma window must be odd and >= 3")
        if self.stride < 1:
            raise ConfigurationError("chroma stride must be >= 1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigurationError("chroma constants must be positive")


def _as_batch(x, name):
    if x.ndim == 3:
        x = x.unsqueeze(0)
    if x.ndim != 4 or x.shape[1] != 3:
        raise DimensionError(f"{name} must be (3, h, w) or (b, 3, h, w), got {tuple(x.shape)}")
    return x


def _check_pair(gt, pred):
    if gt.shape != pred.shape:
        raise DimensionError(f"shape mismatch: gt {tuple(gt.shape)} vs pred {tuple(pred.shape)}")


def l1_loss(gt, pred):
    """Mean absolute difference over every pixel and channel."""
    _check_pair(gt, pred)
    return (gt - pred).abs().mean()


def chroma_similarity(gt_channel, pred_channel, c):
    """Stabilized similarity (2*cov + c) / (var_gt + var_pred + c).

    Equal channels score exactly 1; anticorrelated channels go negative,
    bounded in [-1, 1] by AM-GM before the shared +c.
    """
    gt_mean = gt_channel.mean()
    pred_mean = pred_channel.mean()
    cov = ((gt_channel - gt_mean) * (pred_channel - pred_mean)).mean()
    var_gt = ((gt_channel - gt_mean) ** 2).mean()
    var_pred = ((pred_channel - pred_mean) ** 2).mean()
    return (2.0 * cov + c) / (var_gt + var_pred + c)


def _window_means(x, window, stride):
    # Summed-area table: O(hw) window sums regardless of window size.
    ii = x.cumsum(-2).cumsum(-1)
    ii = F.pad(ii, (1, 0, 1, 0))
    sums = (ii[..., window:, window:] - ii[..., :-window, window:]
            - ii[..., window:, :-window] + ii[..., :-window, :-window])
    return sums[..., ::stride, ::stride] / (window * window)


def chroma_loss(gt, pred, cfg: ChromaConfig = None):
    """Mean over sliding windows of 1 - S_I * S_Q on the YIQ chroma planes."""
    cfg = cfg if cfg is not None else ChromaConfig()
    gt = _as_batch(gt, "gt")
    pred = _as_batch(pred, "pred")
    _check_pair(gt, pred)
    h, w = gt.shape[-2:]
    if h < cfg.window or w < cfg.window:
        raise DimensionError(
            f"image {h}x{w} smaller than chroma window {cfg.window}")

    yiq_gt = rgb_to_yiq(gt.movedim(-3, -1))
    yiq_pred = rgb_to_yiq(pred.movedim(-3, -1))
    # Center per image; second moments are shift invariant and this keeps
    # the E[x^2] - E[x]^2 cancellation benign in float32.
    planes = torch.stack([yiq_gt[..., 1], yiq_pred[..., 1],
                          yiq_gt[..., 2], yiq_pred[..., 2]], dim=-3)
    planes = planes - planes.mean(dim=(-2, -1), keepdim=True)

    m = _window_means(torch.cat([planes, planes ** 2,
                                 planes[:, 0:1] * planes[:, 1:2],
                                 planes[:, 2:3] * planes[:, 3:4]], dim=-3),
                      cfg.window, cfg.stride)
    mean_ig, mean_ip, mean_qg, mean_qp = m[:, 0], m[:, 1], m[:, 2], m[:, 3]
    var_ig = m[:, 4] - mean_ig ** 2
    var_ip = m[:, 5] - mean_ip ** 2
    var_qg = m[:, 6] - mean_qg ** 2
    var_qp = m[:, 7] - mean_qp ** 2
    cov_i = m[:, 8] - mean_ig * mean_ip
    cov_q = m[:, 9] - mean_qg * mean_qp

    s_i = (2.0 * cov_i + cfg.c1) / (var_ig + var_ip + cfg.c1)
    s_q = (2.0 * cov_q + cfg.c2) / (var_qg + var_qp + cfg.c2)
    if cfg.clip_similarity:
        s_i = s_i.clamp(0.0, 1.0)
        s_q = s_q.clamp(0.0, 1.0)
    return (1.0 - s_i * s_q).mean()


SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0],
                        [-2.0, 0.0, 2.0],
                        [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.contiguous()


def _sobel_maps(x):
    # (b, 3, h, w) -> (b, 6, h-2, w-2), channels [Rx, Ry, Gx, Gy, Bx, By];
    # valid convolution so borders inject no synthetic gradients.
    weight = torch.stack([SOBEL_X, SOBEL_Y]).to(x.dtype).to(x.device)
    weight = weight.repeat(3, 1, 1).unsqueeze(1)
    return F.conv2d(x, weight, groups=3)


def sobel_color_loss(gt, pred):
    """L1 between per-channel Sobel gradient maps, x-term plus y-term."""
    gt = _as_batch(gt, "gt")
    pred = _as_batch(pred, "pred")
    _check_pair(gt, pred)
    if gt.shape[-2] < 3 or gt.shape[-1] < 3:
        raise DimensionError("sobel loss needs at least a 3x3 image")
    diff = (_sobel_maps(gt) - _sobel_maps(pred)).abs()
    loss_x = diff[:, 0::2].mean()
    loss_y = diff[:, 1::2].mean()
    return loss_x + loss_y


def total_loss(gt, pred, weights: LossWeights = None, chroma_cfg: ChromaConfig = None):
    """Weighted sum of the three terms; returns (total, (l1, chroma, sobel))."""
    weights = weights if weights is not None else LossWeights()
    parts = (l1_loss(gt, pred),
             chroma_loss(gt, pred, chroma_cfg),
             sobel_color_loss(gt, pred))
    total = weights.l1 * parts[0] + weights.chroma * parts[1] + weights.sobel * parts[2]
    return total, parts
