"""Building blocks of the enhancement network.

Feature maps are channel-first tensors (b, c, h, w). Every block keeps
spatial dimensions; reflection padding handles window remainders.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.init import _calculate_fan_in_and_fan_out, trunc_normal_

from .errors import ConfigurationError, DimensionError


def _pad_to_multiple(x, multiple):
    """Reflect-pad the last two dims up to a multiple; replicate when the
    input is too small for reflection."""
    h, w = x.shape[-2:]
    pad_h = (multiple - h % multiple) % multiple
    pad_w = (multiple - w % multiple) % multiple
    if pad_h == 0 and pad_w == 0:
        return x
    mode = "reflect" if pad_h < h and pad_w < w else "replicate"
    return F.pad(x, (0, pad_w, 0, pad_h), mode=mode)


def rln_restore(y, mean, std):
    """Reintroduce recorded per-pixel statistics: y * std + mean."""
    return y * std + mean


class RescaleLayerNorm(nn.Module):
    """Per-pixel channel-wise normalization that keeps its statistics.

    forward() returns (normalized, mean, std). restore() is the learned
    Affine step of the block tail: 1x1 maps of the recorded std/mean,
    initialized neutral (scale 1, shift 0) so residual branches start
    tame; rln_restore() is the plain statistical inverse.
    """

    def __init__(self, dim, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(1, dim, 1, 1))
        self.bias = nn.Parameter(torch.zeros(1, dim, 1, 1))
        self.meta_scale = nn.Conv2d(1, dim, 1)
        self.meta_shift = nn.Conv2d(1, dim, 1)
        trunc_normal_(self.meta_scale.weight, std=0.02)
        nn.init.ones_(self.meta_scale.bias)
        trunc_normal_(self.meta_shift.weight, std=0.02)
        nn.init.zeros_(self.meta_shift.bias)

    def forward(self, x):
        mean = x.mean(dim=-3, keepdim=True)
        var = (x - mean).pow(2).mean(dim=-3, keepdim=True)
        std = torch.sqrt(var + self.eps)
        normalized = (x - mean) / std * self.weight + self.bias
        return normalized, mean, std

    def restore(self, y, mean, std):
        return y * self.meta_scale(std) + self.meta_shift(mean)


class FReLU(nn.Module):
    """max(x, funnel(x)) with a per-channel 3x3 depthwise funnel."""

    def __init__(self, dim):
        super().__init__()
        self.funnel = nn.Conv2d(dim, dim, 3, padding=1, groups=dim,
                                padding_mode="reflect")

    def forward(self, x):
        return torch.maximum(x, self.funnel(x))


class Mlp(nn.Module):
    """Pointwise expansion, FReLU (or plain ReLU), pointwise projection."""

    def __init__(self, dim, ratio=2.0, network_depth=8, activation="frelu"):
        super().__init__()
        hidden = int(dim * ratio)
        if activation == "frelu":
            act = FReLU(hidden)
        elif activation == "relu":
            act = nn.ReLU(inplace=True)
        else:
            raise ConfigurationError(f"unknown mlp activation {activation!r}")
        self.net = nn.Sequential(
            nn.Conv2d(dim, hidden, 1),
            act,
            nn.Conv2d(hidden, dim, 1),
        )
        self.network_depth = network_depth
        self.apply(self._init_weights)

    def _init_weights(self, m):
        if isinstance(m, nn.Conv2d) and m.groups == 1:
            gain = (8 * self.network_depth) ** (-1 / 4)
            fan_in, fan_out = _calculate_fan_in_and_fan_out(m.weight)
            std = gain * math.sqrt(2.0 / float(fan_in + fan_out))
            trunc_normal_(m.weight, std=std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)

    def forward(self, x):
        return self.net(x)


def window_partition(x, window_size):
    # (b, h, w, c) -> (b * num_windows, window_size**2, c)
    b, h, w, c = x.shape
    x = x.view(b, h // window_size, window_size, w // window_size, window_size, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window_size * window_size, c)


def window_reverse(windows, window_size, h, w):
    b = windows.shape[0] // (h * w // window_size // window_size)
    x = windows.view(b, h // window_size, w // window_size, window_size, window_size, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


def _relative_position_index(window_size):
    coords = torch.stack(torch.meshgrid(
        torch.arange(window_size), torch.arange(window_size), indexing="ij"))
    flat = coords.flatten(1)
    rel = flat[:, :, None] - flat[:, None, :]
    rel = rel.permute(1, 2, 0)
    rel[:, :, 0] += window_size - 1
    rel[:, :, 1] += window_size - 1
    return (rel[:, :, 0] * (2 * window_size - 1) + rel[:, :, 1]).contiguous()


class WindowAttention(nn.Module):
    """Multi-head self-attention over non-overlapping windows."""

    def __init__(self, dim, window_size, num_heads):
        super().__init__()
        if dim % num_heads:
            raise ConfigurationError(f"dim {dim} not divisible by heads {num_heads}")
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5

        self.qkv = nn.Conv2d(dim, dim * 3, 1)
        self.proj = nn.Conv2d(dim, dim, 1)
        self.relative_bias = nn.Parameter(
            torch.zeros((2 * window_size - 1) ** 2, num_heads))
        trunc_normal_(self.relative_bias, std=0.02)
        self.register_buffer("bias_index", _relative_position_index(window_size),
                             persistent=False)

        self.record_attention = False
        self.last_attention = None

        fan_in, fan_out = _calculate_fan_in_and_fan_out(self.qkv.weight)
        trunc_normal_(self.qkv.weight, std=math.sqrt(2.0 / float(fan_in + fan_out)))
        nn.init.zeros_(self.qkv.bias)

    def forward(self, x):
        b, c, h, w = x.shape
        qkv = _pad_to_multiple(self.qkv(x), self.window_size)
        hp, wp = qkv.shape[-2:]

        windows = window_partition(qkv.permute(0, 2, 3, 1), self.window_size)
        n = windows.shape[1]
        qkv = windows.reshape(-1, n, 3, self.num_heads, c // self.num_heads)
        qkv = qkv.permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]

        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.relative_bias[self.bias_index.view(-1)].view(n, n, -1)
        attn = attn + bias.permute(2, 0, 1).unsqueeze(0)
        attn = attn.softmax(dim=-1)
        if self.record_attention:
            self.last_attention = attn.detach()

        out = (attn @ v).transpose(1, 2).reshape(-1, n, c)
        out = window_reverse(out, self.window_size, hp, wp)
        out = out.permute(0, 3, 1, 2)[:, :, :h, :w]
        return self.proj(out)


class TransformerBlock(nn.Module):
    """Windowed spatial attention followed by an FReLU MLP, both residual."""

    def __init__(self, dim, num_heads, window_size=8, mlp_ratio=2.0,
                 network_depth=8, mlp_activation="frelu"):
        super().__init__()
        self.norm = RescaleLayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.mlp = Mlp(dim, mlp_ratio, network_depth, mlp_activation)

    def forward(self, x):
        y, mean, std = self.norm(x)
        y = self.attn(y)
        x = x + self.norm.restore(y, mean, std)
        x = x + self.mlp(x)
        return x


class ChannelAttention(nn.Module):
    """Cross-covariance attention over channels: the attention matrix is
    c' x c' per head, independent of spatial size."""

    def __init__(self, dim, num_heads, qk_norm=True):
        super().__init__()
        if dim % num_heads:
            raise ConfigurationError(f"dim {dim} not divisible by heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.qk_norm = qk_norm
        head_dim = dim // num_heads
        # temperature of softmax(Q K^T / gamma), learnable per head
        self.gamma = nn.Parameter(torch.full((num_heads, 1, 1), math.sqrt(head_dim)))

        self.to_qkv = nn.Sequential(
            nn.Conv2d(dim, dim * 3, 1),
            nn.Conv2d(dim * 3, dim * 3, 3, padding=1, groups=dim * 3,
                      padding_mode="reflect"),
        )
        self.v_conv = nn.Conv2d(dim, dim, 3, padding=1, padding_mode="reflect")

        self.record_attention = False
        self.last_attention = None

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.to_qkv(x).chunk(3, dim=1)
        v = self.v_conv(v)

        heads = self.num_heads
        q = q.reshape(b, heads, c // heads, h * w)
        k = k.reshape(b, heads, c // heads, h * w)
        v = v.reshape(b, heads, c // heads, h * w)
        if self.qk_norm:
            q = F.normalize(q, dim=-1)
            k = F.normalize(k, dim=-1)

        attn = (q @ k.transpose(-2, -1)) / self.gamma
        attn = attn.softmax(dim=-1)
        if self.record_attention:
            self.last_attention = attn.detach()

        out = attn @ v
        return out.reshape(b, c, h, w)


class ColorRestorationBlock(nn.Module):
    """Channel-attention block targeting global color cast.

    Normalize, project to Q/K/V, attend across channel cross-covariance,
    restore the recorded mean/variance, then refine with an FReLU MLP.
    """

    def __init__(self, dim, num_heads, mlp_ratio=2.0, network_depth=8,
                 qk_norm=True, mlp_activation="frelu"):
        super().__init__()
        self.norm = RescaleLayerNorm(dim)
        self.attn = ChannelAttention(dim, num_heads, qk_norm)
        self.mlp = Mlp(dim, mlp_ratio, network_depth, mlp_activation)

    def forward(self, x):
        y, mean, std = self.norm(x)
        y = self.attn(y)
        x = x + self.norm.restore(y, mean, std)
        x = x + self.mlp(x)
        return x


class ChannelFusionBlock(nn.Module):
    """Importance-weighted two-branch fusion with convolutional refinement.

    Per-channel weights come from a softmax across the two branches of
    their pooled descriptors; the weighted sum is refined by a residual
    pointwise + depthwise convolution.
    """

    def __init__(self, dim):
        super().__init__()
        self.pconv = nn.Conv2d(dim, dim, 1)
        self.dconv = nn.Conv2d(dim, dim, 3, padding=1, groups=dim,
                               padding_mode="reflect")

    def fusion_weights(self, x1, x2):
        g1 = x1.mean(dim=(-2, -1))
        g2 = x2.mean(dim=(-2, -1))
        return torch.stack([g1, g2], dim=1).softmax(dim=1)  # (b, 2, c)

    def forward(self, x1, x2):
        if x1.shape != x2.shape:
            raise DimensionError(f"fusion inputs differ: {x1.shape} vs {x2.shape}")
        alpha = self.fusion_weights(x1, x2)
        a1 = alpha[:, 0][:, :, None, None]
        a2 = alpha[:, 1][:, :, None, None]
        fused = a1 * x1 + a2 * x2
        return fused + self.dconv(self.pconv(fused))


class SKFusion(nn.Module):
    """Selective-kernel style fusion: pooled sum through a bottleneck MLP
    to per-branch softmax weights, no post-fusion refinement."""

    def __init__(self, dim, reduction=8):
        super().__init__()
        hidden = max(dim // reduction, 4)
        self.mlp = nn.Sequential(
            nn.Conv2d(dim, hidden, 1, bias=False),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, dim * 2, 1, bias=False),
        )

    def forward(self, x1, x2):
        if x1.shape != x2.shape:
            raise DimensionError(f"fusion inputs differ: {x1.shape} vs {x2.shape}")
        b, c = x1.shape[:2]
        pooled = (x1 + x2).mean(dim=(-2, -1), keepdim=True)
        weights = self.mlp(pooled).view(b, 2, c, 1, 1).softmax(dim=1)
        return weights[:, 0] * x1 + weights[:, 1] * x2


class ConcatFusion(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.proj = nn.Conv2d(dim * 2, dim, 1)

    def forward(self, x1, x2):
        if x1.shape != x2.shape:
            raise DimensionError(f"fusion inputs differ: {x1.shape} vs {x2.shape}")
        return self.proj(torch.cat([x1, x2], dim=1))


class AddFusion(nn.Module):
    def forward(self, x1, x2):
        if x1.shape != x2.shape:
            raise DimensionError(f"fusion inputs differ: {x1.shape} vs {x2.shape}")
        return x1 + x2


def make_fusion(kind, dim):
    if kind == "cfb":
        return ChannelFusionBlock(dim)
    if kind == "sk":
        return SKFusion(dim)
    if kind == "concat":
        return ConcatFusion(dim)
    if kind == "add":
        return AddFusion()
    raise ConfigurationError(f"unknown fusion kind {kind!r}")


class Downsample(nn.Module):
    """Halve spatial dims with a strided convolution."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.conv = nn.Conv2d(in_dim, out_dim, 3, stride=2, padding=1,
                              padding_mode="reflect")

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    """Double spatial dims: channel expansion then pixel shuffle."""

    def __init__(self, in_dim, out_dim):
        super().__init__()
        self.conv = nn.Conv2d(in_dim, out_dim * 4, 1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(self.conv(x))
