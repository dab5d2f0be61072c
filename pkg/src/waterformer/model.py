"""The three-stage U-shaped enhancement network and its footprint counters."""

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import physics
from .blocks import (ChannelAttention, ColorRestorationBlock, Downsample,
                     TransformerBlock, Upsample, WindowAttention, make_fusion)
from .errors import ConfigurationError, DimensionError

ALL_STAGES = ("enc1", "enc2", "bottleneck", "dec1", "dec2")
RECON_KINDS = ("uw_soft", "soft", "global_residual")
FUSION_KINDS = ("cfb", "sk", "concat", "add")


@dataclass
class ModelConfig:
    stage_widths: tuple = (16, 32, 64)
    stage_depths: tuple = (2, 2, 4)
    decoder_depths: tuple = (2, 2)
    heads: tuple = (2, 4, 8)
    window_size: int = 8
    mlp_ratio: float = 2.0
    use_crb: bool = True
    use_cfb: bool = True
    fusion_kind: str = "cfb"
    recon_kind: str = "uw_soft"
    mlp_activation: str = "frelu"
    qk_norm: bool = True
    crb_stages: tuple = ALL_STAGES
    clamp_output: bool = False

    def __post_init__(self):
        self.stage_widths = tuple(self.stage_widths)
        self.stage_depths = tuple(self.stage_depths)
        self.decoder_depths = tuple(self.decoder_depths)
        self.heads = tuple(self.heads)
        self.crb_stages = tuple(self.crb_stages)
        if len(self.stage_widths) != 3 or len(self.stage_depths) != 3:
            raise ConfigurationError("three encoder stages are required")
        if len(self.decoder_depths) != 2 or len(self.heads) != 3:
            raise ConfigurationError("two decoder stages and three head counts required")
        if not (self.stage_widths[0] < self.stage_widths[1] < self.stage_widths[2]):
            raise ConfigurationError("stage widths must strictly increase")
        if self.recon_kind not in RECON_KINDS:
            raise ConfigurationError(f"unknown recon kind {self.recon_kind!r}")
        if self.fusion_kind not in FUSION_KINDS:
            raise ConfigurationError(f"unknown fusion kind {self.fusion_kind!r}")
        for name in self.crb_stages:
            if name not in ALL_STAGES:
                raise ConfigurationError(f"unknown stage name {name!r}")
        for width, num_heads in zip(self.stage_widths, self.heads):
            if width % num_heads:
                raise ConfigurationError(
                    f"stage width {width} not divisible by {num_heads} heads")

    def effective_fusion(self):
        """Fusion actually built: plain addition when the CFB is ablated
        and no explicit replacement was chosen."""
        if self.use_cfb:
            return "cfb"
        return "add" if self.fusion_kind == "cfb" else self.fusion_kind

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def reference_config(**overrides):
    """Desk-reference preset; see README for the footprint it lands at."""
    return ModelConfig(**overrides)


class _Stage(nn.Module):
    def __init__(self, dim, depth, num_heads, cfg, with_crb, network_depth):
        super().__init__()
        blocks = [
            TransformerBlock(dim, num_heads, cfg.window_size, cfg.mlp_ratio,
                             network_depth, cfg.mlp_activation)
            for _ in range(depth)
        ]
        if with_crb:
            blocks.append(ColorRestorationBlock(
                dim, num_heads, cfg.mlp_ratio, network_depth,
                cfg.qk_norm, cfg.mlp_activation))
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x):
        return self.blocks(x)


class WaterFormer(nn.Module):
    """Encoder-decoder enhancement network with a physics-based head.

    The 6-channel head is zero-initialized so the whole network starts as
    the identity map, matching the residual structure of the soft
    reconstruction.
    """

    HEAD_CHANNELS = {"uw_soft": 6, "soft": 4, "global_residual": 3}

    def __init__(self, cfg: ModelConfig = None):
        super().__init__()
        cfg = cfg if cfg is not None else reference_config()
        self.cfg = cfg
        w0, w1, w2 = cfg.stage_widths
        d0, d1, d2 = cfg.stage_depths
        e0, e1 = cfg.decoder_depths
        h0, h1, h2 = cfg.heads
        network_depth = d0 + d1 + d2 + e0 + e1

        def has_crb(stage):
            return cfg.use_crb and stage in cfg.crb_stages

        self.patch_embed = nn.Conv2d(3, w0, 3, padding=1, padding_mode="reflect")
        self.enc1 = _Stage(w0, d0, h0, cfg, has_crb("enc1"), network_depth)
        self.down1 = Downsample(w0, w1)
        self.enc2 = _Stage(w1, d1, h1, cfg, has_crb("enc2"), network_depth)
        self.down2 = Downsample(w1, w2)
        self.bottleneck = _Stage(w2, d2, h2, cfg, has_crb("bottleneck"), network_depth)
        self.up1 = Upsample(w2, w1)
        self.fuse1 = make_fusion(cfg.effective_fusion(), w1)
        self.dec1 = _Stage(w1, e0, h1, cfg, has_crb("dec1"), network_depth)
        self.up2 = Upsample(w1, w0)
        self.fuse2 = make_fusion(cfg.effective_fusion(), w0)
        self.dec2 = _Stage(w0, e1, h0, cfg, has_crb("dec2"), network_depth)

        self.head = nn.Conv2d(w0, self.HEAD_CHANNELS[cfg.recon_kind], 3, padding=1,
                              padding_mode="reflect")
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def features(self, x):
        """Backbone up to the reconstruction variables, on a padded input."""
        y = self.patch_embed(x)
        s1 = self.enc1(y)
        s2 = self.enc2(self.down1(s1))
        y = self.bottleneck(self.down2(s2))
        y = self.dec1(self.fuse1(self.up1(y), s2))
        y = self.dec2(self.fuse2(self.up2(y), s1))
        return self.head(y)

    def forward(self, x):
        if x.ndim == 3:
            return self.forward(x.unsqueeze(0)).squeeze(0)
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected (b, 3, h, w) input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        pad_h = (4 - h % 4) % 4
        pad_w = (4 - w % 4) % 4
        xp = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect") if pad_h or pad_w else x
        o = self.features(xp)[:, :, :h, :w]

        kind = self.cfg.recon_kind
        if kind == "uw_soft":
            out = physics.soft_reconstruct(x, o)
        elif kind == "soft":
            k, b = torch.split(o, (1, 3), dim=1)
            out = x * k - b + x
        else:
            out = x + o
        if self.cfg.clamp_output:
            out = out.clamp(0.0, 1.0)
        if not self.training and torch.isnan(out).any():
            raise FloatingPointError("NaN in network output")
        return out

    def enhance(self, x):
        """Inference entry point: clamped output regardless of config."""
        with torch.no_grad():
            return self.forward(x).clamp(0.0, 1.0)


def build_model(cfg=None, seed=None):
    """Construct a WaterFormer with a deterministic initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return WaterFormer(cfg)


def count_params(module):
    """Exact number of learnable parameter scalars."""
    return sum(p.numel() for p in module.parameters())


def count_macs(module, h, w, in_channels=3):
    """Multiply-accumulate operations of one forward pass at h x w.

    Convolutions count output elements times weights per output (bias
    excluded); attention counts its two matrix products. Elementwise work
    (activations, norms, softmax) is excluded, the usual MAC convention.
    """
    totals = {"macs": 0}
    hooks = []

    def conv_hook(mod, inputs, output):
        k = mod.kernel_size[0] * mod.kernel_size[1]
        per_out = (mod.in_channels // mod.groups) * k
        out_elems = output.numel() // output.shape[0]
        totals["macs"] += out_elems * per_out

    def window_attn_hook(mod, inputs, output):
        x = inputs[0]
        c, hh, ww = x.shape[1], x.shape[2], x.shape[3]
        ws = mod.window_size
        hp = hh + (ws - hh % ws) % ws
        wp = ww + (ws - ww % ws) % ws
        n_windows = (hp // ws) * (wp // ws)
        n = ws * ws
        totals["macs"] += n_windows * 2 * n * n * c

    def channel_attn_hook(mod, inputs, output):
        x = inputs[0]
        c, n = x.shape[1], x.shape[2] * x.shape[3]
        head_dim = c // mod.num_heads
        totals["macs"] += 2 * mod.num_heads * head_dim * head_dim * n

    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            hooks.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, WindowAttention):
            hooks.append(m.register_forward_hook(window_attn_hook))
        elif isinstance(m, ChannelAttention):
            hooks.append(m.register_forward_hook(channel_attn_hook))

    was_training = module.training
    module.eval()
    try:
        with torch.no_grad():
            module(torch.zeros(1, in_channels, h, w))
    finally:
        for hook in hooks:
            hook.remove()
        module.train(was_training)
    return totals["macs"]
