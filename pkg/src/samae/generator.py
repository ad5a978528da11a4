"""Conditioned U-Net generator.

Residual blocks with downsampling, a middle attention stage, and an
upsampling path with skip connections. The identity/skin condition vector
enters every residual block through a shared MLP followed by a per-block,
zero-initialized scale/shift applied after group normalization, so a fresh
block is exactly its unconditioned self.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeMismatch
from .conditioning import ID_DIM, SKIN_DIM


@dataclass
class GeneratorInput:
    """Spatial stack [mesh render, masked image, keypoint image] + condition vector."""

    spatial: torch.Tensor  # (B, C_img + 2, H, W)
    vector: torch.Tensor   # (B, ID_DIM + SKIN_DIM)

    def validate(self, expected_channels: int, cond_dim: int):
        if self.spatial.ndim != 4:
            raise ShapeMismatch("spatial input must be (B, C, H, W)")
        if self.spatial.shape[1] != expected_channels:
            raise ShapeMismatch(
                f"expected {expected_channels} spatial channels, got {self.spatial.shape[1]}"
            )
        if self.vector.ndim != 2 or self.vector.shape[1] != cond_dim:
            raise ShapeMismatch(f"condition vector must be (B, {cond_dim})")
        if self.vector.shape[0] != self.spatial.shape[0]:
            raise ShapeMismatch("batch sizes differ between spatial and vector inputs")
        if not torch.isfinite(self.spatial).all() or not torch.isfinite(self.vector).all():
            raise ValueError("generator inputs must be finite")


@dataclass
class GeneratorConfig:
    resolution: int = 64
    in_channels: int = 3
    out_channels: int = 1
    base_width: int = 32
    channel_mult: tuple = (1, 2, 2)
    blocks_per_level: int = 2
    attn_levels: tuple = (2,)   # indices into channel_mult; lowest resolution
    cond_dim: int = ID_DIM + SKIN_DIM
    cond_hidden: int = 128
    groups: int = 8

    @classmethod
    def preset(cls, name: str, **overrides) -> "GeneratorConfig":
        presets = {
            "tiny": dict(resolution=32, base_width=8, channel_mult=(1, 2),
                         blocks_per_level=1, attn_levels=(1,), cond_hidden=32,
                         groups=4),
            "toy": dict(resolution=64, base_width=32, channel_mult=(1, 2, 2),
                        blocks_per_level=2, attn_levels=(2,), cond_hidden=128),
            "full": dict(resolution=256, base_width=128,
                         channel_mult=(1, 1, 2, 2, 4), blocks_per_level=2,
                         attn_levels=(3, 4), cond_hidden=512, groups=32),
        }
        if name not in presets:
            raise ValueError(f"unknown generator preset {name!r}")
        cfg = dict(presets[name])
        cfg.update(overrides)
        return cls(**cfg)


class AdaGroupNorm(nn.Module):
    """Group norm followed by condition-driven scale/shift.

    The projection is zero-initialized: with a fresh block the condition has
    no effect and the layer is plain group normalization.
    """

    def __init__(self, channels: int, cond_dim: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.proj = nn.Linear(cond_dim, 2 * channels)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, h: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        scale, shift = self.proj(F.silu(cond)).chunk(2, dim=1)
        h = self.norm(h)
        return h * (1 + scale[:, :, None, None]) + shift[:, :, None, None]


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, cond_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.ada = AdaGroupNorm(cout, cond_dim, groups)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, cond):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.ada(h, cond)))
        return self.skip(x) + h


class SelfAttention(nn.Module):
    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = nn.Conv2d(channels, channels, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / c ** 0.5, dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


class UNetGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        cfg = config
        self.cond_mlp = nn.Sequential(
            nn.Linear(cfg.cond_dim, cfg.cond_hidden),
            nn.SiLU(),
            nn.Linear(cfg.cond_hidden, cfg.cond_hidden),
        )
        widths = [cfg.base_width * m for m in cfg.channel_mult]
        self.stem = nn.Conv2d(cfg.in_channels, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        ch = widths[0]
        skip_channels = [ch]
        for level, w in enumerate(widths):
            blocks, attns = nn.ModuleList(), nn.ModuleList()
            for _ in range(cfg.blocks_per_level):
                blocks.append(ResBlock(ch, w, cfg.cond_hidden, cfg.groups))
                attns.append(SelfAttention(w, cfg.groups)
                             if level in cfg.attn_levels else nn.Identity())
                ch = w
                skip_channels.append(ch)
            self.down_blocks.append(blocks)
            self.down_attn.append(attns)
            if level < len(widths) - 1:
                self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
                skip_channels.append(ch)
            else:
                self.downsample.append(nn.Identity())

        self.mid_block1 = ResBlock(ch, ch, cfg.cond_hidden, cfg.groups)
        self.mid_attn = SelfAttention(ch, cfg.groups)
        self.mid_block2 = ResBlock(ch, ch, cfg.cond_hidden, cfg.groups)

        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for level, w in reversed(list(enumerate(widths))):
            blocks, attns = nn.ModuleList(), nn.ModuleList()
            for _ in range(cfg.blocks_per_level + 1):
                blocks.append(ResBlock(ch + skip_channels.pop(), w,
                                       cfg.cond_hidden, cfg.groups))
                attns.append(SelfAttention(w, cfg.groups)
                             if level in cfg.attn_levels else nn.Identity())
                ch = w
            self.up_blocks.append(blocks)
            self.up_attn.append(attns)
            if level > 0:
                self.upsample.append(nn.Conv2d(ch, ch, 3, padding=1))
            else:
                self.upsample.append(nn.Identity())

        self.out_norm = nn.GroupNorm(cfg.groups, ch)
        self.out_conv = nn.Conv2d(ch, cfg.out_channels, 3, padding=1)

    def forward(self, spatial: torch.Tensor, vector: torch.Tensor) -> torch.Tensor:
        cond = self.cond_mlp(vector)
        h = self.stem(spatial)
        skips = [h]
        for level, (blocks, attns) in enumerate(zip(self.down_blocks, self.down_attn)):
            for block, attn in zip(blocks, attns):
                h = attn(block(h, cond))
                skips.append(h)
            if not isinstance(self.downsample[level], nn.Identity):
                h = self.downsample[level](h)
                skips.append(h)
        h = self.mid_block2(self.mid_attn(self.mid_block1(h, cond)), cond)
        for i, (blocks, attns) in enumerate(zip(self.up_blocks, self.up_attn)):
            for block, attn in zip(blocks, attns):
                h = attn(block(torch.cat([h, skips.pop()], dim=1), cond))
            if not isinstance(self.upsample[i], nn.Identity):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsample[i](h)
        return torch.tanh(self.out_conv(F.silu(self.out_norm(h))))

    def generate(self, gi: GeneratorInput) -> torch.Tensor:
        """Full-frame image in [-1, 1]; differentiable in weights and spatial input."""
        gi.validate(self.config.in_channels, self.config.cond_dim)
        return self.forward(gi.spatial, gi.vector)
