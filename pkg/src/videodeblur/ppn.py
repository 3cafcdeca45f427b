"""Preprocessing network: shared encoder per frame group, non-local fusion
across the three time slots, shared decoder with a global residual from the
blurry input.

Each group pairs a blurry frame with a companion (a restored frame from the
previous step, or the blurry frame itself at sequence start); the three
encoded feature grids are concatenated along channels, refined by a chain of
non-local blocks, split back, and decoded.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["NonLocalBlock", "PPN"]


def _conv(in_ch, out_ch, stride=1):
    return nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)


class NonLocalBlock(nn.Module):
    """Embedded-Gaussian self-attention over spatial positions with a residual
    connection.  The output projection is zero-initialized so a fresh block is
    the identity.

    Key/value paths are max-pooled 2x when the feature map exceeds
    ``subsample_above`` positions to bound the quadratic attention cost.
    """

    def __init__(self, channels: int, subsample_above: int = 64 * 64):
        super().__init__()
        inter = max(channels // 2, 1)
        self.theta = nn.Conv2d(channels, inter, 1)
        self.phi = nn.Conv2d(channels, inter, 1)
        self.g = nn.Conv2d(channels, inter, 1)
        self.out_proj = nn.Conv2d(inter, channels, 1)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)
        self.subsample_above = subsample_above

    def attention(self, x: torch.Tensor) -> torch.Tensor:
        """Softmax-normalized affinity matrix (N, HW, HW_kv); rows sum to 1."""
        n, _, h, w = x.shape
        q = self.theta(x).flatten(2).transpose(1, 2)  # (N, HW, C')
        k_in = x
        if h * w > self.subsample_above:
            k_in = F.max_pool2d(x, 2)
        k = self.phi(k_in).flatten(2)  # (N, C', HW_kv)
        return torch.softmax(q @ k, dim=-1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c, h, w = x.shape
        attn = self.attention(x)
        v_in = x
        if h * w > self.subsample_above:
            v_in = F.max_pool2d(x, 2)
        v = self.g(v_in).flatten(2).transpose(1, 2)  # (N, HW_kv, C')
        y = (attn @ v).transpose(1, 2).reshape(n, -1, h, w)
        return x + self.out_proj(y)


class PPN(nn.Module):
    """Three-slot preprocessing network.

    forward() takes three (blurry, companion) groups, each a pair of
    (N, 3, H, W) tensors, and returns three enhanced frames clamped to [0, 1].
    Encoder and decoder weights are shared across slots.
    """

    stride = 4

    def __init__(self, channels: int = 32, num_nonlocal: int = 3, nonlocal_enabled: bool = True):
        super().__init__()
        c = channels
        self.encoder = nn.Sequential(
            _conv(6, c), nn.ReLU(inplace=True),
            _conv(c, c, stride=2), nn.ReLU(inplace=True),
            _conv(c, c, stride=2), nn.ReLU(inplace=True),
        )
        self.fusion = nn.ModuleList(NonLocalBlock(3 * c) for _ in range(num_nonlocal))
        self.nonlocal_enabled = nonlocal_enabled
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(c, c, 4, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(c, c, 4, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        self.out_conv = _conv(c, 3)
        self.channels = c

    def encode(self, blurry: torch.Tensor, companion: torch.Tensor) -> torch.Tensor:
        if blurry.shape != companion.shape:
            raise ValueError("group frames must have identical shapes")
        h, w = blurry.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValueError(f"spatial dims must be divisible by {self.stride}")
        return self.encoder(torch.cat([blurry, companion], dim=1))

    def fuse(self, f_prev, f_center, f_next):
        if not (f_prev.shape == f_center.shape == f_next.shape):
            raise ValueError("feature grids must match")
        total = torch.cat([f_prev, f_center, f_next], dim=1)
        if self.nonlocal_enabled:
            for block in self.fusion:
                total = block(total)
        return torch.chunk(total, 3, dim=1)

    def decode(self, features: torch.Tensor, blurry: torch.Tensor) -> torch.Tensor:
        out = self.out_conv(self.decoder(features))
        return torch.clamp(out + blurry, 0.0, 1.0)

    def forward(self, groups):
        (b0, c0), (b1, c1), (b2, c2) = groups
        f0 = self.encode(b0, c0)
        f1 = self.encode(b1, c1)
        f2 = self.encode(b2, c2)
        g0, g1, g2 = self.fuse(f0, f1, f2)
        return self.decode(g0, b0), self.decode(g1, b1), self.decode(g2, b2)

    def zero_residual_output(self):
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)
