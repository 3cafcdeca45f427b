"""Alignment-based deconvolution network: a U-Net over the stacked
occlusion-revised triplet, predicting a correction to the central frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

__all__ = ["AlignedStack", "ABDN"]

PRESETS = {"light": 32, "full": 64}


@dataclass
class AlignedStack:
    """Revised forward/backward neighbors plus the central frame, all aligned
    to the central time index."""

    revised_forward: torch.Tensor
    center: torch.Tensor
    revised_backward: torch.Tensor

    def as_input(self) -> torch.Tensor:
        if not (
            self.revised_forward.shape == self.center.shape == self.revised_backward.shape
        ):
            raise ValueError("aligned stack frames must share one shape")
        return torch.cat([self.revised_forward, self.center, self.revised_backward], dim=-3)


def _block(in_ch, out_ch):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1), nn.ReLU(inplace=True),
    )


class ABDN(nn.Module):
    """U-Net deblurrer with skip connections and a global residual from the
    central frame; output clamped to [0, 1].

    ``width`` may be given directly or via ``preset`` ("light"/"full").
    """

    def __init__(self, width: int | None = None, depth: int = 3, preset: str = "light"):
        super().__init__()
        if width is None:
            if preset not in PRESETS:
                raise ValueError(f"unknown preset {preset!r}")
            width = PRESETS[preset]
        self.depth = depth
        chans = [width * (2 ** i) for i in range(depth + 1)]
        self.inc = _block(9, chans[0])
        self.down = nn.ModuleList(_block(chans[i], chans[i + 1]) for i in range(depth))
        self.pool = nn.MaxPool2d(2)
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2) for i in reversed(range(depth))
        )
        self.up_blocks = nn.ModuleList(
            _block(2 * chans[i], chans[i]) for i in reversed(range(depth))
        )
        self.out_conv = nn.Conv2d(chans[0], 3, 3, padding=1)

    def forward(self, stack: AlignedStack) -> torch.Tensor:
        x = stack.as_input()
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        h, w = x.shape[-2:]
        if h % (2 ** self.depth) or w % (2 ** self.depth):
            raise ValueError(f"spatial dims must be divisible by {2 ** self.depth}")
        skips = []
        x = self.inc(x)
        for down in self.down:
            skips.append(x)
            x = down(self.pool(x))
        for up, block in zip(self.up, self.up_blocks):
            x = block(torch.cat([up(x), skips.pop()], dim=1))
        center = stack.center
        if center.dim() == 3:
            center = center.unsqueeze(0)
        out = torch.clamp(self.out_conv(x) + center, 0.0, 1.0)
        return out.squeeze(0) if squeeze else out

    def zero_residual_output(self):
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)
