"""Frame aggregation: per-pixel reliability maps over three aligned restored
frames, merged as a convex combination.

The reliability head sees the three candidate frames, the two occlusion maps,
and a shallow convolutional encoding of the two flow fields; a per-pixel
softmax across the three logit maps makes the aggregation brightness
preserving.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

__all__ = ["AggregationInput", "ReliabilityTriplet", "FAN", "aggregate"]


@dataclass
class AggregationInput:
    """Candidates aligned to the output time index: warped previous aggregate,
    central deblurred frame, warped next deblurred frame."""

    warped_prev: torch.Tensor
    center: torch.Tensor
    warped_next: torch.Tensor
    occ_prev: torch.Tensor
    occ_next: torch.Tensor
    flow_prev: torch.Tensor
    flow_next: torch.Tensor

    def validate(self) -> None:
        hw = self.center.shape[-2:]
        for name in ("warped_prev", "warped_next", "occ_prev", "occ_next", "flow_prev", "flow_next"):
            t = getattr(self, name)
            if t.shape[-2:] != hw:
                raise ValueError(f"aggregation input {name} spatial size mismatch")


@dataclass
class ReliabilityTriplet:
    rm_prev: torch.Tensor
    rm_center: torch.Tensor
    rm_next: torch.Tensor

    def stack(self) -> torch.Tensor:
        return torch.cat([self.rm_prev, self.rm_center, self.rm_next], dim=-3)


class FAN(nn.Module):
    def __init__(self, width: int = 32, flow_features: int = 8):
        super().__init__()
        self.flow_enc = nn.Sequential(
            nn.Conv2d(4, flow_features, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(flow_features, flow_features, 3, padding=1), nn.ReLU(inplace=True),
        )
        in_ch = 9 + 2 + flow_features
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, width, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1), nn.ReLU(inplace=True),
        )
        self.logits = nn.Conv2d(width, 3, 3, padding=1)

    def reliability(self, agg_in: AggregationInput) -> ReliabilityTriplet:
        agg_in.validate()
        frames = torch.cat([agg_in.warped_prev, agg_in.center, agg_in.warped_next], dim=-3)
        squeeze = frames.dim() == 3
        def b(t):
            return t.unsqueeze(0) if squeeze else t
        flows = torch.cat([b(agg_in.flow_prev), b(agg_in.flow_next)], dim=1)
        x = torch.cat(
            [b(frames), b(agg_in.occ_prev), b(agg_in.occ_next), self.flow_enc(flows)],
            dim=1,
        )
        weights = torch.softmax(self.logits(self.body(x)), dim=1)
        if squeeze:
            weights = weights.squeeze(0)
        return ReliabilityTriplet(
            rm_prev=weights[..., 0:1, :, :],
            rm_center=weights[..., 1:2, :, :],
            rm_next=weights[..., 2:3, :, :],
        )

    def forward(self, agg_in: AggregationInput) -> tuple[torch.Tensor, ReliabilityTriplet]:
        rms = self.reliability(agg_in)
        return aggregate(agg_in, rms), rms

    def zero_residual_output(self):
        # zero logits -> uniform 1/3 reliability everywhere
        nn.init.zeros_(self.logits.weight)
        nn.init.zeros_(self.logits.bias)


def aggregate(
    agg_in: AggregationInput, rms: ReliabilityTriplet, check_normalized: bool = True
) -> torch.Tensor:
    """Weighted per-pixel merge of the three candidates; one reliability value
    per pixel is shared across RGB.  Requires weights summing to 1 per pixel.
    """
    agg_in.validate()
    if check_normalized:
        total = rms.rm_prev + rms.rm_center + rms.rm_next
        finite = torch.isfinite(total)
        # non-finite weights pass through so training's divergence guard can
        # report them with context
        if not torch.allclose(total[finite], torch.ones_like(total[finite]), atol=1e-4):
            raise ValueError("reliability triplet is not normalized")
        if (rms.rm_prev[finite] < 0).any() or (rms.rm_center[finite] < 0).any() or (
            rms.rm_next[finite] < 0
        ).any():
            raise ValueError("reliability maps must be nonnegative")
    return (
        agg_in.warped_prev * rms.rm_prev
        + agg_in.center * rms.rm_center
        + agg_in.warped_next * rms.rm_next
    )
