"""Conversions between numpy frames (H, W, 3) and torch tensors (3, H, W)."""

from __future__ import annotations

import numpy as np
import torch

__all__ = ["to_tensor", "to_frame", "frames_to_tensors"]


def to_tensor(frame: np.ndarray) -> torch.Tensor:
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) frame, got {frame.shape}")
    return torch.from_numpy(np.ascontiguousarray(frame.transpose(2, 0, 1))).float()


def to_frame(tensor: torch.Tensor) -> np.ndarray:
    t = tensor.detach()
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ValueError("cannot convert a batch to a single frame")
        t = t.squeeze(0)
    return t.cpu().float().numpy().transpose(1, 2, 0)


def frames_to_tensors(frames) -> list[torch.Tensor]:
    return [to_tensor(f) for f in frames]
