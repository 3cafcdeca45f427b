"""Optical flow backends, backward warping, and occlusion handling.

Conventions:
  * frames are torch tensors (C, H, W) or (N, C, H, W), values in [0, 1]
  * flow fields are (2, H, W) or (N, 2, H, W); channel 0 = dx, channel 1 = dy,
    in pixel units
  * occlusion maps are (1, H, W) or (N, 1, H, W) with 0 = occluded, 1 = visible

Backward warping samples the source at x + flow(x) with bilinear
interpolation and clamp-to-edge borders, so aligning a neighbor frame to a
reference needs the flow estimated from the reference toward the neighbor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "OcclusionParams",
    "AlignedTriplet",
    "FlowBackend",
    "FarnebackPyramidBackend",
    "ZeroFlowBackend",
    "ConstantFlowBackend",
    "get_backend",
    "register_backend",
    "warp_backward",
    "detect_occlusion",
    "revise_warped",
    "align_triplet",
    "write_flow_file",
    "read_flow_file",
    "FlowCache",
]


@dataclass(frozen=True)
class OcclusionParams:
    """Thresholds of the forward/backward consistency inequality."""

    alpha1: float = 0.01
    alpha2: float = 0.5

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("occlusion thresholds must be nonnegative")


def _as_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ValueError(f"expected 3D or 4D tensor, got shape {tuple(x.shape)}")


def _check_same_spatial(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError(
            f"{what}: spatial sizes differ, {tuple(a.shape[-2:])} vs {tuple(b.shape[-2:])}"
        )


class BackendError(RuntimeError):
    """Raised when a flow backend fails on valid inputs."""


class FlowBackend:
    """Dense flow estimator interface: (src, dst) -> flow at src coordinates.

    The returned flow maps each src pixel toward its position in dst, i.e.
    src(x) corresponds to dst(x + flow(x)).  Backends are not assumed to be
    thread-safe; use one instance per worker.
    """

    name = "abstract"

    def estimate(self, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        src_b, squeeze = _as_batched(src)
        dst_b, _ = _as_batched(dst)
        if src_b.shape != dst_b.shape:
            raise ValueError(
                f"flow inputs must match, got {tuple(src.shape)} vs {tuple(dst.shape)}"
            )
        flows = []
        with torch.no_grad():
            for s, d in zip(src_b, dst_b):
                flows.append(self._estimate_single(s, d))
        out = torch.stack(flows)
        return out.squeeze(0) if squeeze else out

    def _estimate_single(self, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def __call__(self, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        return self.estimate(src, dst)


class FarnebackPyramidBackend(FlowBackend):
    """Coarse-to-fine polynomial-expansion flow (3 pyramid levels, fixed iterations).

    Classical, learning-free estimator; adequate for the procedurally rendered
    scenes this project trains on.  Pretrained network backends plug in via the
    same interface.
    """

    name = "builtin-pyramid"

    def __init__(self, levels: int = 3, iterations: int = 10, winsize: int = 15):
        self.levels = levels
        self.iterations = iterations
        self.winsize = winsize

    def _estimate_single(self, src: torch.Tensor, dst: torch.Tensor) -> torch.Tensor:
        src8 = self._to_gray8(src)
        dst8 = self._to_gray8(dst)
        try:
            flow = cv2.calcOpticalFlowFarneback(
                src8,
                dst8,
                None,
                pyr_scale=0.5,
                levels=self.levels,
                winsize=self.winsize,
                iterations=self.iterations,
                poly_n=5,
                poly_sigma=1.2,
                flags=0,
            )
        except cv2.error as exc:
            raise BackendError(f"pyramid flow estimation failed: {exc}") from exc
        return torch.from_numpy(flow).permute(2, 0, 1).to(src.dtype)

    @staticmethod
    def _to_gray8(frame: torch.Tensor) -> np.ndarray:
        arr = frame.detach().cpu().float().numpy()
        gray = arr.mean(axis=0) if arr.shape[0] > 1 else arr[0]
        return np.clip(gray * 255.0, 0, 255).astype(np.uint8)


class ZeroFlowBackend(FlowBackend):
    """Always-zero flow; useful for static scenes and controlled tests."""

    name = "zero"

    def _estimate_single(self, src, dst):
        h, w = src.shape[-2:]
        return torch.zeros(2, h, w, dtype=src.dtype, device=src.device)


class ConstantFlowBackend(FlowBackend):
    """Returns a fixed flow field regardless of input content.

    Used where flow must be held constant while network parameters vary
    (finite-difference gradient checks) or prescribed exactly (occlusion
    tests).
    """

    name = "constant"

    def __init__(self, flow: torch.Tensor):
        if flow.dim() != 3 or flow.shape[0] != 2:
            raise ValueError("constant flow must have shape (2, H, W)")
        self.flow = flow

    def _estimate_single(self, src, dst):
        _check_same_spatial(src, self.flow, "constant backend")
        return self.flow.to(dtype=src.dtype, device=src.device).clone()


_BACKENDS: dict[str, type] = {}


def register_backend(name: str, factory) -> None:
    _BACKENDS[name] = factory


def get_backend(name: str, **kwargs) -> FlowBackend:
    if name not in _BACKENDS:
        raise KeyError(f"unknown flow backend {name!r}; known: {sorted(_BACKENDS)}")
    return _BACKENDS[name](**kwargs)


register_backend("builtin-pyramid", FarnebackPyramidBackend)
register_backend("zero", ZeroFlowBackend)


def _base_grid(h: int, w: int, dtype, device) -> torch.Tensor:
    ys = torch.arange(h, dtype=dtype, device=device)
    xs = torch.arange(w, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return gx, gy


def warp_backward(src: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample src at x + flow(x); out-of-bounds clamps to border.

    Differentiable w.r.t. src and flow.
    """
    src_b, squeeze = _as_batched(src)
    flow_b, _ = _as_batched(flow)
    _check_same_spatial(src_b, flow_b, "warp_backward")
    if flow_b.shape[0] != src_b.shape[0]:
        raise ValueError("warp_backward: batch sizes differ")
    n, _, h, w = src_b.shape
    gx, gy = _base_grid(h, w, flow_b.dtype, flow_b.device)
    sample_x = gx.unsqueeze(0) + flow_b[:, 0]
    sample_y = gy.unsqueeze(0) + flow_b[:, 1]
    # normalize to [-1, 1] for grid_sample (align_corners=True)
    if w > 1:
        norm_x = 2.0 * sample_x / (w - 1) - 1.0
    else:
        norm_x = torch.zeros_like(sample_x)
    if h > 1:
        norm_y = 2.0 * sample_y / (h - 1) - 1.0
    else:
        norm_y = torch.zeros_like(sample_y)
    grid = torch.stack((norm_x, norm_y), dim=-1)
    out = F.grid_sample(
        src_b, grid, mode="bilinear", padding_mode="border", align_corners=True
    )
    return out.squeeze(0) if squeeze else out


def detect_occlusion(
    w_f: torch.Tensor,
    w_b: torch.Tensor,
    params: OcclusionParams = OcclusionParams(),
) -> torch.Tensor:
    """Forward/backward consistency occlusion map.

    A pixel is visible (1) iff

        |w_f(x) + w_b(x + w_f(x))| < a1 * (|w_f(x)|^2 + |w_b(x + w_f(x))|^2) + a2

    with Euclidean norms; the backward flow is bilinearly resampled at the
    forward-displaced position.  Returns 0 for occluded pixels.
    """
    w_f_b, squeeze = _as_batched(w_f)
    w_b_b, _ = _as_batched(w_b)
    _check_same_spatial(w_f_b, w_b_b, "detect_occlusion")
    w_b_at = warp_backward(w_b_b, w_f_b)
    summed = w_f_b + w_b_at
    lhs = summed.pow(2).sum(dim=1, keepdim=True).sqrt()
    rhs = (
        params.alpha1
        * (w_f_b.pow(2).sum(dim=1, keepdim=True) + w_b_at.pow(2).sum(dim=1, keepdim=True))
        + params.alpha2
    )
    occ = (lhs < rhs).to(w_f_b.dtype)
    return occ.squeeze(0) if squeeze else occ


def revise_warped(
    central: torch.Tensor, warped: torch.Tensor, occ: torch.Tensor
) -> torch.Tensor:
    """Replace occluded pixels of a warped frame with the central frame:
    central * (1 - occ) + warped * occ, pixel-wise.
    """
    central_b, squeeze = _as_batched(central)
    warped_b, _ = _as_batched(warped)
    occ_b, _ = _as_batched(occ)
    _check_same_spatial(central_b, warped_b, "revise_warped")
    _check_same_spatial(central_b, occ_b, "revise_warped")
    if not torch.logical_or(occ_b == 0, occ_b == 1).all():
        raise ValueError("occlusion map must be binary")
    out = central_b * (1.0 - occ_b) + warped_b * occ_b
    return out.squeeze(0) if squeeze else out


@dataclass
class AlignedTriplet:
    """Neighbor frames warped and occlusion-revised toward the center frame."""

    revised_forward: torch.Tensor
    revised_backward: torch.Tensor
    occ_prev: torch.Tensor
    occ_next: torch.Tensor
    flow_to_prev: torch.Tensor
    flow_from_prev: torch.Tensor
    flow_to_next: torch.Tensor
    flow_from_next: torch.Tensor


def align_triplet(
    prev: torch.Tensor,
    center: torch.Tensor,
    next_: torch.Tensor,
    backend: FlowBackend,
    params: OcclusionParams = OcclusionParams(),
) -> AlignedTriplet:
    """Warp prev and next toward center, detect occlusions per pair, and
    revise the warped frames by borrowing central pixels where occluded.

    Flows are estimated with gradients stopped (the backend is treated as a
    fixed external module); warping itself stays differentiable.
    """
    _check_same_spatial(prev, center, "align_triplet")
    _check_same_spatial(center, next_, "align_triplet")
    flow_to_prev = backend.estimate(center.detach(), prev.detach())
    flow_from_prev = backend.estimate(prev.detach(), center.detach())
    flow_to_next = backend.estimate(center.detach(), next_.detach())
    flow_from_next = backend.estimate(next_.detach(), center.detach())

    warped_prev = warp_backward(prev, flow_to_prev)
    warped_next = warp_backward(next_, flow_to_next)
    occ_prev = detect_occlusion(flow_to_prev, flow_from_prev, params)
    occ_next = detect_occlusion(flow_to_next, flow_from_next, params)

    return AlignedTriplet(
        revised_forward=revise_warped(center, warped_prev, occ_prev),
        revised_backward=revise_warped(center, warped_next, occ_next),
        occ_prev=occ_prev,
        occ_next=occ_next,
        flow_to_prev=flow_to_prev,
        flow_from_prev=flow_from_prev,
        flow_to_next=flow_to_next,
        flow_from_next=flow_from_next,
    )


# ---------------------------------------------------------------------------
# On-disk flow cache: 8-byte header (H, W as uint32 LE) followed by the dx
# plane then the dy plane as little-endian float32.

def write_flow_file(path: Path | str, flow: torch.Tensor) -> None:
    if flow.dim() != 3 or flow.shape[0] != 2:
        raise ValueError("flow file expects shape (2, H, W)")
    h, w = flow.shape[-2:]
    arr = flow.detach().cpu().numpy().astype("<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", h, w))
        f.write(arr[0].tobytes())
        f.write(arr[1].tobytes())


def read_flow_file(path: Path | str) -> torch.Tensor:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8:
            raise ValueError(f"truncated flow file: {path}")
        h, w = struct.unpack("<II", header)
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != 2 * h * w:
        raise ValueError(f"flow file size mismatch: {path}")
    return torch.from_numpy(data.reshape(2, h, w).copy())


class FlowCache:
    """Disk cache of flow fields keyed by (video_id, frame_index, direction)."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, video_id: str, frame_index: int, direction: str) -> Path:
        if direction not in ("forward", "backward"):
            raise ValueError(f"bad flow direction {direction!r}")
        return self.root / f"{video_id}_{frame_index:05d}_{direction}.flo_raw"

    def get(self, video_id: str, frame_index: int, direction: str) -> torch.Tensor | None:
        p = self._path(video_id, frame_index, direction)
        return read_flow_file(p) if p.exists() else None

    def put(self, video_id: str, frame_index: int, direction: str, flow: torch.Tensor) -> None:
        write_flow_file(self._path(video_id, frame_index, direction), flow)
