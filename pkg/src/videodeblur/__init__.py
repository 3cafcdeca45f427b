"""Recurrent three-stage video deblurring.

Stages: non-local preprocessing of grouped blurry/restored frames,
optical-flow-aligned deconvolution with occlusion handling, and
reliability-map aggregation of consecutive restored frames.
"""

from .abdn import ABDN, AlignedStack
from .fan import FAN, AggregationInput, ReliabilityTriplet, aggregate
from .flow import (
    FlowBackend,
    OcclusionParams,
    align_triplet,
    detect_occlusion,
    get_backend,
    revise_warped,
    warp_backward,
)
from .pipeline import DeblurNet, Pipeline, RecurrentState
from .ppn import PPN, NonLocalBlock

__all__ = [
    "ABDN",
    "AlignedStack",
    "FAN",
    "AggregationInput",
    "ReliabilityTriplet",
    "aggregate",
    "FlowBackend",
    "OcclusionParams",
    "align_triplet",
    "detect_occlusion",
    "get_backend",
    "revise_warped",
    "warp_backward",
    "DeblurNet",
    "Pipeline",
    "RecurrentState",
    "PPN",
    "NonLocalBlock",
]

__version__ = "0.1.0"
