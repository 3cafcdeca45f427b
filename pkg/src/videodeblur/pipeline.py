"""Recurrent orchestration over a video: 3-frame window management, one-step
delays of the carried restored frames, and end-to-end inference.

Time bookkeeping for the window (t, t+1, t+2):
  * preprocessing enhances all three frames; the slot-t companion is the
    deblurred frame carried from the previous step, the slot-(t+1) companion
    is the previous step's third preprocessed output, and slot t+2 has no
    restored companion yet;
  * deconvolution produces the deblurred frame for index t+1;
  * aggregation finalizes index t, one step behind, because it needs the
    deblurred frame of t+1 warped back in time.

At the head of a video the missing companions fall back to the blurry frames;
at the tail the last two output frames reuse the freshest available restored
frame in place of the never-produced lookahead candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from . import flow as flow_mod
from .abdn import ABDN, AlignedStack
from .fan import FAN, AggregationInput
from .ppn import PPN

__all__ = ["DeblurNet", "RecurrentState", "StepResult", "PipelineOutput", "Pipeline"]


class DeblurNet(nn.Module):
    """The three sub-networks under one parameter namespace (ppn.*, abdn.*, fan.*)."""

    def __init__(self, ppn: PPN | None = None, abdn: ABDN | None = None, fan: FAN | None = None):
        super().__init__()
        self.ppn = ppn or PPN()
        self.abdn = abdn or ABDN()
        self.fan = fan or FAN()

    def zero_residual_outputs(self):
        self.ppn.zero_residual_output()
        self.abdn.zero_residual_output()
        self.fan.zero_residual_output()


@dataclass
class RecurrentState:
    """Restored frames carried across steps; all None at sequence start."""

    prev_preprocessed: torch.Tensor | None = None  # enhanced frame for the next center slot
    prev_deblurred: torch.Tensor | None = None
    prev_aggregated: torch.Tensor | None = None

    def detach(self) -> "RecurrentState":
        d = lambda t: None if t is None else t.detach()
        return RecurrentState(
            d(self.prev_preprocessed), d(self.prev_deblurred), d(self.prev_aggregated)
        )

    def validate(self, shape) -> None:
        for name in ("prev_preprocessed", "prev_deblurred", "prev_aggregated"):
            t = getattr(self, name)
            if t is not None and t.shape != shape:
                raise ValueError(f"state field {name} has shape {tuple(t.shape)}, expected {tuple(shape)}")


@dataclass
class StepResult:
    aggregated: torch.Tensor  # final output for the window's first index
    deblurred: torch.Tensor  # deblurred center frame (index t+1)
    preprocessed: tuple[torch.Tensor, torch.Tensor, torch.Tensor]
    state: RecurrentState
    fan_center: torch.Tensor  # center candidate actually used by aggregation
    reliability: object = None
    occlusions: tuple | None = None


@dataclass
class PipelineOutput:
    aggregated: list[torch.Tensor]
    preprocessed: list[torch.Tensor] = field(default_factory=list)  # per frame index
    deblurred: list[torch.Tensor] = field(default_factory=list)  # per frame index
    reliability: list = field(default_factory=list)


class Pipeline:
    """Runs the full three-stage model recurrently.

    Ablation hooks: ``use_ppn`` feeds blurry frames straight to alignment,
    ``use_occ_abdn``/``use_occ_fan`` replace occlusion maps with all-ones,
    ``slot_companion`` selects which restored frame re-enters the first
    preprocessing slot.
    """

    def __init__(
        self,
        net: DeblurNet,
        backend: flow_mod.FlowBackend,
        occ_params: flow_mod.OcclusionParams = flow_mod.OcclusionParams(),
        use_ppn: bool = True,
        use_occ_abdn: bool = True,
        use_occ_fan: bool = True,
        slot_companion: str = "deblurred",
    ):
        if slot_companion not in ("deblurred", "aggregated"):
            raise ValueError(f"bad slot_companion {slot_companion!r}")
        self.net = net
        self.backend = backend
        self.occ_params = occ_params
        self.use_ppn = use_ppn
        self.use_occ_abdn = use_occ_abdn
        self.use_occ_fan = use_occ_fan
        self.slot_companion = slot_companion

    # -- stage helpers ------------------------------------------------------

    def preprocess_window(self, window, state: RecurrentState):
        b_t, b_t1, b_t2 = window
        if self.slot_companion == "deblurred":
            carried = state.prev_deblurred
        else:
            carried = state.prev_aggregated
        comp_t = carried if carried is not None else b_t
        comp_t1 = state.prev_preprocessed if state.prev_preprocessed is not None else b_t1
        if not self.use_ppn:
            return b_t, b_t1, b_t2
        return self.net.ppn([(b_t, comp_t), (b_t1, comp_t1), (b_t2, b_t2)])

    def deblur_center(self, p_t, p_t1, p_t2):
        triplet = flow_mod.align_triplet(p_t, p_t1, p_t2, self.backend, self.occ_params)
        if not self.use_occ_abdn:
            warped_prev = flow_mod.warp_backward(p_t, triplet.flow_to_prev)
            warped_next = flow_mod.warp_backward(p_t2, triplet.flow_to_next)
            stack = AlignedStack(warped_prev, p_t1, warped_next)
        else:
            stack = AlignedStack(triplet.revised_forward, p_t1, triplet.revised_backward)
        return self.net.abdn(stack), triplet

    def build_fan_input(
        self,
        prev_aggregated: torch.Tensor | None,
        center: torch.Tensor,
        next_deblurred: torch.Tensor | None,
    ) -> AggregationInput:
        """Assemble aggregation candidates for one output index; absent
        neighbors fall back to the center candidate with identity flow."""
        zeros_flow = torch.zeros_like(center[..., :2, :, :])
        ones_occ = torch.ones_like(center[..., :1, :, :])

        if prev_aggregated is None:
            warped_prev, occ_prev, flow_prev = center, ones_occ, zeros_flow
        else:
            fwd = self.backend.estimate(center.detach(), prev_aggregated.detach())
            bwd = self.backend.estimate(prev_aggregated.detach(), center.detach())
            warped_prev = flow_mod.warp_backward(prev_aggregated, fwd)
            occ_prev = flow_mod.detect_occlusion(fwd, bwd, self.occ_params)
            flow_prev = fwd
        if next_deblurred is None:
            warped_next, occ_next, flow_next = center, ones_occ, zeros_flow
        else:
            fwd = self.backend.estimate(center.detach(), next_deblurred.detach())
            bwd = self.backend.estimate(next_deblurred.detach(), center.detach())
            warped_next = flow_mod.warp_backward(next_deblurred, fwd)
            occ_next = flow_mod.detect_occlusion(fwd, bwd, self.occ_params)
            flow_next = fwd
        if not self.use_occ_fan:
            occ_prev = torch.ones_like(occ_prev)
            occ_next = torch.ones_like(occ_next)
        return AggregationInput(
            warped_prev=warped_prev,
            center=center,
            warped_next=warped_next,
            occ_prev=occ_prev,
            occ_next=occ_next,
            flow_prev=flow_prev,
            flow_next=flow_next,
        )

    def aggregate_index(self, prev_aggregated, center, next_deblurred):
        agg_in = self.build_fan_input(prev_aggregated, center, next_deblurred)
        return self.net.fan(agg_in)

    # -- recurrence ---------------------------------------------------------

    def step(self, window, state: RecurrentState) -> StepResult:
        """Process window (t, t+1, t+2): enhance, deblur index t+1, finalize
        index t, and carry the restored frames forward."""
        b_t, b_t1, b_t2 = window
        if not (b_t.shape == b_t1.shape == b_t2.shape):
            raise ValueError("window frames must share one shape")
        state.validate(b_t.shape)

        p_t, p_t1, p_t2 = self.preprocess_window(window, state)
        deblurred, triplet = self.deblur_center(p_t, p_t1, p_t2)

        # aggregation candidate for index t: the carried deblurred frame, or
        # this step's first-slot enhanced frame at the very start
        center_candidate = state.prev_deblurred if state.prev_deblurred is not None else p_t
        aggregated, rms = self.aggregate_index(state.prev_aggregated, center_candidate, deblurred)

        new_state = RecurrentState(
            prev_preprocessed=p_t2,
            prev_deblurred=deblurred,
            prev_aggregated=aggregated,
        )
        return StepResult(
            aggregated=aggregated,
            deblurred=deblurred,
            preprocessed=(p_t, p_t1, p_t2),
            state=new_state,
            fan_center=center_candidate,
            reliability=rms,
            occlusions=(triplet.occ_prev, triplet.occ_next),
        )

    def run_video(self, frames: list[torch.Tensor], keep_intermediates: bool = False) -> PipelineOutput:
        """Slide the 3-frame window across the video and emit one aggregated
        frame per input frame, applying the boundary rules at both ends."""
        n = len(frames)
        if n < 3:
            raise ValueError("video must have at least 3 frames")
        out = PipelineOutput(aggregated=[])
        if keep_intermediates:
            out.preprocessed = [None] * n
            out.deblurred = [None] * n

        state = RecurrentState()
        last = None
        for t in range(n - 2):
            last = self.step((frames[t], frames[t + 1], frames[t + 2]), state)
            state = last.state
            out.aggregated.append(last.aggregated)
            if keep_intermediates:
                p_t, p_t1, p_t2 = last.preprocessed
                if t == 0:
                    out.preprocessed[0] = p_t
                out.preprocessed[t + 1] = p_t1
                out.preprocessed[t + 2] = p_t2
                out.deblurred[t + 1] = last.deblurred
                if t == 0:
                    out.deblurred[0] = p_t  # no deblurred frame exists for index 0
                out.reliability.append(last.reliability)

        # tail: indices n-2 and n-1 have no future window; reuse the freshest
        # restored frames as their missing candidates
        a_tail1, rms1 = self.aggregate_index(state.prev_aggregated, last.state.prev_deblurred, None)
        out.aggregated.append(a_tail1)
        p_last = last.preprocessed[2]
        a_tail2, rms2 = self.aggregate_index(a_tail1, p_last, None)
        out.aggregated.append(a_tail2)
        if keep_intermediates:
            out.deblurred[n - 1] = p_last
            out.reliability.extend([rms1, rms2])
        return out

    def run_video_stage(self, frames: list[torch.Tensor], stage: str) -> list[torch.Tensor]:
        """Per-frame outputs of an intermediate stage ('ppn', 'abdn', 'fan'),
        with the same boundary fills the full pipeline uses."""
        if stage == "fan":
            return self.run_video(frames).aggregated
        out = self.run_video(frames, keep_intermediates=True)
        if stage == "ppn":
            return out.preprocessed
        if stage == "abdn":
            return out.deblurred
        raise ValueError(f"unknown stage {stage!r}")
