"""PSNR metric, benchmark runner, and the ablation harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import TrainingSequence
from .frames import to_tensor
from .pipeline import Pipeline

__all__ = ["psnr", "EvalReport", "evaluate", "ablate", "ABLATION_MODES"]

PSNR_CAP_DB = 99.0


def psnr(pred, target, cap: float = PSNR_CAP_DB, quantize: bool = False) -> float:
    """10*log10(1/MSE) over all pixels and channels of [0,1] frames.

    Identical frames report ``cap`` instead of infinity.  ``quantize`` rounds
    both inputs to 8 bits first, for comparability with integer-domain
    evaluations.
    """
    p = pred.detach().cpu().numpy() if isinstance(pred, torch.Tensor) else np.asarray(pred)
    t = target.detach().cpu().numpy() if isinstance(target, torch.Tensor) else np.asarray(target)
    if p.shape != t.shape:
        raise ValueError(f"psnr operands differ in shape: {p.shape} vs {t.shape}")
    if quantize:
        p = np.rint(p * 255.0) / 255.0
        t = np.rint(t * 255.0) / 255.0
    err = float(np.mean((p.astype(np.float64) - t.astype(np.float64)) ** 2))
    if err == 0.0:
        return cap
    return min(10.0 * math.log10(1.0 / err), cap)


@dataclass
class EvalReport:
    mode: str
    per_frame: list[tuple[str, int, float]]  # (video_id, frame_index, psnr)
    config_fingerprint: str = ""

    def video_means(self) -> dict[str, float]:
        acc: dict[str, list[float]] = {}
        for vid, _, val in self.per_frame:
            acc.setdefault(vid, []).append(val)
        return {vid: float(np.mean(vals)) for vid, vals in acc.items()}

    @property
    def overall_mean(self) -> float:
        return float(np.mean([v for _, _, v in self.per_frame]))

    def write_csv(self, path: Path | str) -> None:
        lines = ["video_id,frame_index,psnr"]
        lines += [f"{vid},{idx},{val:.6f}" for vid, idx, val in self.per_frame]
        lines.append(f"# mode {self.mode}")
        for vid, mean in sorted(self.video_means().items()):
            lines.append(f"# video_mean {vid} {mean:.6f}")
        lines.append(f"# overall_mean {self.overall_mean:.6f}")
        if self.config_fingerprint:
            lines.append(f"# config {self.config_fingerprint}")
        Path(path).write_text("".join(l + "\n" for l in lines))


ABLATION_MODES = (
    "full",
    "ppn+abdn+fan",
    "ppn+abdn",
    "ppn-only",
    "abdn-only",
    "no-nlb",
    "no-occ-abdn",
    "no-occ-fan",
)


def _pipeline_for_mode(net, backend, mode: str) -> tuple[Pipeline, str]:
    """Map an ablation mode to pipeline options plus the stage whose output is
    scored.  Modes altering the architecture itself (no-nlb) reuse the given
    weights; retraining would be needed for a fair score."""
    if mode in ("full", "ppn+abdn+fan"):
        return Pipeline(net, backend), "fan"
    if mode == "ppn+abdn":
        return Pipeline(net, backend), "abdn"
    if mode == "ppn-only":
        return Pipeline(net, backend), "ppn"
    if mode == "abdn-only":
        return Pipeline(net, backend, use_ppn=False), "abdn"
    if mode == "no-nlb":
        net.ppn.nonlocal_enabled = False
        return Pipeline(net, backend), "fan"
    if mode == "no-occ-abdn":
        return Pipeline(net, backend, use_occ_abdn=False), "fan"
    if mode == "no-occ-fan":
        return Pipeline(net, backend, use_occ_fan=False), "fan"
    raise ValueError(f"unknown ablation mode {mode!r}; known: {ABLATION_MODES}")


def _score_sequence(pipeline: Pipeline, stage: str, seq: TrainingSequence, quantize=False):
    blurry = [to_tensor(p.blurry).unsqueeze(0) for p in seq.pairs]
    with torch.no_grad():
        outputs = pipeline.run_video_stage(blurry, stage)
    return [
        (seq.video_id, i, psnr(out.squeeze(0), to_tensor(p.sharp), quantize=quantize))
        for i, (out, p) in enumerate(zip(outputs, seq.pairs))
    ]


def evaluate(
    net,
    backend,
    dataset: list[TrainingSequence],
    mode: str = "full",
    quantize: bool = False,
    config_fingerprint: str = "",
) -> EvalReport:
    """Run the (possibly ablated) pipeline over every clip and score PSNR
    against the sharp frames."""
    was_nlb = net.ppn.nonlocal_enabled
    try:
        pipeline, stage = _pipeline_for_mode(net, backend, mode)
        per_frame = []
        for seq in dataset:
            per_frame.extend(_score_sequence(pipeline, stage, seq, quantize))
    finally:
        net.ppn.nonlocal_enabled = was_nlb
    return EvalReport(mode=mode, per_frame=per_frame, config_fingerprint=config_fingerprint)


def ablate(
    net,
    backend,
    dataset: list[TrainingSequence],
    modes,
    out_dir: Path | str | None = None,
    config_fingerprint: str = "",
) -> dict[str, EvalReport]:
    reports = {}
    for mode in modes:
        rep = evaluate(net, backend, dataset, mode=mode, config_fingerprint=config_fingerprint)
        reports[mode] = rep
        if out_dir is not None:
            rep.write_csv(Path(out_dir) / f"ablation_{mode.replace('+', '_')}.csv")
    return reports


def baseline_report(dataset: list[TrainingSequence], quantize: bool = False) -> EvalReport:
    """PSNR of the raw blurry frames against the sharp frames."""
    per_frame = [
        (seq.video_id, i, psnr(p.blurry, p.sharp, quantize=quantize))
        for seq in dataset
        for i, p in enumerate(seq.pairs)
    ]
    return EvalReport(mode="blurry-baseline", per_frame=per_frame)
