"""Loss computation, sequence-unrolled training with truncated
backpropagation through the recurrent state, and checkpointing.

Stage losses are plain MSE against the ground-truth sharp frames: one term
for the enhanced frames (averaged over the three slots), one for the
deblurred frames, one for the aggregated outputs; the total is their sum.

Checkpoints are a single binary container: an 8-byte magic, a JSON manifest
(format version, config snapshot, iteration, tensor index), then the named
parameter and optimizer tensors as little-endian float32.  Per-iteration
randomness is derived from (seed, iteration), so resuming from a checkpoint
reproduces the unbroken run exactly.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .pipeline import DeblurNet, Pipeline, RecurrentState

__all__ = [
    "LossBreakdown",
    "TrainConfig",
    "CheckpointError",
    "compute_losses",
    "mse",
    "learning_rate_at",
    "save_checkpoint",
    "load_checkpoint",
    "build_net",
    "train",
]

CHECKPOINT_MAGIC = b"VDBCKPT\x01"
FORMAT_VERSION = 1


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"MSE operands differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.mean((a - b) ** 2)


@dataclass
class LossBreakdown:
    l_ppn: torch.Tensor
    l_abdn: torch.Tensor
    l_fan: torch.Tensor

    @property
    def l_total(self) -> torch.Tensor:
        return self.l_ppn + self.l_abdn + self.l_fan


def compute_losses(preprocessed_pairs, deblurred_pairs, aggregated_pairs) -> LossBreakdown:
    """Each argument is a list of (output, sharp_target) tensor pairs; stage
    losses are means over their lists."""

    def stage(pairs):
        if not pairs:
            return torch.tensor(0.0)
        return torch.stack([mse(out, tgt) for out, tgt in pairs]).mean()

    return LossBreakdown(
        l_ppn=stage(preprocessed_pairs),
        l_abdn=stage(deblurred_pairs),
        l_fan=stage(aggregated_pairs),
    )


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_decay_every: int = 400_000  # iterations per x0.1 decay; scale down for toy runs
    batch: int = 5
    patch: int = 256
    seq_len: int = 20
    betas: tuple[float, float] = (0.9, 0.999)
    max_iters: int = 2000
    seed: int = 0
    tbptt_window: int = 2
    noise_var: float = 0.01
    jitter: bool = True
    flip: bool = True
    ckpt_interval: int = 500
    val_interval: int = 200
    log_interval: int = 10

    def __post_init__(self):
        if min(self.lr, self.lr_decay_every, self.batch, self.patch, self.seq_len, self.max_iters) <= 0:
            raise ValueError("training config values must be positive")
        if self.seq_len < 3:
            raise ValueError("seq_len must be at least 3")


def learning_rate_at(cfg: TrainConfig, iteration: int) -> float:
    return cfg.lr * (0.1 ** (iteration // cfg.lr_decay_every))


# ---------------------------------------------------------------------------
# Checkpoint container


class CheckpointError(RuntimeError):
    pass


def _collect_tensors(net: DeblurNet, optimizer: torch.optim.Adam | None):
    tensors: dict[str, torch.Tensor] = {k: v for k, v in net.state_dict().items()}
    steps: dict[str, float] = {}
    if optimizer is not None:
        name_of = {id(p): name for name, p in net.named_parameters()}
        for p, st in optimizer.state.items():
            name = name_of.get(id(p))
            if name is None or not st:
                continue
            tensors[f"opt.{name}.exp_avg"] = st["exp_avg"]
            tensors[f"opt.{name}.exp_avg_sq"] = st["exp_avg_sq"]
            steps[name] = float(st["step"])
    return tensors, steps


def save_checkpoint(
    path: Path | str,
    net: DeblurNet,
    config: dict,
    iteration: int,
    optimizer: torch.optim.Adam | None = None,
) -> None:
    tensors, steps = _collect_tensors(net, optimizer)
    index = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy().astype("<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "iteration": iteration,
        "config": config,
        "optimizer_steps": steps,
        "tensors": index,
        "total_bytes": offset,
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for b in blobs:
            f.write(b)


def load_checkpoint(path: Path | str):
    """Returns (manifest dict, {name: float32 tensor})."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    (mlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + mlen:
        raise CheckpointError(f"truncated checkpoint manifest: {path}")
    try:
        manifest = json.loads(raw[12 : 12 + mlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest: {path}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"incompatible checkpoint version {manifest.get('format_version')} (expected {FORMAT_VERSION})"
        )
    body = raw[12 + mlen :]
    if len(body) != manifest["total_bytes"]:
        raise CheckpointError(f"truncated checkpoint data: {path}")
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=start).reshape(shape)
        tensors[entry["name"]] = torch.from_numpy(arr.copy())
    return manifest, tensors


def build_net(model_config: dict) -> DeblurNet:
    from .abdn import ABDN
    from .fan import FAN
    from .ppn import PPN

    net = DeblurNet(
        ppn=PPN(
            channels=model_config.get("ppn_channels", 32),
            num_nonlocal=model_config.get("num_nonlocal", 3),
            nonlocal_enabled=model_config.get("nonlocal_enabled", True),
        ),
        abdn=ABDN(
            width=model_config.get("abdn_width"),
            depth=model_config.get("abdn_depth", 3),
            preset=model_config.get("abdn_preset", "light"),
        ),
        fan=FAN(width=model_config.get("fan_width", 32)),
    )
    return net


def restore_net(manifest: dict, tensors: dict) -> DeblurNet:
    net = build_net(manifest["config"].get("model", {}))
    state = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    net.load_state_dict(state)
    return net


def _restore_optimizer(net: DeblurNet, optimizer, manifest, tensors) -> None:
    steps = manifest.get("optimizer_steps", {})
    for name, p in net.named_parameters():
        ea = tensors.get(f"opt.{name}.exp_avg")
        eas = tensors.get(f"opt.{name}.exp_avg_sq")
        if ea is None or name not in steps:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(steps[name]),
            "exp_avg": ea.clone(),
            "exp_avg_sq": eas.clone(),
        }


# ---------------------------------------------------------------------------
# Training loop


def _sample_batch(dataset, cfg: TrainConfig, iteration: int):
    """Deterministic function of (seed, iteration): pick sequences, augment,
    and stack into per-time-index batched tensors."""
    rng = np.random.default_rng((cfg.seed, iteration))
    aug_cfg = data_mod.AugmentConfig(
        crop=cfg.patch, flip=cfg.flip, jitter=cfg.jitter, noise_var=cfg.noise_var
    )
    blurry_steps = None
    sharp_steps = None
    for b in range(cfg.batch):
        seq = dataset[int(rng.integers(len(dataset)))]
        if len(seq) < cfg.seq_len:
            raise ValueError(f"sequence shorter than seq_len={cfg.seq_len}")
        start = int(rng.integers(len(seq) - cfg.seq_len + 1))
        sub = data_mod.TrainingSequence(seq.pairs[start : start + cfg.seq_len], seq.video_id)
        aug = data_mod.augment(sub, seed=int(rng.integers(2**31)), config=aug_cfg)
        if blurry_steps is None:
            blurry_steps = [[] for _ in range(cfg.seq_len)]
            sharp_steps = [[] for _ in range(cfg.seq_len)]
        for t, pair in enumerate(aug.pairs):
            blurry_steps[t].append(torch.from_numpy(pair.blurry.transpose(2, 0, 1)))
            sharp_steps[t].append(torch.from_numpy(pair.sharp.transpose(2, 0, 1)))
    blurry = [torch.stack(fs) for fs in blurry_steps]
    sharp = [torch.stack(fs) for fs in sharp_steps]
    return blurry, sharp


def unroll_losses(pipeline: Pipeline, blurry, sharp, tbptt_window: int) -> LossBreakdown:
    """Run the recurrence over one sequence batch and collect all stage losses.
    The carried state is detached every tbptt_window steps, which changes
    gradients only, never forward values."""
    state = RecurrentState()
    p_pairs, d_pairs, a_pairs = [], [], []
    n = len(blurry)
    for t in range(n - 2):
        res = pipeline.step((blurry[t], blurry[t + 1], blurry[t + 2]), state)
        p_t, p_t1, p_t2 = res.preprocessed
        p_pairs += [(p_t, sharp[t]), (p_t1, sharp[t + 1]), (p_t2, sharp[t + 2])]
        d_pairs.append((res.deblurred, sharp[t + 1]))
        a_pairs.append((res.aggregated, sharp[t]))
        state = res.state
        if (t + 1) % tbptt_window == 0:
            state = state.detach()
    return compute_losses(p_pairs, d_pairs, a_pairs)


def _validation_psnr(pipeline: Pipeline, val_clip) -> float:
    from .evaluation import psnr

    blurry, sharp = val_clip
    with torch.no_grad():
        out = pipeline.run_video(blurry)
    vals = [psnr(a.squeeze(0), s.squeeze(0)) for a, s in zip(out.aggregated, sharp)]
    return float(np.mean(vals))


def train(
    dataset,
    cfg: TrainConfig,
    net: DeblurNet,
    backend,
    out_dir: Path | str,
    run_config: dict | None = None,
    resume: Path | str | None = None,
    val_clip=None,
    callback=None,
):
    """Optimize the full model on augmented training sequences.

    Writes periodic checkpoints plus a metrics CSV to out_dir and returns the
    list of logged rows.  ``resume`` restarts from a checkpoint, reproducing
    the unbroken run exactly.
    """
    if not dataset:
        raise ValueError("empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_config = dict(run_config or {})
    run_config.setdefault("train", asdict(cfg))

    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=cfg.betas)
    start_iter = 0
    if resume is not None:
        manifest, tensors = load_checkpoint(resume)
        net.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("opt.")})
        _restore_optimizer(net, optimizer, manifest, tensors)
        start_iter = manifest["iteration"]

    pipeline = Pipeline(net, backend)
    metrics_path = out_dir / "metrics.csv"
    mode = "a" if (resume is not None and metrics_path.exists()) else "w"
    rows = []
    with open(metrics_path, mode, newline="") as mf:
        writer = csv.writer(mf)
        if mode == "w":
            writer.writerow(["iteration", "l_ppn", "l_abdn", "l_fan", "l_total", "lr", "val_psnr"])
        for it in range(start_iter, cfg.max_iters):
            lr = learning_rate_at(cfg, it)
            for group in optimizer.param_groups:
                group["lr"] = lr

            blurry, sharp = _sample_batch(dataset, cfg, it)
            losses = unroll_losses(pipeline, blurry, sharp, cfg.tbptt_window)
            total = losses.l_total
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"training diverged at iteration {it}: l_total={total.item()}"
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            val = ""
            if val_clip is not None and (it + 1) % cfg.val_interval == 0:
                val = f"{_validation_psnr(pipeline, val_clip):.4f}"
            row = [
                it,
                f"{losses.l_ppn.item():.8f}",
                f"{losses.l_abdn.item():.8f}",
                f"{losses.l_fan.item():.8f}",
                f"{total.item():.8f}",
                f"{lr:.10g}",
                val,
            ]
            if (it + 1) % cfg.log_interval == 0 or it == start_iter:
                writer.writerow(row)
                mf.flush()
            rows.append(row)
            if callback is not None:
                callback(it, losses)
            if (it + 1) % cfg.ckpt_interval == 0 or (it + 1) == cfg.max_iters:
                save_checkpoint(
                    out_dir / f"ckpt_{it + 1:07d}.bin", net, run_config, it + 1, optimizer
                )
    save_checkpoint(out_dir / "ckpt_latest.bin", net, run_config, cfg.max_iters, optimizer)
    return rows
