"""Command-line surface: synth, train, deblur, eval, ablate."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import evaluation as eval_mod
from . import flow as flow_mod
from . import training as train_mod
from .config import RunConfig, load_config
from .frames import to_frame, to_tensor
from .pipeline import Pipeline


def _seed_everything(seed: int, deterministic: bool) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _make_backend(cfg: RunConfig) -> flow_mod.FlowBackend:
    return flow_mod.get_backend(cfg.model.flow_backend)


def _model_config_dict(cfg: RunConfig) -> dict:
    return {
        "ppn_channels": cfg.model.ppn_channels,
        "num_nonlocal": cfg.model.num_nonlocal,
        "nonlocal_enabled": cfg.model.nonlocal_enabled,
        "abdn_preset": cfg.model.abdn_preset,
        "abdn_depth": cfg.model.abdn_depth,
        "abdn_width": cfg.model.abdn_width,
        "fan_width": cfg.model.fan_width,
    }


def _load_net(checkpoint: str):
    manifest, tensors = train_mod.load_checkpoint(checkpoint)
    net = train_mod.restore_net(manifest, tensors)
    net.eval()
    return net, manifest


# -- commands ---------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    root = Path(args.out or cfg.data.root)
    rng = np.random.default_rng(cfg.data.seed)
    video_ids = []
    for v in range(cfg.data.toy_videos):
        dx = float(rng.uniform(0.5, 1.5)) * (1 if rng.random() < 0.5 else -1)
        dy = float(rng.uniform(0.0, 1.0))
        motion = cfg.data.toy_motion if cfg.data.toy_videos == 1 else f"translate dx={dx:.2f} dy={dy:.2f}"
        sharp = data_mod.make_toy_sequence(
            seed=cfg.data.seed + 1000 * v,
            length=cfg.data.toy_length * cfg.data.n_accumulate,
            motion_spec=motion,
            height=cfg.data.toy_height,
            width=cfg.data.toy_width,
        )
        seq = data_mod.blur_sharp_pairs_from_sharp(sharp, cfg.data.n_accumulate)
        vid = f"toy{v:03d}"
        data_mod.write_sequence(root, vid, seq)
        video_ids.append(vid)
    data_mod.write_manifest(root, video_ids)
    print(f"wrote {len(video_ids)} videos x {cfg.data.toy_length} frames under {root}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    dataset = data_mod.ingest_directory(args.data or cfg.data.root)
    net = train_mod.build_net(_model_config_dict(cfg))
    backend = _make_backend(cfg)
    run_config = cfg.to_dict()
    run_config["model"] = _model_config_dict(cfg)
    rows = train_mod.train(
        dataset,
        cfg.train,
        net,
        backend,
        out_dir=args.out,
        run_config=run_config,
        resume=args.resume,
    )
    print(f"trained {len(rows)} iterations; checkpoints in {args.out}")
    return 0


def cmd_deblur(cfg: RunConfig, args) -> int:
    net, manifest = _load_net(args.checkpoint)
    backend = _make_backend(cfg)
    pipeline = Pipeline(net, backend, slot_companion=cfg.model.slot_companion)
    seqs = data_mod.ingest_directory(args.input)
    out_root = Path(args.out)
    for seq in seqs:
        blurry = [to_tensor(p.blurry).unsqueeze(0) for p in seq.pairs]
        with torch.no_grad():
            result = pipeline.run_video(blurry, keep_intermediates=args.dump_intermediates)
        vid_dir = out_root / seq.video_id
        vid_dir.mkdir(parents=True, exist_ok=True)
        for i, a in enumerate(result.aggregated):
            data_mod.save_frame(vid_dir / f"{i:05d}.png", np.clip(to_frame(a), 0, 1))
        if args.dump_intermediates:
            dbg = vid_dir / "intermediates"
            dbg.mkdir(exist_ok=True)
            for i, p in enumerate(result.preprocessed):
                if p is not None:
                    data_mod.save_frame(dbg / f"ppn_{i:05d}.png", np.clip(to_frame(p), 0, 1))
            for i, d in enumerate(result.deblurred):
                if d is not None:
                    data_mod.save_frame(dbg / f"abdn_{i:05d}.png", np.clip(to_frame(d), 0, 1))
            for i, rms in enumerate(result.reliability):
                if rms is None:
                    continue
                for name, rm in (
                    ("prev", rms.rm_prev), ("center", rms.rm_center), ("next", rms.rm_next)
                ):
                    gray = np.clip(to_frame(rm.expand(-1, 3, -1, -1)), 0, 1)
                    data_mod.save_frame(dbg / f"rm_{name}_{i:05d}.png", gray)
        print(f"{seq.video_id}: wrote {len(result.aggregated)} frames")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    net, manifest = _load_net(args.checkpoint)
    backend = _make_backend(cfg)
    dataset = data_mod.ingest_directory(args.data or cfg.eval.dataset or cfg.data.root)
    report = eval_mod.evaluate(
        net,
        backend,
        dataset,
        mode="full",
        quantize=cfg.eval.quantize,
        config_fingerprint=cfg.fingerprint(),
    )
    out = Path(args.out or cfg.eval.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "eval_full.csv")
    print(f"overall mean PSNR {report.overall_mean:.3f} dB ({len(report.per_frame)} frames)")
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    net, manifest = _load_net(args.checkpoint)
    backend = _make_backend(cfg)
    dataset = data_mod.ingest_directory(args.data or cfg.eval.dataset or cfg.data.root)
    modes = [m.strip() for m in (args.modes or cfg.eval.modes).split(",") if m.strip()]
    out = Path(args.out or cfg.eval.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = eval_mod.ablate(
        net, backend, dataset, modes, out_dir=out, config_fingerprint=cfg.fingerprint()
    )
    for mode, rep in reports.items():
        print(f"{mode}: {rep.overall_mean:.3f} dB")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videodeblur")
    parser.add_argument("--config", help="INI run configuration")
    parser.add_argument("--seed", type=int, help="override RNG seed")
    parser.add_argument("--deterministic", action="store_true")
    parser.add_argument("--device", default="cpu", help="torch device (cpu)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic toy dataset")
    p.add_argument("--out", help="dataset root (default from config)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the full model")
    p.add_argument("--data", help="dataset root")
    p.add_argument("--out", required=True, help="checkpoint/metrics directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("deblur", help="restore a blurry PNG sequence")
    p.add_argument("checkpoint")
    p.add_argument("input", help="video directory (or dataset root)")
    p.add_argument("out")
    p.add_argument("--dump-intermediates", action="store_true")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", help="PSNR report over a dataset")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="evaluate module/occlusion ablations")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--modes", help="comma-separated ablation modes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.train.seed = args.seed
            cfg.data.seed = args.seed
        _seed_everything(cfg.train.seed, args.deterministic)
        return args.func(cfg, args)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError, data_mod.IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
