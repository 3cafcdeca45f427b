"""Synthetic-blur data generation, augmentation, and dataset ingestion.

Frames here are numpy arrays (H, W, 3), float32 in [0, 1].  Blurry frames are
synthesized by averaging runs of consecutive sharp frames from a fast
"virtual shutter" sequence, which gives exact ground truth for every blurry
frame.

Disk layout: ``<root>/<video_id>/{blur,sharp}/NNNNN.png`` with zero-padded
5-digit indices, plus a ``manifest.txt`` listing one video_id per line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "SharpSequence",
    "BlurSharpPair",
    "TrainingSequence",
    "AugmentConfig",
    "IngestError",
    "synthesize_blur",
    "make_toy_sequence",
    "blur_sharp_pairs_from_sharp",
    "augment",
    "write_sequence",
    "write_manifest",
    "read_manifest",
    "ingest_video_dir",
    "ingest_directory",
    "load_frame",
    "save_frame",
]


Frame = np.ndarray  # (H, W, 3) float32 in [0, 1]


@dataclass
class SharpSequence:
    frames: list[Frame]
    fps_tag: int = 0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("sequence needs at least one frame")
        h, w, _ = self.frames[0].shape
        for f in self.frames:
            if f.shape != (h, w, 3):
                raise ValueError("all frames must share the same shape")


@dataclass
class BlurSharpPair:
    blurry: Frame
    sharp: Frame

    def __post_init__(self):
        if self.blurry.shape != self.sharp.shape:
            raise ValueError("blurry/sharp shapes differ")


@dataclass
class TrainingSequence:
    pairs: list[BlurSharpPair]
    video_id: str = ""

    def __post_init__(self):
        if len(self.pairs) < 3:
            raise ValueError("training sequence needs at least 3 frames")

    def __len__(self):
        return len(self.pairs)

    @property
    def blurry(self) -> list[Frame]:
        return [p.blurry for p in self.pairs]

    @property
    def sharp(self) -> list[Frame]:
        return [p.sharp for p in self.pairs]


def synthesize_blur(sharp_window: list[Frame], n_accumulate: int) -> Frame:
    """Average n_accumulate consecutive sharp frames into one blurry frame."""
    if n_accumulate < 1:
        raise ValueError("n_accumulate must be >= 1")
    if len(sharp_window) != n_accumulate:
        raise ValueError(
            f"window length {len(sharp_window)} != n_accumulate {n_accumulate}"
        )
    shape = sharp_window[0].shape
    for f in sharp_window:
        if f.shape != shape:
            raise ValueError("frames in window have mismatched shapes")
    acc = np.zeros(shape, dtype=np.float64)
    for f in sharp_window:
        acc += f
    return np.clip(acc / n_accumulate, 0.0, 1.0).astype(np.float32)


_MOTION_RE = re.compile(r"(\w+)=(-?\d+(?:\.\d+)?)")


def _parse_motion_spec(motion_spec: str) -> tuple[str, dict[str, float]]:
    parts = motion_spec.split()
    if not parts:
        raise ValueError("empty motion spec")
    kind = parts[0]
    kwargs = {m.group(1): float(m.group(2)) for m in map(_MOTION_RE.fullmatch, parts[1:]) if m}
    return kind, kwargs


def _smooth_texture(rng: np.random.Generator, h: int, w: int, scale: int = 4) -> np.ndarray:
    """Band-limited random RGB texture, values well inside [0, 1]."""
    coarse = rng.random((h // scale + 2, w // scale + 2, 3))
    # bilinear upsample of the coarse grid
    ys = np.linspace(0, coarse.shape[0] - 1.001, h)
    xs = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    tex = (
        coarse[y0][:, x0] * (1 - fy) * (1 - fx)
        + coarse[y0][:, x0 + 1] * (1 - fy) * fx
        + coarse[y0 + 1][:, x0] * fy * (1 - fx)
        + coarse[y0 + 1][:, x0 + 1] * fy * fx
    )
    return (0.15 + 0.7 * tex).astype(np.float32)


def _sample_bilinear(tex: np.ndarray, ox: float, oy: float, h: int, w: int) -> np.ndarray:
    """Crop an (h, w) window from tex at sub-pixel offset (ox, oy)."""
    x0 = int(np.floor(ox))
    y0 = int(np.floor(oy))
    fx = ox - x0
    fy = oy - y0
    win = tex[y0 : y0 + h + 1, x0 : x0 + w + 1]
    out = (
        win[:h, :w] * (1 - fy) * (1 - fx)
        + win[:h, 1 : w + 1] * (1 - fy) * fx
        + win[1 : h + 1, :w] * fy * (1 - fx)
        + win[1 : h + 1, 1 : w + 1] * fy * fx
    )
    return out.astype(np.float32)


def make_toy_sequence(
    seed: int,
    length: int,
    motion_spec: str = "translate dx=1 dy=0.5",
    height: int = 64,
    width: int = 64,
) -> SharpSequence:
    """Render a deterministic sequence of a textured scene under global motion.

    Motion specs: ``static``, ``translate [dx=..] [dy=..]``,
    ``oscillate [dx=..] [dy=..] [period=..]``.  Translation supports
    sub-pixel steps; for integer dx/dy, frame k equals frame 0 shifted by
    k*(dx, dy) on interior pixels.
    """
    if length < 3:
        raise ValueError("length must be >= 3")
    kind, kwargs = _parse_motion_spec(motion_spec)
    rng = np.random.default_rng(seed)

    if kind == "static":
        dx = dy = 0.0
    elif kind in ("translate", "oscillate"):
        dx = kwargs.get("dx", 1.0)
        dy = kwargs.get("dy", 0.5)
    else:
        raise ValueError(f"unknown motion spec kind {kind!r}")
    period = kwargs.get("period", 12.0)

    margin = int(np.ceil(max(abs(dx), abs(dy)) * length)) + 4
    tex = _smooth_texture(rng, height + 2 * margin, width + 2 * margin, scale=3)
    # a few high-contrast textured blocks make flow estimation well posed
    detail = np.random.default_rng(seed + 1)
    for _ in range(6):
        bh = 6 + int(detail.random() * 10)
        bw = 6 + int(detail.random() * 10)
        by = int(detail.random() * (tex.shape[0] - bh))
        bx = int(detail.random() * (tex.shape[1] - bw))
        patch = detail.random((bh, bw, 3))
        tex[by : by + bh, bx : bx + bw] = (0.1 + 0.8 * patch).astype(np.float32)

    frames = []
    for k in range(length):
        if kind == "oscillate":
            phase = np.sin(2 * np.pi * k / period) * period / (2 * np.pi)
            ox = margin + dx * phase
            oy = margin + dy * phase
        else:
            ox = margin + dx * k
            oy = margin + dy * k
        frames.append(np.clip(_sample_bilinear(tex, ox, oy, height, width), 0.0, 1.0))
    return SharpSequence(frames=frames, fps_tag=240)


def blur_sharp_pairs_from_sharp(
    seq: SharpSequence, n_accumulate: int = 7, stride: int | None = None
) -> TrainingSequence:
    """Turn a fast sharp sequence into blurry/sharp pairs by window averaging.

    Each output pair averages a window of n_accumulate frames and takes the
    window's middle frame as ground truth.  Stride defaults to n_accumulate
    (non-overlapping exposures).
    """
    if stride is None:
        stride = n_accumulate
    pairs = []
    i = 0
    while i + n_accumulate <= len(seq.frames):
        window = seq.frames[i : i + n_accumulate]
        pairs.append(
            BlurSharpPair(
                blurry=synthesize_blur(window, n_accumulate),
                sharp=window[n_accumulate // 2].copy(),
            )
        )
        i += stride
    return TrainingSequence(pairs=pairs)


@dataclass
class AugmentConfig:
    crop: int | None = 256
    flip: bool = True
    jitter: bool = True
    noise_var: float = 0.01
    jitter_gain: tuple[float, float] = (0.9, 1.1)
    jitter_bias: tuple[float, float] = (-0.05, 0.05)


def augment(seq: TrainingSequence, seed: int, config: AugmentConfig | None = None) -> TrainingSequence:
    """Sequence-consistent augmentation: one random crop/flip/jitter drawn per
    sequence and applied to every frame; Gaussian noise (variance
    config.noise_var) added to blurry frames only, then clamped to [0, 1].
    """
    cfg = config or AugmentConfig()
    rng = np.random.default_rng(seed)
    h, w, _ = seq.pairs[0].blurry.shape

    if cfg.crop is not None:
        if cfg.crop > h or cfg.crop > w:
            raise ValueError(f"crop {cfg.crop} larger than frame {h}x{w}")
        cy = int(rng.integers(0, h - cfg.crop + 1))
        cx = int(rng.integers(0, w - cfg.crop + 1))
    flip_h = cfg.flip and rng.random() < 0.5
    flip_v = cfg.flip and rng.random() < 0.5
    if cfg.jitter:
        gain = rng.uniform(*cfg.jitter_gain, size=3).astype(np.float32)
        bias = rng.uniform(*cfg.jitter_bias, size=3).astype(np.float32)
    else:
        gain = np.ones(3, dtype=np.float32)
        bias = np.zeros(3, dtype=np.float32)
    noise_std = float(np.sqrt(cfg.noise_var))

    def spatial(frame: Frame) -> Frame:
        out = frame
        if cfg.crop is not None:
            out = out[cy : cy + cfg.crop, cx : cx + cfg.crop]
        if flip_h:
            out = out[:, ::-1]
        if flip_v:
            out = out[::-1, :]
        return np.clip(out * gain + bias, 0.0, 1.0).astype(np.float32)

    pairs = []
    for p in seq.pairs:
        blurry = spatial(p.blurry)
        if noise_std > 0:
            blurry = blurry + rng.normal(0.0, noise_std, blurry.shape).astype(np.float32)
            blurry = np.clip(blurry, 0.0, 1.0)
        pairs.append(BlurSharpPair(blurry=np.ascontiguousarray(blurry), sharp=np.ascontiguousarray(spatial(p.sharp))))
    return TrainingSequence(pairs=pairs, video_id=seq.video_id)


# ---------------------------------------------------------------------------
# PNG I/O


class IngestError(RuntimeError):
    pass


def save_frame(path: Path | str, frame: Frame) -> None:
    arr = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_frame(path: Path | str) -> Frame:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise IngestError(f"unreadable image {path}: {exc}") from exc
    return arr / 255.0


def write_sequence(root: Path | str, video_id: str, seq: TrainingSequence) -> None:
    base = Path(root) / video_id
    for sub in ("blur", "sharp"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(seq.pairs):
        save_frame(base / "blur" / f"{i:05d}.png", p.blurry)
        save_frame(base / "sharp" / f"{i:05d}.png", p.sharp)


def write_manifest(root: Path | str, video_ids: list[str]) -> None:
    (Path(root) / "manifest.txt").write_text("".join(v + "\n" for v in video_ids))


def read_manifest(root: Path | str) -> list[str]:
    path = Path(root) / "manifest.txt"
    if not path.exists():
        raise IngestError(f"missing manifest: {path}")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def ingest_video_dir(video_dir: Path | str, video_id: str = "") -> TrainingSequence:
    """Load one video's parallel blur/ and sharp/ PNG trees, validating pairing."""
    base = Path(video_dir)
    blur_dir = base / "blur"
    sharp_dir = base / "sharp"
    if not blur_dir.is_dir() or not sharp_dir.is_dir():
        raise IngestError(f"{base} lacks blur/ and sharp/ subdirectories")
    blur_files = sorted(blur_dir.glob("*.png"))
    if not blur_files:
        raise IngestError(f"no PNG frames in {blur_dir}")
    pairs = []
    for bf in blur_files:
        sf = sharp_dir / bf.name
        if not sf.exists():
            raise IngestError(f"missing sharp counterpart for {bf}")
        pairs.append(BlurSharpPair(blurry=load_frame(bf), sharp=load_frame(sf)))
    extra = {p.name for p in sharp_dir.glob("*.png")} - {p.name for p in blur_files}
    if extra:
        raise IngestError(f"sharp frames without blur counterpart in {base}: {sorted(extra)[0]}")
    return TrainingSequence(pairs=pairs, video_id=video_id or base.name)


def ingest_directory(path: Path | str) -> list[TrainingSequence]:
    """Ingest either a single video directory or a dataset root with a manifest."""
    base = Path(path)
    if (base / "blur").is_dir():
        return [ingest_video_dir(base)]
    if (base / "manifest.txt").exists():
        ids = read_manifest(base)
    else:
        ids = sorted(p.name for p in base.iterdir() if (p / "blur").is_dir())
        if not ids:
            raise IngestError(f"no video directories found under {base}")
    return [ingest_video_dir(base / vid, vid) for vid in ids]
