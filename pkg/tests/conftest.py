import numpy as np
import pytest
import torch

from videodeblur import data
from videodeblur.frames import to_tensor


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)


def textured_tensor(seed: int, h: int = 32, w: int = 32) -> torch.Tensor:
    """A smooth random RGB frame (3, h, w) with values inside (0, 1)."""
    seq = data.make_toy_sequence(seed, 3, "static", h, w)
    return to_tensor(seq.frames[0])


@pytest.fixture
def textured():
    return textured_tensor


def toy_blur_dataset(seed=0, n_videos=1, length=20, size=32, n_accumulate=7, motion="translate dx=1.2 dy=0.6"):
    seqs = []
    for v in range(n_videos):
        sharp = data.make_toy_sequence(
            seed + 100 * v, length * n_accumulate, motion, size, size
        )
        seq = data.blur_sharp_pairs_from_sharp(sharp, n_accumulate)
        seq.video_id = f"toy{v:03d}"
        seqs.append(seq)
    return seqs
