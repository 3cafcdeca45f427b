import pytest
import torch

from videodeblur import data
from videodeblur.abdn import ABDN
from videodeblur.fan import FAN
from videodeblur.flow import get_backend
from videodeblur.frames import to_tensor
from videodeblur.pipeline import DeblurNet, Pipeline, RecurrentState
from videodeblur.ppn import PPN


def small_net(seed=0):
    torch.manual_seed(seed)
    return DeblurNet(
        ppn=PPN(channels=8, num_nonlocal=1),
        abdn=ABDN(width=8, depth=2),
        fan=FAN(width=8),
    )


def toy_video(seed=0, length=6, size=32, motion="translate dx=1 dy=0.5"):
    seq = data.make_toy_sequence(seed, length, motion, size, size)
    return [to_tensor(f).unsqueeze(0) for f in seq.frames]


class TestStep:
    def test_identity_networks_pass_frames_through(self):
        net = small_net()
        net.zero_residual_outputs()
        pipe = Pipeline(net, get_backend("zero"))
        frames = toy_video(0, 3, motion="static")
        res = pipe.step((frames[0], frames[1], frames[2]), RecurrentState())
        assert torch.allclose(res.aggregated, frames[0], atol=1e-4)

    def test_deterministic(self):
        net = small_net(1)
        pipe = Pipeline(net, get_backend("builtin-pyramid"))
        frames = toy_video(1, 3)
        a = pipe.step((frames[0], frames[1], frames[2]), RecurrentState())
        b = pipe.step((frames[0], frames[1], frames[2]), RecurrentState())
        assert torch.equal(a.aggregated, b.aggregated)
        assert torch.equal(a.deblurred, b.deblurred)

    def test_state_carries_expected_slots(self):
        net = small_net(2)
        pipe = Pipeline(net, get_backend("zero"))
        frames = toy_video(2, 4)
        res = pipe.step((frames[0], frames[1], frames[2]), RecurrentState())
        assert torch.equal(res.state.prev_preprocessed, res.preprocessed[2])
        assert torch.equal(res.state.prev_deblurred, res.deblurred)
        assert torch.equal(res.state.prev_aggregated, res.aggregated)

    def test_mismatched_window_rejected(self):
        pipe = Pipeline(small_net(), get_backend("zero"))
        with pytest.raises(ValueError):
            pipe.step(
                (torch.zeros(1, 3, 32, 32), torch.zeros(1, 3, 32, 32), torch.zeros(1, 3, 16, 16)),
                RecurrentState(),
            )

    def test_inconsistent_state_rejected(self):
        pipe = Pipeline(small_net(), get_backend("zero"))
        frames = toy_video(0, 3)
        bad = RecurrentState(prev_deblurred=torch.zeros(1, 3, 16, 16))
        with pytest.raises(ValueError):
            pipe.step((frames[0], frames[1], frames[2]), bad)


class TestRunVideo:
    def test_output_count_matches_input_count(self):
        pipe = Pipeline(small_net(3), get_backend("zero"))
        for n in (3, 5, 10):
            out = pipe.run_video(toy_video(0, n))
            assert len(out.aggregated) == n

    def test_too_short_video_rejected(self):
        pipe = Pipeline(small_net(), get_backend("zero"))
        with pytest.raises(ValueError):
            pipe.run_video(toy_video(0, 3)[:2])

    def test_rerun_is_stateless(self):
        pipe = Pipeline(small_net(4), get_backend("builtin-pyramid"))
        frames = toy_video(4, 5)
        a = pipe.run_video(frames)
        b = pipe.run_video(frames)
        for x, y in zip(a.aggregated, b.aggregated):
            assert torch.equal(x, y)

    def test_causality_with_one_step_lookahead(self):
        pipe = Pipeline(small_net(5), get_backend("builtin-pyramid"))
        frames = toy_video(5, 7)
        base = pipe.run_video(frames)
        for t_perturb in (4, 5):
            frames2 = [f.clone() for f in frames]
            frames2[t_perturb] += 0.05
            frames2[t_perturb].clamp_(0, 1)
            out = pipe.run_video(frames2)
            # A_t depends on frames up to t+2 only
            for t in range(t_perturb - 2):
                assert torch.equal(out.aggregated[t], base.aggregated[t])
            assert not torch.equal(out.aggregated[t_perturb - 2], base.aggregated[t_perturb - 2])

    def test_identity_pipeline_on_static_video(self):
        net = small_net(6)
        net.zero_residual_outputs()
        pipe = Pipeline(net, get_backend("zero"))
        frames = toy_video(6, 6, motion="static")
        out = pipe.run_video(frames)
        for a, b in zip(out.aggregated, frames):
            assert (a - b).abs().max() <= 1e-4

    def test_intermediates_cover_every_frame(self):
        pipe = Pipeline(small_net(7), get_backend("zero"))
        out = pipe.run_video(toy_video(7, 6), keep_intermediates=True)
        assert all(p is not None for p in out.preprocessed)
        assert all(d is not None for d in out.deblurred)

    def test_stage_outputs(self):
        pipe = Pipeline(small_net(8), get_backend("zero"))
        frames = toy_video(8, 5)
        for stage in ("ppn", "abdn", "fan"):
            outs = pipe.run_video_stage(frames, stage)
            assert len(outs) == len(frames)
        with pytest.raises(ValueError):
            pipe.run_video_stage(frames, "psnr")


class TestAblationToggles:
    def test_no_occlusion_in_abdn_uses_raw_warp(self):
        # with all-ones occlusion the revised frames equal the raw warped
        # frames, so both pipelines agree when nothing is occluded
        net = small_net(9)
        frames = toy_video(9, 4, motion="static")
        a = Pipeline(net, get_backend("zero")).run_video(frames)
        b = Pipeline(net, get_backend("zero"), use_occ_abdn=False).run_video(frames)
        for x, y in zip(a.aggregated, b.aggregated):
            assert torch.allclose(x, y, atol=1e-6)

    def test_skip_ppn_changes_output(self):
        net = small_net(10)
        frames = toy_video(10, 4)
        a = Pipeline(net, get_backend("zero")).run_video(frames)
        b = Pipeline(net, get_backend("zero"), use_ppn=False).run_video(frames)
        assert not torch.equal(a.aggregated[1], b.aggregated[1])

    def test_slot_companion_toggle(self):
        net = small_net(11)
        frames = toy_video(11, 5)
        a = Pipeline(net, get_backend("zero"), slot_companion="deblurred").run_video(frames)
        b = Pipeline(net, get_backend("zero"), slot_companion="aggregated").run_video(frames)
        assert not torch.equal(a.aggregated[2], b.aggregated[2])
        with pytest.raises(ValueError):
            Pipeline(net, get_backend("zero"), slot_companion="blurry")
