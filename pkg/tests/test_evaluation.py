import math

import numpy as np
import pytest
import torch

from videodeblur import evaluation
from videodeblur.flow import get_backend
from conftest import toy_blur_dataset
from test_pipeline import small_net


class TestPSNR:
    def test_identical_frames_capped(self):
        f = torch.rand(3, 8, 8)
        assert evaluation.psnr(f, f) == 99.0

    def test_uniform_difference_closed_form(self):
        a = torch.full((3, 8, 8), 0.5)
        b = torch.full((3, 8, 8), 0.6)
        assert evaluation.psnr(a, b) == pytest.approx(20.0, abs=1e-4)

    def test_checkerboard_closed_form(self):
        a = torch.full((1, 8, 8), 0.5)
        delta = torch.tensor([[0.2, -0.2] * 4, [-0.2, 0.2] * 4] * 4)
        b = a + delta
        assert evaluation.psnr(a, b) == pytest.approx(10 * math.log10(25), abs=1e-4)

    def test_symmetry_and_channel_permutation(self):
        g = torch.Generator().manual_seed(0)
        a = torch.rand(3, 8, 8, generator=g)
        b = torch.rand(3, 8, 8, generator=g)
        assert evaluation.psnr(a, b) == evaluation.psnr(b, a)
        perm = [2, 0, 1]
        assert evaluation.psnr(a[perm], b[perm]) == pytest.approx(evaluation.psnr(a, b))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            evaluation.psnr(torch.zeros(3, 8, 8), torch.zeros(3, 9, 8))

    def test_quantized_mode(self):
        a = torch.full((3, 4, 4), 0.5)
        b = a + 0.001  # below half a quantization step
        assert evaluation.psnr(a, b, quantize=True) == 99.0


class TestReport:
    def _report(self):
        per_frame = [("a", 0, 30.0), ("a", 1, 32.0), ("b", 0, 20.0)]
        return evaluation.EvalReport(mode="full", per_frame=per_frame)

    def test_overall_mean_weighted_by_frame_count(self):
        rep = self._report()
        means = rep.video_means()
        assert means == {"a": 31.0, "b": 20.0}
        weighted = (means["a"] * 2 + means["b"] * 1) / 3
        assert rep.overall_mean == pytest.approx(weighted)

    def test_csv_reproducible_from_per_frame_rows(self, tmp_path):
        rep = self._report()
        rep.write_csv(tmp_path / "r.csv")
        text = (tmp_path / "r.csv").read_text()
        data_rows = [l for l in text.splitlines() if l and not l.startswith("#")][1:]
        rebuilt = [
            (vid, int(idx), float(val))
            for vid, idx, val in (r.split(",") for r in data_rows)
        ]
        again = evaluation.EvalReport(mode="full", per_frame=rebuilt)
        assert again.overall_mean == pytest.approx(rep.overall_mean)
        rep.write_csv(tmp_path / "r2.csv")
        assert (tmp_path / "r.csv").read_text() == (tmp_path / "r2.csv").read_text()


class TestEvaluate:
    def test_identity_model_matches_blurry_baseline(self):
        net = small_net(0)
        net.zero_residual_outputs()
        # static scene: all aggregation candidates coincide, so the identity
        # pipeline reproduces the blurry input exactly
        dataset = toy_blur_dataset(length=6, motion="static")
        rep = evaluation.evaluate(net, get_backend("zero"), dataset)
        base = evaluation.baseline_report(dataset)
        assert abs(rep.overall_mean - base.overall_mean) <= 0.01

    def test_deterministic(self):
        net = small_net(1)
        dataset = toy_blur_dataset(length=5)
        a = evaluation.evaluate(net, get_backend("builtin-pyramid"), dataset)
        b = evaluation.evaluate(net, get_backend("builtin-pyramid"), dataset)
        assert a.per_frame == b.per_frame


class TestAblate:
    def test_full_mode_equals_evaluate(self):
        net = small_net(2)
        dataset = toy_blur_dataset(length=5)
        rep = evaluation.evaluate(net, get_backend("zero"), dataset, mode="full")
        abl = evaluation.ablate(net, get_backend("zero"), dataset, ["ppn+abdn+fan"])
        assert abl["ppn+abdn+fan"].per_frame == rep.per_frame

    def test_all_modes_run_and_write(self, tmp_path):
        net = small_net(3)
        dataset = toy_blur_dataset(length=5)
        reports = evaluation.ablate(
            net, get_backend("zero"), dataset, list(evaluation.ABLATION_MODES), out_dir=tmp_path
        )
        assert set(reports) == set(evaluation.ABLATION_MODES)
        assert len(list(tmp_path.glob("ablation_*.csv"))) == len(evaluation.ABLATION_MODES)

    def test_nlb_toggle_restored_after_ablation(self):
        net = small_net(4)
        dataset = toy_blur_dataset(length=5)
        evaluation.evaluate(net, get_backend("zero"), dataset, mode="no-nlb")
        assert net.ppn.nonlocal_enabled

    def test_unknown_mode_rejected(self):
        net = small_net(5)
        with pytest.raises(ValueError):
            evaluation.evaluate(net, get_backend("zero"), toy_blur_dataset(length=5), mode="psnr")

    def test_no_occ_fan_differs_only_in_occlusion_inputs(self):
        # with the zero backend nothing is ever occluded, so disabling
        # occlusion maps changes nothing
        net = small_net(6)
        dataset = toy_blur_dataset(length=5)
        a = evaluation.evaluate(net, get_backend("zero"), dataset, mode="full")
        b = evaluation.evaluate(net, get_backend("zero"), dataset, mode="no-occ-fan")
        for (_, _, x), (_, _, y) in zip(a.per_frame, b.per_frame):
            assert x == pytest.approx(y, abs=1e-6)
