import numpy as np
import pytest

from videodeblur import data


class TestSynthesizeBlur:
    def test_identical_frames_unchanged(self):
        f = np.full((8, 8, 3), 0.4, np.float32)
        out = data.synthesize_blur([f] * 5, 5)
        np.testing.assert_allclose(out, f)

    def test_black_white_average(self):
        black = np.zeros((8, 8, 3), np.float32)
        white = np.ones((8, 8, 3), np.float32)
        out = data.synthesize_blur([black, white], 2)
        np.testing.assert_allclose(out, 0.5)

    def test_matches_per_pixel_mean_oracle(self):
        seq = data.make_toy_sequence(0, 7, "translate dx=1 dy=0", 24, 24)
        out = data.synthesize_blur(seq.frames, 7)
        want = sum(f.astype(np.float64) for f in seq.frames) / 7
        np.testing.assert_allclose(out, want, atol=1e-6)

    def test_convex_combination(self):
        seq = data.make_toy_sequence(1, 5, "translate dx=2 dy=1", 24, 24)
        out = data.synthesize_blur(seq.frames, 5)
        lo = np.min(seq.frames, axis=0)
        hi = np.max(seq.frames, axis=0)
        assert (out >= lo - 1e-6).all() and (out <= hi + 1e-6).all()

    def test_errors(self):
        f = np.zeros((8, 8, 3), np.float32)
        with pytest.raises(ValueError):
            data.synthesize_blur([], 0)
        with pytest.raises(ValueError):
            data.synthesize_blur([f, f], 3)
        with pytest.raises(ValueError):
            data.synthesize_blur([f, np.zeros((9, 8, 3), np.float32)], 2)


class TestMakeToySequence:
    def test_deterministic(self):
        a = data.make_toy_sequence(0, 20, "translate")
        b = data.make_toy_sequence(0, 20, "translate")
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa, fb)

    def test_static_all_identical(self):
        seq = data.make_toy_sequence(2, 6, "static")
        for f in seq.frames[1:]:
            np.testing.assert_array_equal(f, seq.frames[0])

    def test_integer_translation_is_exact_shift(self):
        seq = data.make_toy_sequence(3, 5, "translate dx=2 dy=0", 40, 40)
        for k in range(1, 5):
            np.testing.assert_array_equal(
                seq.frames[k][:, : 40 - 2 * k], seq.frames[0][:, 2 * k :]
            )

    def test_values_in_range(self):
        seq = data.make_toy_sequence(4, 8, "oscillate dx=1.5 dy=0.5")
        for f in seq.frames:
            assert f.min() >= 0.0 and f.max() <= 1.0

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            data.make_toy_sequence(0, 2, "static")

    def test_unknown_motion_rejected(self):
        with pytest.raises(ValueError):
            data.make_toy_sequence(0, 5, "teleport")


def _toy_training_sequence(seed=0, length=6, size=48):
    sharp = data.make_toy_sequence(seed, length * 3, "translate dx=1 dy=0.5", size, size)
    return data.blur_sharp_pairs_from_sharp(sharp, 3)


class TestAugment:
    def test_identity_configuration(self):
        seq = _toy_training_sequence()
        cfg = data.AugmentConfig(crop=None, flip=False, jitter=False, noise_var=0.0)
        out = data.augment(seq, seed=0, config=cfg)
        for a, b in zip(out.pairs, seq.pairs):
            np.testing.assert_array_equal(a.blurry, b.blurry)
            np.testing.assert_array_equal(a.sharp, b.sharp)

    def test_same_seed_same_output(self):
        seq = _toy_training_sequence()
        cfg = data.AugmentConfig(crop=32)
        a = data.augment(seq, seed=5, config=cfg)
        b = data.augment(seq, seed=5, config=cfg)
        for pa, pb in zip(a.pairs, b.pairs):
            np.testing.assert_array_equal(pa.blurry, pb.blurry)

    def test_noise_variance_near_nominal(self):
        frame = np.full((256, 256, 3), 0.5, np.float32)
        seq = data.TrainingSequence(
            [data.BlurSharpPair(blurry=frame.copy(), sharp=frame.copy()) for _ in range(3)]
        )
        cfg = data.AugmentConfig(crop=None, flip=False, jitter=False, noise_var=0.01)
        out = data.augment(seq, seed=3, config=cfg)
        diff = out.pairs[0].blurry - frame
        assert 0.008 <= diff.var() <= 0.012

    def test_noise_only_on_blurry(self):
        seq = _toy_training_sequence()
        cfg = data.AugmentConfig(crop=None, flip=False, jitter=False, noise_var=0.01)
        out = data.augment(seq, seed=1, config=cfg)
        np.testing.assert_array_equal(out.pairs[0].sharp, seq.pairs[0].sharp)
        assert not np.array_equal(out.pairs[0].blurry, seq.pairs[0].blurry)

    def test_blur_sharp_correspondence_preserved(self):
        # crop/flip applied with shared parameters: the same source pixel ends
        # up at the same output location in both frames of each pair
        seq = _toy_training_sequence()
        marked = data.TrainingSequence(
            [
                data.BlurSharpPair(blurry=p.blurry.copy(), sharp=p.blurry.copy())
                for p in seq.pairs
            ]
        )
        cfg = data.AugmentConfig(crop=24, flip=True, jitter=True, noise_var=0.0)
        out = data.augment(marked, seed=9, config=cfg)
        for p in out.pairs:
            np.testing.assert_array_equal(p.blurry, p.sharp)

    def test_oversized_crop_rejected(self):
        seq = _toy_training_sequence(size=32)
        with pytest.raises(ValueError):
            data.augment(seq, 0, data.AugmentConfig(crop=64))


class TestIngest:
    def test_round_trip_within_quantization(self, tmp_path):
        seq = _toy_training_sequence(length=4)
        data.write_sequence(tmp_path, "vid000", seq)
        back = data.ingest_video_dir(tmp_path / "vid000")
        assert len(back) == len(seq)
        for a, b in zip(back.pairs, seq.pairs):
            assert np.abs(a.blurry - b.blurry).max() <= 1 / 255
            assert np.abs(a.sharp - b.sharp).max() <= 1 / 255

    def test_count(self, tmp_path):
        seq = _toy_training_sequence(length=20 // 3 + 1)
        data.write_sequence(tmp_path, "v", seq)
        seqs = data.ingest_directory(tmp_path / "v")
        assert len(seqs) == 1 and len(seqs[0]) == len(seq)

    def test_missing_sharp_frame_named_in_error(self, tmp_path):
        seq = _toy_training_sequence(length=4)
        data.write_sequence(tmp_path, "v", seq)
        victim = tmp_path / "v" / "sharp" / "00002.png"
        victim.unlink()
        with pytest.raises(data.IngestError, match="00002.png"):
            data.ingest_video_dir(tmp_path / "v")

    def test_manifest_round_trip(self, tmp_path):
        for vid in ("a", "b"):
            data.write_sequence(tmp_path, vid, _toy_training_sequence(length=4))
        data.write_manifest(tmp_path, ["a", "b"])
        assert data.read_manifest(tmp_path) == ["a", "b"]
        seqs = data.ingest_directory(tmp_path)
        assert [s.video_id for s in seqs] == ["a", "b"]

    def test_missing_tree_rejected(self, tmp_path):
        with pytest.raises(data.IngestError):
            data.ingest_video_dir(tmp_path)
