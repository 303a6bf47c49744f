"""Synthetic generation, template oracle, augmentation, config parsing, and
the on-disk sample layout.
"""

import numpy as np
import numpy.testing as npt
import pytest

from mmtl.config import ModelConfig, parse_config
from mmtl.data import SyntheticRecipe, augment, \
    generate_synthetic, load_sample_dir, split_sizes, stable_id_hash, \
    template_predict, write_sample_dir
from mmtl.errors import ArgumentError, ConfigError, InputError
from mmtl.serial import dump_joints, dump_tensor, load_joints, load_tensor
from mmtl.tensor import Tensor

TOY = ModelConfig(frame_count=4, channels=24, height=3, width=3, view_height=12,
                  view_width=12, state_dim=2, block_depth=1, joint_count=6)


class TestSerialization:
    def test_tensor_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        t = Tensor(rng.normal(size=(3, 4, 5)))
        dump_tensor(t, tmp_path / "x.t3tn")
        back = load_tensor(tmp_path / "x.t3tn")
        assert back.shape == (3, 4, 5)
        assert np.abs(back.data - t.data).max() < 1e-6    # f32 narrowing

    def test_tensor_magic_checked(self, tmp_path):
        (tmp_path / "bad.t3tn").write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(InputError, match="magic"):
            load_tensor(tmp_path / "bad.t3tn")

    def test_joints_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        j = rng.random((4, 6, 3))
        dump_joints(j, tmp_path / "j.t3jt")
        back = load_joints(tmp_path / "j.t3jt")
        assert back.shape == (4, 6, 3)
        assert np.abs(back - j).max() < 1e-6

    def test_joints_header_mismatch(self, tmp_path):
        import struct
        payload = b"T3JT" + struct.pack("<II", 2, 3) + b"\x00" * 4
        (tmp_path / "short.t3jt").write_bytes(payload)
        with pytest.raises(InputError, match="payload"):
            load_joints(tmp_path / "short.t3jt")


class TestGenerator:
    def test_deterministic_bit_exact(self):
        rec = SyntheticRecipe(noise=0.1)
        a = list(generate_synthetic(rec, 3, 42, TOY))
        b = list(generate_synthetic(rec, 3, 42, TOY))
        for s1, s2 in zip(a, b):
            assert s1.labels == s2.labels
            for v1, v2 in zip(s1.exterior + s1.interior, s2.exterior + s2.interior):
                assert np.array_equal(v1.frames, v2.frames)
            assert np.array_equal(s1.joints.joints, s2.joints.joints)

    def test_noiseless_template_oracle_is_perfect(self):
        rec = SyntheticRecipe(noise=0.0)
        samples = list(generate_synthetic(rec, 48, 3, TOY))
        for task in ("der", "dbr", "tcr", "vbr"):
            hits = [template_predict(s, rec, task, TOY) == s.labels[task]
                    for s in samples]
            assert all(hits), f"{task}: template oracle missed"

    def test_noisy_template_oracle_above_95(self):
        rec = SyntheticRecipe(noise=0.1)
        samples = list(generate_synthetic(rec, 512, 4, TOY))
        for task in ("der", "dbr", "tcr", "vbr"):
            acc = np.mean([template_predict(s, rec, task, TOY) == s.labels[task]
                           for s in samples])
            assert acc > 0.95, f"{task}: {acc}"

    def test_labels_balanced(self):
        rec = SyntheticRecipe(noise=0.0)
        samples = list(generate_synthetic(rec, 64, 5, TOY))
        for task in ("der", "dbr", "tcr", "vbr"):
            counts = np.bincount([s.labels[task] for s in samples], minlength=4)
            npt.assert_array_equal(counts, 16)

    def test_pixels_in_unit_range(self):
        rec = SyntheticRecipe(noise=0.3)
        for s in generate_synthetic(rec, 4, 6, TOY):
            for v in s.exterior + s.interior:
                assert v.frames.min() >= 0.0 and v.frames.max() <= 1.0
            assert s.joints.joints.min() >= 0.0 and s.joints.joints.max() <= 1.0

    def test_invalid_count(self):
        with pytest.raises(ArgumentError):
            next(generate_synthetic(SyntheticRecipe(), 0, 0, TOY))

    def test_recipe_must_cover_modalities(self):
        with pytest.raises(ArgumentError):
            SyntheticRecipe(designated={"der": "joints", "dbr": "joints",
                                        "tcr": "joints", "vbr": "joints"})


class TestAugment:
    def _sample(self):
        rec = SyntheticRecipe(noise=0.05)
        return next(iter(generate_synthetic(rec, 1, 9, TOY)))

    def _find_seed(self, want_h, want_v):
        for seed in range(200):
            rng = np.random.default_rng([seed, 0xF11B])
            h = rng.random() < 0.5
            v = rng.random() < 0.5
            if h == want_h and v == want_v:
                return seed
        raise AssertionError("no seed found")

    def test_no_flip_is_identity(self):
        s = self._sample()
        seed = self._find_seed(False, False)
        out = augment(s, seed)
        for v1, v2 in zip(s.exterior + s.interior, out.exterior + out.interior):
            assert np.array_equal(v1.frames, v2.frames)
        assert np.array_equal(s.joints.joints, out.joints.joints)

    def test_double_flip_is_identity(self):
        s = self._sample()
        seed = self._find_seed(True, True)
        twice = augment(augment(s, seed), seed)
        for v1, v2 in zip(s.exterior + s.interior, twice.exterior + twice.interior):
            npt.assert_allclose(v1.frames, v2.frames, atol=1e-12)
        npt.assert_allclose(s.joints.joints, twice.joints.joints, atol=1e-12)

    def test_horizontal_flip_mirrors_joint_x(self):
        s = self._sample()
        seed = self._find_seed(True, False)
        out = augment(s, seed)
        npt.assert_allclose(out.joints.joints[:, :, 0],
                            1.0 - s.joints.joints[:, :, 0], atol=1e-12)
        npt.assert_allclose(out.joints.joints[:, :, 1],
                            s.joints.joints[:, :, 1], atol=1e-12)
        front = s.view("front").frames
        npt.assert_array_equal(out.view("front").frames, front[:, :, :, ::-1])

    def test_labels_never_change(self):
        s = self._sample()
        for seed in range(8):
            assert augment(s, seed).labels == s.labels

    def test_flip_consistent_across_views_and_joints(self):
        # the planted pattern moves with the joints: flipping twice along h
        # returns the template-oracle prediction to its original value
        rec = SyntheticRecipe(noise=0.0)
        s = next(iter(generate_synthetic(rec, 1, 10, TOY)))
        seed = self._find_seed(True, False)
        flipped = augment(s, seed)
        for task in ("der", "dbr", "tcr", "vbr"):
            assert template_predict(augment(flipped, seed), rec, task, TOY) == \
                template_predict(s, rec, task, TOY)


class TestConfig:
    def test_empty_text_gives_defaults(self):
        cfg = parse_config("")
        assert cfg.frame_count == 16
        assert cfg.channels == 192
        assert [cfg.num_classes(t) for t in ("der", "dbr", "tcr", "vbr")] == [4, 4, 4, 4]

    def test_valid_override(self):
        cfg = parse_config("frame_count=8\nchannels=96\n")
        assert cfg.frame_count == 8 and cfg.channels == 96

    def test_divisibility_violation_names_constraint(self):
        with pytest.raises(ConfigError, match="channels"):
            parse_config("channels=100\nframe_count=16\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="not_a_key"):
            parse_config("not_a_key=3\n")

    def test_type_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="frame_count"):
            parse_config("frame_count=abc\n")

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# comment\n\nseed=9   # trailing\n")
        assert cfg.seed == 9

    def test_roundtrip_through_serialization(self):
        cfg = ModelConfig(frame_count=8, channels=96, seed=3, no_mgmi=True,
                          drop_tasks=("der",))
        back = parse_config(cfg.to_text())
        assert back == cfg

    def test_drop_everything_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(drop_tasks=("der", "dbr", "tcr", "vbr"))
        with pytest.raises(ConfigError):
            ModelConfig(drop_modalities=("exterior", "interior", "joints"))


class TestSampleDir:
    def test_empty_directory(self, tmp_path):
        streams = load_sample_dir(tmp_path, config=TOY)
        assert streams.train == [] and streams.val == [] and streams.test == []
        assert streams.skipped == 0

    def test_split_sizes_largest_remainder(self):
        assert split_sizes(20, (0.65, 0.15, 0.20)) == [13, 3, 4]
        assert split_sizes(7, (0.65, 0.15, 0.20)) == [5, 1, 1]
        assert split_sizes(0, (0.65, 0.15, 0.20)) == [0, 0, 0]

    def test_split_fractions_must_sum_to_one(self):
        with pytest.raises(ArgumentError):
            split_sizes(10, (0.5, 0.2, 0.2))

    def test_roundtrip_within_f32(self, tmp_path):
        rec = SyntheticRecipe(noise=0.1)
        bundle = next(iter(generate_synthetic(rec, 1, 12, TOY)))
        write_sample_dir(bundle, tmp_path)
        streams = load_sample_dir(tmp_path, fractions=(1.0, 0.0, 0.0), config=TOY)
        assert len(streams.train) == 1
        back = streams.train[0]
        assert back.labels == bundle.labels
        for vid in ("front", "left", "right", "inside", "face", "body"):
            npt.assert_allclose(back.view(vid).frames, bundle.view(vid).frames,
                                atol=1e-6)
        npt.assert_allclose(back.joints.joints, bundle.joints.joints, atol=1e-6)

    def test_twenty_samples_split_13_3_4(self, tmp_path):
        rec = SyntheticRecipe(noise=0.1)
        for bundle in generate_synthetic(rec, 20, 13, TOY):
            write_sample_dir(bundle, tmp_path)
        streams = load_sample_dir(tmp_path, fractions=(0.65, 0.15, 0.20), config=TOY)
        assert (len(streams.train), len(streams.val), len(streams.test)) == (13, 3, 4)
        assert streams.skipped == 0

    def test_split_assignment_is_stable_hash_based(self, tmp_path):
        rec = SyntheticRecipe(noise=0.1)
        for bundle in generate_synthetic(rec, 12, 14, TOY):
            write_sample_dir(bundle, tmp_path)
        a = load_sample_dir(tmp_path, config=TOY)
        b = load_sample_dir(tmp_path, config=TOY)
        assert [s.sample_id for s in a.train] == [s.sample_id for s in b.train]
        assert [s.sample_id for s in a.train] == \
            sorted([s.sample_id for s in a.train],
                   key=lambda i: (stable_id_hash(i), i))

    def test_missing_modality_skipped_with_warning(self, tmp_path, caplog):
        rec = SyntheticRecipe(noise=0.1)
        bundles = list(generate_synthetic(rec, 3, 15, TOY))
        for b in bundles:
            write_sample_dir(b, tmp_path)
        (tmp_path / bundles[0].sample_id / "joints.t3jt").unlink()
        streams = load_sample_dir(tmp_path, config=TOY)
        assert streams.skipped == 1
        assert len(streams.train) + len(streams.val) + len(streams.test) == 2

    def test_malformed_frame_header_raises_on_direct_load(self, tmp_path):
        (tmp_path / "x.t3tn").write_bytes(b"XXXX")
        with pytest.raises(InputError):
            load_tensor(tmp_path / "x.t3tn")
