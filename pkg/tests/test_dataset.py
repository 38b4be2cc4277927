from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointattn.dataset import (
    PRESETS,
    Dataset,
    DatasetError,
    MotionSample,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    normalize_spine,
    prepare,
    read_sample,
    resample_frames,
    save_dataset,
    write_sample,
)
from jointattn.tensor import Tensor


def make_sample(pos, names=None, spine=0, label=0, sid="s"):
    pos = np.asarray(pos, dtype=float)
    names = names or tuple(["spine"] + [f"j{i}" for i in range(1, pos.shape[2])])
    return MotionSample(Tensor(pos), tuple(names), spine, label, sid)


def displacement_variance(positions, joint):
    """Total variance of the frame-to-frame displacement of one joint."""
    step = np.diff(positions[:, :, joint], axis=0)
    return float(np.var(step, axis=0).sum())


def threshold_separates(dataset, joint):
    v = [displacement_variance(s.positions.data, joint) for s in dataset.samples]
    normal = [x for x, s in zip(v, dataset.samples) if s.label == 0]
    abnormal = [x for x, s in zip(v, dataset.samples) if s.label == 1]
    return max(normal) < min(abnormal)


def write_manifest(tmp_path, entries):
    (tmp_path / "manifest.txt").write_text("\n".join(entries) + "\n")
    return tmp_path / "manifest.txt"


class TestNormalize:
    def test_single_frame(self):
        pos = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 4.0]])[None]
        out = normalize_spine(make_sample(pos)).positions.data
        np.testing.assert_array_equal(out[0, :, 0], [0, 0, 0])
        np.testing.assert_array_equal(out[0, :, 1], [0, 0, 1])

    def test_idempotent(self):
        s = make_sample(np.random.default_rng(0).normal(size=(20, 3, 5)))
        once = normalize_spine(s)
        np.testing.assert_array_equal(normalize_spine(once).positions.data, once.positions.data)

    def test_random_frames(self):
        pos = np.random.default_rng(1).normal(size=(100, 3, 6))
        out = normalize_spine(make_sample(pos, spine=2, names=("a", "b", "spine", "c", "d", "e"))).positions.data
        assert np.all(out[:, :, 2] == 0.0)
        for t in range(100):
            for i in range(6):
                for j in range(6):
                    want = pos[t, :, i] - pos[t, :, j]
                    np.testing.assert_allclose(out[t, :, i] - out[t, :, j], want, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), frames=st.integers(1, 12), joints=st.integers(2, 7))
    def test_property_spine_zero_and_differences_kept(self, seed, frames, joints):
        rng = np.random.default_rng(seed)
        pos = rng.normal(scale=2.0, size=(frames, 3, joints))
        spine = int(rng.integers(joints))
        names = tuple(f"j{i}" for i in range(joints))
        out = normalize_spine(make_sample(pos, names=names, spine=spine)).positions.data
        assert np.all(out[:, :, spine] == 0.0)
        np.testing.assert_allclose(out[:, :, :, None] - out[:, :, None, :], pos[:, :, :, None] - pos[:, :, None, :], atol=1e-12)


class TestResample:
    def test_midpoint(self):
        pos = np.zeros((2, 3, 2))
        pos[1, 0, 1] = 10.0
        out = resample_frames(make_sample(pos), 3).positions.data
        np.testing.assert_array_equal(out[:, 0, 1], [0.0, 5.0, 10.0])

    def test_identity(self):
        s = make_sample(np.random.default_rng(2).normal(size=(9, 3, 2)))
        np.testing.assert_array_equal(resample_frames(s, 9).positions.data, s.positions.data)

    @pytest.mark.parametrize("target", [2, 3, 17, 50, 233])
    def test_linear_signal_stays_linear(self, target):
        T = 40
        slope = np.random.default_rng(3).normal(size=(3, 4))
        pos = np.arange(T)[:, None, None] * slope[None] + 1.5
        out = resample_frames(make_sample(pos), target).positions.data
        times = np.linspace(0, T - 1, target)
        np.testing.assert_allclose(out, times[:, None, None] * slope[None] + 1.5, atol=1e-12)

    def test_endpoints_exact(self):
        pos = np.random.default_rng(4).normal(size=(13, 3, 3))
        out = resample_frames(make_sample(pos), 31).positions.data
        np.testing.assert_array_equal(out[0], pos[0])
        np.testing.assert_array_equal(out[-1], pos[-1])

    def test_envelope(self):
        pos = np.random.default_rng(5).normal(size=(25, 3, 3))
        out = resample_frames(make_sample(pos), 71).positions.data
        assert np.all(out.min(axis=0) >= pos.min(axis=0) - 1e-12)
        assert np.all(out.max(axis=0) <= pos.max(axis=0) + 1e-12)

    def test_bad_target(self):
        with pytest.raises(ValueError):
            resample_frames(make_sample(np.zeros((4, 3, 2))), 1)


class TestSchema:
    def test_duplicate_names(self):
        with pytest.raises(DatasetError):
            make_sample(np.zeros((2, 3, 2)), names=("a", "a"))

    def test_empty_dataset(self):
        with pytest.raises(DatasetError, match="no samples"):
            Dataset(())

    def test_mismatched_joints(self):
        a = make_sample(np.zeros((2, 3, 2)), names=("spine", "x"), sid="first")
        b = make_sample(np.zeros((2, 3, 2)), names=("spine", "y"), sid="second")
        with pytest.raises(DatasetError, match="first.*second"):
            Dataset((a, b))


class TestFileFormat:
    def test_roundtrip_bit_exact(self, tmp_path):
        ds = generate_synthetic(replace(PRESETS["separable"], n_frames=20), seed=3)
        manifest = save_dataset(ds, tmp_path / "a")
        first = load_dataset(tmp_path / "a", manifest)
        manifest2 = save_dataset(first, tmp_path / "b")
        second = load_dataset(tmp_path / "b", manifest2)
        for s1, s2 in zip(first.samples, second.samples):
            assert np.array_equal(s1.positions.data, s2.positions.data)
            assert s1.joint_names == s2.joint_names and s1.label == s2.label
        assert (tmp_path / "a" / "normal_00.txt").read_text() == (tmp_path / "b" / "normal_00.txt").read_text()

    def test_layout(self, tmp_path):
        pos = np.arange(12, dtype=float).reshape(2, 3, 2)
        write_sample(make_sample(pos, names=("spine", "hand")), tmp_path / "s.txt")
        lines = (tmp_path / "s.txt").read_text().splitlines()
        assert lines[0] == "#joints spine hand"
        assert lines[1] == "#spine 0"
        # joint-major per frame: x0 y0 z0 x1 y1 z1
        assert lines[2].split() == ["0", "2", "4", "1", "3", "5"]

    def test_twelve_samples_eight_four(self, tmp_path):
        ds = generate_synthetic(replace(PRESETS["separable"], n_frames=10), seed=0)
        manifest = save_dataset(ds, tmp_path)
        loaded = load_dataset(tmp_path, manifest)
        assert loaded.n == 12
        assert loaded.class_counts == (8, 4)

    def test_comments_and_blank_lines(self, tmp_path):
        write_sample(make_sample(np.zeros((3, 3, 2))), tmp_path / "a.txt")
        manifest = write_manifest(tmp_path, ["# header", "", "a.txt normal  # trailing"])
        assert load_dataset(tmp_path, manifest).n == 1

    def test_empty_manifest(self, tmp_path):
        manifest = write_manifest(tmp_path, ["# nothing"])
        with pytest.raises(DatasetError, match="no samples"):
            load_dataset(tmp_path, manifest)

    def test_unknown_label(self, tmp_path):
        write_sample(make_sample(np.zeros((3, 3, 2))), tmp_path / "a.txt")
        manifest = write_manifest(tmp_path, ["a.txt sick"])
        with pytest.raises(DatasetError, match=r"manifest.txt:1.*sick"):
            load_dataset(tmp_path, manifest)

    def test_missing_file(self, tmp_path):
        manifest = write_manifest(tmp_path, ["nope.txt normal"])
        with pytest.raises(DatasetError, match="nope.txt"):
            load_dataset(tmp_path, manifest)

    def test_malformed_record(self, tmp_path):
        (tmp_path / "a.txt").write_text("#joints spine x\n1 2 3 4 5 6\n1 2 3\n")
        manifest = write_manifest(tmp_path, ["a.txt normal"])
        with pytest.raises(DatasetError, match=r"a.txt:3"):
            load_dataset(tmp_path, manifest)

    def test_non_numeric(self, tmp_path):
        (tmp_path / "a.txt").write_text("#joints spine x\n1 2 3 4 five 6\n")
        with pytest.raises(DatasetError, match=r"a.txt:2"):
            read_sample(tmp_path / "a.txt", 0)

    def test_inconsistent_joint_names(self, tmp_path):
        write_sample(make_sample(np.zeros((3, 3, 2)), names=("spine", "x"), sid="a"), tmp_path / "a.txt")
        write_sample(make_sample(np.zeros((3, 3, 2)), names=("spine", "y"), sid="b"), tmp_path / "b.txt")
        manifest = write_manifest(tmp_path, ["a.txt normal", "b.txt abnormal"])
        with pytest.raises(DatasetError, match="'a'.*'b'"):
            load_dataset(tmp_path, manifest)

    def test_spine_by_name(self, tmp_path):
        (tmp_path / "a.txt").write_text("#joints hip spine\n1 2 3 4 5 6\n")
        assert read_sample(tmp_path / "a.txt", 0).spine_index == 1

    def test_manifest_spine_index_overrides(self, tmp_path):
        (tmp_path / "a.txt").write_text("#joints hip spine\n#spine 1\n1 2 3 4 5 6\n")
        manifest = write_manifest(tmp_path, ["a.txt abnormal 0"])
        s = load_dataset(tmp_path, manifest).samples[0]
        assert s.spine_index == 0 and s.label == 1

    def test_no_spine(self, tmp_path):
        (tmp_path / "a.txt").write_text("#joints hip knee\n1 2 3 4 5 6\n")
        with pytest.raises(DatasetError, match="spine"):
            read_sample(tmp_path / "a.txt", 0)


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(seed=1)
        b = generate_synthetic(seed=1)
        for s, t in zip(a.samples, b.samples):
            assert s.positions.data.tobytes() == t.positions.data.tobytes()

    def test_shape_and_counts(self):
        ds = generate_synthetic(seed=0)
        assert ds.n == 12 and ds.class_counts == (8, 4)
        assert ds.samples[0].positions.shape == (200, 3, 16)

    def test_zero_class_size(self):
        with pytest.raises(ValueError):
            generate_synthetic(SyntheticConfig(n_abnormal=0))

    def test_null_preset_has_no_signal(self):
        # with separation 0 the label does not enter the generating process:
        # swapping labels and regenerating gives identical trajectories
        cfg = PRESETS["null"]
        a = generate_synthetic(cfg, seed=4)
        b = generate_synthetic(replace(cfg, n_normal=12, n_abnormal=1), seed=4)
        for s, t in zip(a.samples, b.samples):
            assert np.array_equal(s.positions.data, t.positions.data)

    @pytest.mark.parametrize("mode", ["amplitude", "frequency"])
    @pytest.mark.parametrize("seed", range(10))
    def test_separable_by_variance_threshold(self, seed, mode):
        cfg = replace(PRESETS["separable"], mode=mode)
        ds = prepare(generate_synthetic(cfg, seed=seed))
        assert threshold_separates(ds, cfg.discriminative_joint)

    def test_other_joints_do_not_separate(self):
        cfg = PRESETS["separable"]
        ds = prepare(generate_synthetic(cfg, seed=0))
        hits = [j for j in range(1, 16) if j != cfg.discriminative_joint and threshold_separates(ds, j)]
        assert len(hits) <= 1

    def test_prepare_centers_spine(self):
        ds = prepare(generate_synthetic(seed=2), target_frames=50)
        for s in ds.samples:
            assert s.frames == 50
            assert np.all(s.positions.data[:, :, s.spine_index] == 0.0)
