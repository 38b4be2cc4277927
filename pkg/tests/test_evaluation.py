import json
import re
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointattn.dataset import Dataset, SyntheticConfig, generate_synthetic, prepare
from jointattn.evaluation import (
    THRESHOLDS,
    FoldError,
    FoldReport,
    RunReport,
    ablation_attention_loss,
    ablation_no_attention,
    attention_statistics,
    fold_rngs,
    fold_splits,
    loocv,
    summarize,
    threshold_counts,
)
from jointattn.model import ModelConfig
from jointattn.report import (
    BOXPLOT,
    REPORT_NAME,
    THRESHOLD_TABLE,
    ReportError,
    boxplot_svg,
    emit_reports,
    read_run_report,
)
from jointattn.training import LossWeights, TrainConfig, class_weights

SMALL = ModelConfig(n_joints=5, channels=(4, 6))
FAST = TrainConfig(epochs=3, seed=1)


@pytest.fixture(scope="module")
def small_set():
    cfg = SyntheticConfig(n_joints=5, n_frames=16, n_normal=4, n_abnormal=2, discriminative_joint=3)
    return prepare(generate_synthetic(cfg, 0), target_frames=16)


@pytest.fixture(scope="module")
def small_run(small_set):
    return loocv(small_set, FAST, LossWeights(), model_cfg=SMALL)


def fold(k, attention, label=0, pred=0):
    return FoldReport(k, f"s{k}", label, pred, [0.5, 0.5], list(attention), None, [1.0, 1.0], [], {})


class TestProtocol:
    @pytest.mark.parametrize("n", [2, 5, 12])
    def test_partition(self, n):
        splits = fold_splits(n)
        held = [k for _, k in splits]
        assert sorted(held) == list(range(n))
        for train_idx, k in splits:
            assert k not in train_idx and sorted(train_idx + [k]) == list(range(n))

    def test_fold_count_and_order(self, small_run, small_set):
        assert [f.fold_index for f in small_run.folds] == list(range(small_set.n))
        assert [f.held_out_id for f in small_run.folds] == list(small_set.ids)

    def test_no_leakage(self, small_run, small_set):
        for f in small_run.folds:
            assert f.held_out_id not in f.train_ids
            train = small_set.subset([i for i in range(small_set.n) if i != f.fold_index])
            assert list(train.ids) == f.train_ids
            np.testing.assert_array_equal(f.class_weights, class_weights(train.n, train.class_counts))

    def test_held_out_sample_does_not_affect_its_training(self, small_set):
        # swapping the held-out trajectory leaves the trained fold untouched
        other = generate_synthetic(SyntheticConfig(n_joints=5, n_frames=16, n_normal=4, n_abnormal=2, discriminative_joint=3), 9)
        other = prepare(other, target_frames=16)
        swapped = Dataset(tuple(small_set.samples[:-1]) + (replace(other.samples[-1], id=small_set.samples[-1].id),))
        from jointattn.evaluation import run_fold

        a = run_fold(small_set, small_set.n - 1, FAST, LossWeights(), SMALL)
        b = run_fold(swapped, small_set.n - 1, FAST, LossWeights(), SMALL)
        assert a.final_loss == b.final_loss and a.train_attention_mean == b.train_attention_mean

    def test_fold_rngs_independent_and_reproducible(self):
        a = fold_rngs(3, 0)[0].random(4)
        assert np.array_equal(a, fold_rngs(3, 0)[0].random(4))
        assert not np.array_equal(a, fold_rngs(3, 1)[0].random(4))
        assert not np.array_equal(a, fold_rngs(4, 0)[0].random(4))
        assert not np.array_equal(a, fold_rngs(3, 0)[1].random(4))

    def test_single_class_split(self, small_set):
        one = small_set.subset([0, 1, 2, 4])  # three normal, one abnormal
        with pytest.raises(FoldError, match="single class"):
            loocv(one, FAST, model_cfg=SMALL)

    def test_too_few_samples(self, small_set):
        with pytest.raises(FoldError):
            loocv(small_set.subset([0]), FAST, model_cfg=SMALL)

    def test_parallel_matches_serial(self, small_set, small_run):
        par = loocv(small_set, FAST, LossWeights(), model_cfg=SMALL, jobs=2)
        assert json.dumps(par.to_dict(), sort_keys=True) == json.dumps(small_run.to_dict(), sort_keys=True)

    def test_zero_epochs_report(self, small_set):
        rep = loocv(small_set, replace(FAST, epochs=0), model_cfg=SMALL)
        assert all(v is None for f in rep.folds for v in f.final_loss.values())


class TestThresholds:
    def test_counts_example(self):
        A = np.array([[0.55, 0.95, 1.0], [0.4, 0.65, 1.0 - 1e-12]])
        # fold 1: >=.5:3 >=.6:2 >=.7:2 >=.8:2 >=.9:2 =1:1 ; fold 2: 2 2 1 1 1 1
        assert threshold_counts(A) == [2.5, 2.0, 1.5, 1.5, 1.5, 1.0]

    def test_saturation_tolerance(self):
        assert threshold_counts(np.array([[1.0 - 2e-9]]), [1.0]) == [0.0]
        assert threshold_counts(np.array([[1.0 - 5e-10]]), [1.0]) == [1.0]

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), folds=st.integers(1, 6), J=st.integers(1, 10))
    def test_monotone_and_bounded(self, seed, folds, J):
        rng = np.random.default_rng(seed)
        A = rng.uniform(size=(folds, J)) ** rng.uniform(0.2, 3)
        counts = threshold_counts(A)
        assert all(0 <= c <= J for c in counts)
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_statistics_example(self):
        A = np.array([[0.1, 0.9], [0.3, 0.5], [0.2, 0.7]])
        stats = attention_statistics(A, ["a", "b"])
        assert stats["thresholds"] == list(THRESHOLDS)
        assert stats["average_attention"] == pytest.approx(2.7 / 6, abs=1e-15)
        a, b = stats["per_joint"]
        assert (a["joint"], a["min"], a["median"], a["max"]) == ("a", 0.1, 0.2, 0.3)
        assert (b["q1"], b["median"], b["q3"]) == (pytest.approx(0.6), 0.7, pytest.approx(0.8))


class TestReports:
    def test_accuracy_counts(self, small_run):
        assert small_run.accuracy == sum(f.correct for f in small_run.folds) / len(small_run.folds)

    def test_attention_reported_for_held_out(self, small_run, small_set):
        for f in small_run.folds:
            assert len(f.attention) == 5 and len(f.train_attention_mean) == 5
            assert all(0 < a < 1 for a in f.attention)

    def test_two_joint_svg_and_csv(self, tmp_path):
        rep = summarize([fold(0, [0.2, 0.95]), fold(1, [0.6, 1.0])], ["hip", "knee"], {})
        emit_reports(rep, tmp_path)
        svg = (tmp_path / BOXPLOT).read_text()
        assert len(re.findall(r'class="box"', svg)) == 2
        assert len(re.findall(r'class="median"', svg)) == 2
        rows = (tmp_path / THRESHOLD_TABLE).read_text().splitlines()
        assert rows[0] == "threshold,avg_joints_at_or_above"
        # recount: fold 0 -> {.5:1 .6:1 .7:1 .8:1 .9:1 1:0}, fold 1 -> {2 2 1 1 1 1}
        got = [float(r.split(",")[1]) for r in rows[1:7]]
        assert got == [1.5, 1.5, 1.0, 1.0, 1.0, 0.5]
        assert (tmp_path / "fold_0_attention.csv").read_text() == "joint,attention\nhip,0.2\nknee,0.95\n"

    def test_svg_geometry_in_unit_range(self):
        svg = boxplot_svg([{"joint": "j", "min": 0.0, "q1": 0.25, "median": 0.5, "q3": 0.75, "max": 1.0}], height=320)
        box = re.search(r'class="box" x="[\d.]+" y="([\d.]+)" width="[\d.]+" height="([\d.]+)"', svg)
        top, h = float(box.group(1)), float(box.group(2))
        # plot area spans y 16..224; the IQR covers half of it
        assert top == pytest.approx(16 + 0.25 * 208) and h == pytest.approx(0.5 * 208)

    def test_empty_report_writes_nothing(self, tmp_path):
        rep = RunReport([], ["a"], {}, 0.0, None)
        with pytest.raises(ReportError):
            emit_reports(rep, tmp_path / "out")
        assert not (tmp_path / "out").exists()

    def test_unwritable_target_names_path(self, tmp_path):
        (tmp_path / "file").write_text("x")
        rep = summarize([fold(0, [0.2])], ["a"], {})
        with pytest.raises(ReportError, match="file"):
            emit_reports(rep, tmp_path / "file")

    def test_json_roundtrip(self, small_run, tmp_path):
        emit_reports(small_run, tmp_path)
        back = read_run_report(tmp_path / REPORT_NAME)
        assert back == small_run

    def test_reemit_is_identical(self, small_run, tmp_path):
        emit_reports(small_run, tmp_path / "a")
        emit_reports(read_run_report(tmp_path / "a" / REPORT_NAME), tmp_path / "b")
        for name in (REPORT_NAME, THRESHOLD_TABLE, BOXPLOT, "fold_0_attention.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_byte_identical_under_fixed_seed(self, small_set, small_run, tmp_path):
        again = loocv(small_set, FAST, LossWeights(), model_cfg=SMALL)
        emit_reports(small_run, tmp_path / "a")
        emit_reports(again, tmp_path / "b")
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_bad_json(self, tmp_path):
        (tmp_path / "r.json").write_text("{")
        with pytest.raises(ReportError, match="r.json"):
            read_run_report(tmp_path / "r.json")


class TestAblations:
    def test_gamma_zero_both_arms_identical(self, small_set):
        a, b = ablation_attention_loss(small_set, FAST, LossWeights(), gamma=0.0)
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)

    def test_arms_differ_only_in_gamma(self, small_set):
        a, b = ablation_attention_loss(small_set, FAST, LossWeights(), gamma=0.0005)
        assert a.config["gamma"] == 0.0 and b.config["gamma"] == 0.0005
        assert {k: v for k, v in a.config.items() if k != "gamma"} == {k: v for k, v in b.config.items() if k != "gamma"}

    def test_no_attention_report(self, small_set):
        rep = ablation_no_attention(small_set, FAST)
        assert rep.attention_stats is None
        assert all(f.attention is None for f in rep.folds)
        assert rep.config["attention"] is False
