import copy
import csv

import numpy as np
import pytest

from ppgauth import corpus, dsp, evaluation
from ppgauth.errors import ArgumentError
from ppgauth.evaluation import (
    EvalReport,
    EvaluatedPairs,
    ablation_grid,
    config_hash,
    cross_day_eval,
    crossval_evaluate,
    evaluate_fold,
    make_folds,
    pass_rate_sweep,
    score_pairs,
    write_grid_csv,
    write_report_csv,
    write_sweep_csv,
)
from ppgauth.model import ModelConfig, MultiTaskPpgModel
from ppgauth.train import PairSample, TrainConfig

TINY = ModelConfig(
    in_channels=6, input_len=360, bottleneck_channels=4, path_channels=4,
    identity_kernel=5, identity_dilation=2, se_reduction=4, embed_dim=8,
)


@pytest.fixture(scope="module")
def segments(small_records):
    return dsp.preprocess_all(small_records)


@pytest.fixture(scope="module")
def tiny_model():
    return MultiTaskPpgModel(TINY, seed=1)


class TestMakeFolds:
    def test_partition(self):
        ids = [f"s{i}" for i in range(11)]
        folds = make_folds(ids, k=3, seed=0)
        flat = [s for fold in folds for s in fold]
        assert sorted(flat) == sorted(ids)
        assert len(folds) == 3
        sizes = sorted(len(f) for f in folds)
        assert sizes == [3, 4, 4]

    def test_deterministic_and_seed_sensitive(self):
        ids = [f"s{i}" for i in range(10)]
        assert make_folds(ids, 5, 3) == make_folds(ids, 5, 3)
        assert make_folds(ids, 5, 3) != make_folds(ids, 5, 4)

    def test_too_few_subjects(self):
        with pytest.raises(ArgumentError):
            make_folds(["a", "b"], k=3)


class TestScorePairs:
    def test_shapes_and_gating_data(self, segments, tiny_model):
        pairs = [PairSample(0, 1, 1), PairSample(0, 30, 0)]
        out = score_pairs(tiny_model, segments[:40], pairs)
        assert out.scores.shape == (2,)
        assert np.array_equal(out.labels, [1, 0])
        assert out.conf_a.shape == (2,) and out.conf_b.shape == (2,)
        assert np.all((out.scores > 0) & (out.scores < 1))


class TestEvaluateFold:
    def test_conditions_and_pair_counts(self, segments, tiny_model):
        res = evaluate_fold(tiny_model, segments, n_pairs=60, seed=0)
        assert set(res) == {"confidences", "static", "mixed"}
        assert res["static"].scores.size == 60
        assert res["mixed"].scores.size == 60
        assert res["confidences"].size == len(segments)

    def test_static_pairs_use_only_static_segments(self, segments, tiny_model):
        res = evaluate_fold(tiny_model, segments, n_pairs=40, seed=1)
        # Reconstruct which indices static pairs touched via confidences:
        # every static pair's sides must carry a static activity.
        static_idx = {
            i for i, s in enumerate(segments)
            if s.activity in corpus.STATIC_ACTIVITIES
        }
        conf = res["confidences"]
        static_confs = conf[sorted(static_idx)]
        assert np.all(np.isin(res["static"].conf_a, static_confs))
        assert np.all(np.isin(res["static"].conf_b, static_confs))


class TestPassRateSweep:
    def make_evaluated(self):
        rng = np.random.default_rng(5)
        n = 200
        labels = rng.integers(0, 2, n)
        scores = np.clip(labels * 0.6 + rng.normal(0, 0.3, n), 0, 1)
        conf = rng.uniform(size=(2, n))
        return EvaluatedPairs(scores, labels, conf[0], conf[1])

    def test_pass_rate_non_increasing_in_threshold(self):
        ev = self.make_evaluated()
        taus = [0.0, 0.2, 0.4, 0.6, 0.8, 0.95]
        points = pass_rate_sweep(ev, taus)
        by_tau = sorted(points, key=lambda p: p.threshold)
        rates = [p.pass_rate for p in by_tau]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert by_tau[0].pass_rate == 1.0  # sigmoid confidences are positive

    def test_sorted_by_descending_pass_rate(self):
        points = pass_rate_sweep(self.make_evaluated(), [0.9, 0.1, 0.5])
        rates = [p.pass_rate for p in points]
        assert rates == sorted(rates, reverse=True)

    def test_undefined_points_kept(self):
        ev = EvaluatedPairs(
            np.array([0.9, 0.1]), np.array([1, 0]),
            np.array([0.3, 0.9]), np.array([0.3, 0.9]),
        )
        points = pass_rate_sweep(ev, [0.5])  # only the negative pair survives
        assert len(points) == 1
        assert not points[0].defined
        assert points[0].pass_rate == 0.5

    def test_empty_thresholds_rejected(self):
        with pytest.raises(ArgumentError):
            pass_rate_sweep(self.make_evaluated(), [])


class TestCrossval:
    def test_report_structure(self, segments):
        segs = copy.deepcopy(segments)
        cfg = TrainConfig(epochs=1, batch_size=64, correction_start_epoch=100, seed=0)
        report, models = crossval_evaluate(
            segs, k=2, train_config=cfg, model_config=TINY, n_pairs=60, seed=0,
            sweep_thresholds=[0.0, 0.5],
        )
        assert len(report.fold_rows) == 4  # 2 folds x 2 conditions
        assert report.conditions() == ["mixed", "static"]
        assert len(models) == 2
        assert len(report.sweep_points) == 4  # 2 folds x 2 thresholds
        agg = report.aggregate("static")
        assert 0.0 <= agg["auc_mean"] <= 1.0
        assert agg["auc_sd"] >= 0.0

    def test_folds_are_subject_independent(self, segments):
        folds = make_folds([s.subject_id for s in segments], k=2, seed=0)
        assert not (set(folds[0]) & set(folds[1]))


@pytest.fixture(scope="module")
def day_segments():
    records = corpus.generate_corpus(
        4, 21, activities=("sit",), days=(0, 2), duration_s=60.0,
        day_drift_sigma=1.0,
    )
    return dsp.preprocess_all(records)


class TestCrossDay:

    def test_basic_run(self, day_segments, tiny_model):
        report = cross_day_eval(tiny_model, day_segments, day_gap=2, k=2, n_pairs=40, seed=0)
        assert len(report.fold_rows) == 2
        assert all(r["condition"] == "day2" for r in report.fold_rows)

    def test_fine_tune_path_leaves_input_model_unchanged(self, day_segments, tiny_model):
        before = {n: p.data.copy() for n, p in tiny_model.params.items()}
        cross_day_eval(
            tiny_model, day_segments, day_gap=2, do_fine_tune=True,
            k=2, n_pairs=40, fine_tune_epochs=1, seed=0,
        )
        for name, data in before.items():
            np.testing.assert_array_equal(tiny_model.params[name].data, data)


class TestAblation:
    def test_channels_axis(self, small_records):
        cfg = TrainConfig(epochs=1, batch_size=64, correction_start_epoch=100, seed=0)
        rows = ablation_grid(
            small_records, "channels", settings=[1], train_config=cfg,
            k=2, n_pairs=40, seed=0,
        )
        assert len(rows) == 1
        assert rows[0]["setting"] == 1
        assert 0.0 <= rows[0]["auc"] <= 1.0

    def test_unknown_axis(self, small_records):
        with pytest.raises(ArgumentError):
            ablation_grid(small_records, "dropout")


class TestReportFiles:
    def make_report(self):
        report = EvalReport(seed=3)
        for f in range(2):
            for condition in ("static", "mixed"):
                report.fold_rows.append(
                    {"fold": f, "condition": condition,
                     "auc": 0.9 + f * 0.01, "eer": 0.1, "far": 0.05}
                )
        return report

    def test_report_csv_layout(self, tmp_path):
        path = tmp_path / "report.csv"
        write_report_csv(path, self.make_report())
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["fold", "condition", "auc", "eer", "far_at_frr10"]
        assert len(rows) == 1 + 4 + 2  # header + fold rows + aggregates
        assert rows[-1][0] == "aggregate"

    def test_sweep_csv_nan_for_undefined(self, tmp_path):
        from ppgauth.evaluation import SweepPoint

        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, [(0, SweepPoint(0.5, 0.2, None, None))])
        text = path.read_text()
        assert "nan" in text

    def test_grid_csv(self, tmp_path):
        path = tmp_path / "grid.csv"
        write_grid_csv(path, [{"setting": 6.0, "auc": 0.91, "eer": 0.08}])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "setting,auc,eer"
        assert lines[1].startswith("6.0,")

    def test_config_hash_stable_and_order_free(self):
        a = config_hash({"x": 1, "y": [2, 3]})
        b = config_hash({"y": [2, 3], "x": 1})
        assert a == b and len(a) == 12
        assert config_hash({"x": 2}) != a
