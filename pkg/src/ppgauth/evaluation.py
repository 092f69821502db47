"""Subject-independent evaluation: folds, pair scoring, sweeps, grids.

Folds partition subjects (never segments), so test identities are unseen.
Each fold samples balanced positive/negative pairs per condition, scores
them with the calibrated cosine, and records quality confidences so the
pass-rate sweep can re-filter pairs at different quality thresholds.
"""

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .corpus import STATIC_ACTIVITIES
from .errors import ArgumentError, SamplingError
from .metrics import ScoredPairs, auc, eer, far_at_frr
from .model import Mode, ModelConfig, MultiTaskPpgModel
from .seeding import derive_seed, rng_for
from .train import TrainConfig, fine_tune, sample_pairs, stack_segments, switch_train


@dataclass
class EvaluatedPairs:
    """Scored pairs plus the per-side quality confidences needed for gating."""

    scores: np.ndarray
    labels: np.ndarray
    conf_a: np.ndarray
    conf_b: np.ndarray

    def scored(self):
        return ScoredPairs(self.scores, self.labels)


@dataclass
class SweepPoint:
    threshold: float
    pass_rate: float
    auc: float | None
    eer: float | None

    @property
    def defined(self):
        return self.auc is not None


@dataclass
class EvalReport:
    """Fold-level and aggregate metrics plus optional sweep points."""

    fold_rows: list = field(default_factory=list)  # dicts: fold, condition, auc, eer, far
    sweep_points: list = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)
    seed: int = 0

    def aggregate(self, condition):
        rows = [r for r in self.fold_rows if r["condition"] == condition]
        out = {}
        for key in ("auc", "eer", "far"):
            vals = np.array([r[key] for r in rows])
            out[f"{key}_mean"] = float(vals.mean())
            out[f"{key}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        return out

    def conditions(self):
        return sorted({r["condition"] for r in self.fold_rows})


def make_folds(subject_ids, k=5, seed=0):
    """Shuffle subjects by seed and split as evenly as possible into k folds."""
    subjects = sorted(set(subject_ids))
    if len(subjects) < k:
        raise ArgumentError(f"need >= {k} subjects for {k} folds, have {len(subjects)}")
    order = rng_for(seed, "folds").permutation(len(subjects))
    shuffled = [subjects[i] for i in order]
    return [list(part) for part in np.array_split(shuffled, k)]


def score_pairs(model, segments, pairs, confidences=None):
    """Score PairSamples over `segments`; returns EvaluatedPairs."""
    X = stack_segments(segments)
    emb = model.embeddings(X)
    if confidences is None:
        confidences = model.quality_confidences(X)
    a = np.array([p.segment_a for p in pairs])
    b = np.array([p.segment_b for p in pairs])
    scores = model.pair_score(emb[a], emb[b])
    labels = np.array([p.label for p in pairs])
    return EvaluatedPairs(scores, labels, confidences[a], confidences[b])


def evaluate_fold(model, test_segments, n_pairs=1000, seed=0):
    """Static-pair and mixed-pair scoring on one fold's test subjects.

    Returns {"static": EvaluatedPairs, "mixed": EvaluatedPairs,
    "confidences": per-segment quality confidences}.
    """
    X = stack_segments(test_segments)
    confidences = model.quality_confidences(X)
    n_pos = n_pairs - n_pairs // 2
    out = {"confidences": confidences}

    static_idx = [
        i for i, s in enumerate(test_segments) if s.activity in STATIC_ACTIVITIES
    ]
    static_segs = [test_segments[i] for i in static_idx]
    static_pairs = sample_pairs(
        static_segs, n_pos, n_pairs // 2, derive_seed(seed, "static-pairs")
    )
    remap = lambda pairs, idx: [
        type(p)(idx[p.segment_a], idx[p.segment_b], p.label) for p in pairs
    ]
    out["static"] = score_pairs(
        model, test_segments, remap(static_pairs, static_idx), confidences
    )
    mixed_pairs = sample_pairs(
        test_segments, n_pos, n_pairs // 2, derive_seed(seed, "mixed-pairs")
    )
    out["mixed"] = score_pairs(model, test_segments, mixed_pairs, confidences)
    return out


def pass_rate_sweep(evaluated: EvaluatedPairs, thresholds):
    """Metrics on pairs where BOTH segments pass each quality threshold.

    Points where one class vanishes are recorded as undefined rather than
    dropped; output is sorted by descending pass rate.
    """
    if len(thresholds) == 0:
        raise ArgumentError("threshold list must not be empty")
    points = []
    total = evaluated.scores.size
    for tau in thresholds:
        mask = (evaluated.conf_a >= tau) & (evaluated.conf_b >= tau)
        pass_rate = float(mask.sum()) / total
        sub_scores = evaluated.scores[mask]
        sub_labels = evaluated.labels[mask]
        if mask.sum() == 0 or len(set(sub_labels)) < 2:
            points.append(SweepPoint(float(tau), pass_rate, None, None))
            continue
        sp = ScoredPairs(sub_scores, sub_labels)
        points.append(SweepPoint(float(tau), pass_rate, auc(sp), eer(sp)))
    points.sort(key=lambda p: -p.pass_rate)
    return points


def crossval_evaluate(
    segments,
    k=5,
    train_config: TrainConfig = None,
    model_config: ModelConfig = None,
    n_pairs=1000,
    seed=0,
    sweep_thresholds=None,
):
    """Train and evaluate per subject-independent fold; the main harness."""
    train_config = train_config or TrainConfig()
    fold_sets = make_folds([s.subject_id for s in segments], k=k, seed=seed)
    report = EvalReport(seed=seed)
    models = []
    for f, test_subjects in enumerate(fold_sets):
        test_set = set(test_subjects)
        train_segs = [s for s in segments if s.subject_id not in test_set]
        test_segs = [s for s in segments if s.subject_id in test_set]
        # Fresh working labels per fold; training mutates them.
        for s in train_segs:
            s.quality_label = 1 if s.activity in STATIC_ACTIVITIES else 0
        model = MultiTaskPpgModel(
            model_config or ModelConfig(), seed=derive_seed(seed, "model", f)
        )
        model, history = switch_train(model, train_segs, train_config)
        results = evaluate_fold(
            model, test_segs, n_pairs=n_pairs, seed=derive_seed(seed, "eval", f)
        )
        for condition in ("static", "mixed"):
            sp = results[condition].scored()
            report.fold_rows.append(
                {
                    "fold": f,
                    "condition": condition,
                    "auc": auc(sp),
                    "eer": eer(sp),
                    "far": far_at_frr(sp),
                }
            )
        if sweep_thresholds is not None:
            for point in pass_rate_sweep(results["mixed"], sweep_thresholds):
                report.sweep_points.append((f, point))
        models.append((model, history, results))
    return report, models


def _cross_day_pairs(segments, idx_a, idx_b, n_pos, n_neg, seed):
    """Pairs whose sides come from two disjoint segment pools (template/probe)."""
    rng = rng_for(seed, "cross-day")
    subj = np.array([s.subject_id for s in segments])
    pairs = []
    subjects = sorted(set(subj[idx_a]) & set(subj[idx_b]))
    if not subjects:
        raise SamplingError("no subject present in both day pools")
    from .train import PairSample

    for _ in range(n_pos):
        s = subjects[rng.integers(len(subjects))]
        a = [i for i in idx_a if subj[i] == s]
        b = [i for i in idx_b if subj[i] == s]
        pairs.append(PairSample(a[rng.integers(len(a))], b[rng.integers(len(b))], 1))
    if n_neg and len(subjects) < 2:
        raise SamplingError("negative cross-day pairs need >= 2 subjects")
    for _ in range(n_neg):
        sa, sb = rng.choice(len(subjects), size=2, replace=False)
        a = [i for i in idx_a if subj[i] == subjects[sa]]
        b = [i for i in idx_b if subj[i] == subjects[sb]]
        pairs.append(PairSample(a[rng.integers(len(a))], b[rng.integers(len(b))], 0))
    return pairs


def cross_day_eval(
    model,
    segments,
    day_gap,
    do_fine_tune=False,
    k=5,
    n_pairs=500,
    fine_tune_epochs=3,
    seed=0,
):
    """Day-0 templates vs day-gap probes under the usual fold protocol.

    With `do_fine_tune`, a copy of the model is adapted per fold on the
    training subjects' static segments from the target day before scoring.
    """
    fold_sets = make_folds([s.subject_id for s in segments], k=k, seed=seed)
    report = EvalReport(seed=seed, config_echo={"day_gap": day_gap, "fine_tune": do_fine_tune})
    for f, test_subjects in enumerate(fold_sets):
        test_set = set(test_subjects)
        fold_model = model
        if do_fine_tune and day_gap > 0:
            tune_segs = [
                s
                for s in segments
                if s.subject_id not in test_set
                and s.session_day == day_gap
                and s.activity in STATIC_ACTIVITIES
            ]
            fold_model = fine_tune(
                model.copy(),
                tune_segs,
                epochs=fine_tune_epochs,
                seed=derive_seed(seed, "tune", f),
            )
        test_segs = [s for s in segments if s.subject_id in test_set]
        idx_a = [i for i, s in enumerate(test_segs) if s.session_day == 0]
        idx_b = [i for i, s in enumerate(test_segs) if s.session_day == day_gap]
        n_pos = n_pairs - n_pairs // 2
        pairs = _cross_day_pairs(
            test_segs, idx_a, idx_b, n_pos, n_pairs // 2, derive_seed(seed, "pairs", f)
        )
        sp = score_pairs(fold_model, test_segs, pairs).scored()
        report.fold_rows.append(
            {
                "fold": f,
                "condition": f"day{day_gap}",
                "auc": auc(sp),
                "eer": eer(sp),
                "far": far_at_frr(sp),
            }
        )
    return report


ABLATION_AXES = {
    "window": [3.0, 6.0, 10.0, 15.0, 20.0],
    "fs": [30.0, 60.0, 125.0, 250.0],
    "channels": [1, 3],
}


def ablation_grid(
    records,
    axis,
    settings=None,
    train_config: TrainConfig = None,
    k=2,
    n_pairs=500,
    seed=0,
):
    """Re-run preprocess -> train -> evaluate per setting of one axis.

    Returns rows of (setting, auc, eer) with all seeds held fixed, using
    the mixed condition (all pairs) per setting.
    """
    from .dsp import preprocess_all

    if axis not in ABLATION_AXES:
        raise ArgumentError(f"unknown ablation axis {axis!r}")
    settings = settings if settings is not None else ABLATION_AXES[axis]
    train_config = train_config or TrainConfig()
    rows = []
    for setting in settings:
        window_s, fs, channels = 6.0, 60.0, 3
        if axis == "window":
            window_s = float(setting)
        elif axis == "fs":
            fs = float(setting)
        else:
            channels = int(setting)
        segments = preprocess_all(records, target_fs=fs, window_s=window_s)
        if channels != 3:
            for s in segments:
                # Keep raw channel 0 and its differentiated twin.
                s.data = s.data[[0, 3], :]
        model_config = ModelConfig(
            in_channels=2 * channels, input_len=int(round(window_s * fs))
        )
        report, _ = crossval_evaluate(
            segments,
            k=k,
            train_config=train_config,
            model_config=model_config,
            n_pairs=n_pairs,
            seed=seed,
        )
        agg = report.aggregate("mixed")
        rows.append(
            {"setting": setting, "auc": agg["auc_mean"], "eer": agg["eer_mean"]}
        )
    return rows


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()
    ).hexdigest()[:12]


def write_report_csv(path, report: EvalReport):
    """One row per (fold, condition) plus one aggregate row per condition."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["fold", "condition", "auc", "eer", "far_at_frr10"])
        for row in report.fold_rows:
            writer.writerow(
                [row["fold"], row["condition"],
                 f"{row['auc']:.6f}", f"{row['eer']:.6f}", f"{row['far']:.6f}"]
            )
        for condition in report.conditions():
            agg = report.aggregate(condition)
            writer.writerow(
                ["aggregate", condition,
                 f"{agg['auc_mean']:.6f}", f"{agg['eer_mean']:.6f}", f"{agg['far_mean']:.6f}"]
            )


def write_sweep_csv(path, sweep_points):
    """Sweep points as (fold, threshold, pass_rate, auc, eer); NaN if undefined."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["fold", "threshold", "pass_rate", "auc", "eer"])
        for fold, p in sweep_points:
            writer.writerow(
                [
                    fold,
                    f"{p.threshold:.6f}",
                    f"{p.pass_rate:.6f}",
                    f"{p.auc:.6f}" if p.defined else "nan",
                    f"{p.eer:.6f}" if p.defined else "nan",
                ]
            )


def write_grid_csv(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["setting", "auc", "eer"])
        for row in rows:
            writer.writerow([row["setting"], f"{row['auc']:.6f}", f"{row['eer']:.6f}"])
