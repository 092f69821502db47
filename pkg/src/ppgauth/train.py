"""Pair sampling, alternating-mode training, label correction, fine-tuning.

Training alternates identity-pair batches (calibrated-cosine score against
pair labels) and quality batches (confidence against the working quality
labels), both under binary cross-entropy and Adam. Periodically the
identity module's verification success is used to reassign the working
quality labels; a collapse guard keeps at least a minimum fraction of
segments labeled good.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ArgumentError, ConfigurationError, SamplingError
from .model import Mode
from .nn import Adam, bce_loss
from .seeding import derive_seed, rng_for


@dataclass
class PairSample:
    """Two segment indices plus a same-subject (1) / different (0) label."""

    segment_a: int
    segment_b: int
    label: int


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    mode_ratio: float = 1.0  # identity batches per quality batch
    correction_period_epochs: int = 5
    correction_start_epoch: int = 10
    correction_pairs_per_segment: int = 10
    correction_accuracy_threshold: float = 0.7
    min_good_fraction: float = 0.1
    pairs_per_epoch: int = 0  # 0 -> one identity batch per quality batch
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.lr <= 0:
            raise ConfigurationError("epochs, batch_size and lr must be positive")
        if not (0 < self.correction_accuracy_threshold < 1):
            raise ConfigurationError("correction_accuracy_threshold must be in (0,1)")
        if not (0 < self.min_good_fraction < 1):
            raise ConfigurationError("min_good_fraction must be in (0,1)")

    def save(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls(**json.load(f))


def _subject_groups(segments, indices):
    groups = {}
    for i in indices:
        groups.setdefault(segments[i].subject_id, []).append(i)
    return groups


def sample_pairs(segments, n_pos, n_neg, seed, restrict_to_good=False):
    """Uniform positive/negative pairs, spread evenly across subjects.

    Positive pairs never pair a segment with itself. With
    `restrict_to_good`, only segments currently labeled good participate.
    """
    indices = [
        i
        for i, s in enumerate(segments)
        if not restrict_to_good or s.quality_label == 1
    ]
    groups = _subject_groups(segments, indices)
    rng = rng_for(seed, "pairs")
    pairs = []

    if n_pos > 0:
        eligible = sorted(s for s, idxs in groups.items() if len(idxs) >= 2)
        if not eligible:
            raise SamplingError("positive pairs need a subject with >= 2 segments")
        counts = _even_split(n_pos, len(eligible), rng)
        for subject, count in zip(eligible, counts):
            idxs = groups[subject]
            for _ in range(count):
                a, b = rng.choice(len(idxs), size=2, replace=False)
                pairs.append(PairSample(idxs[a], idxs[b], 1))

    if n_neg > 0:
        subjects = sorted(groups)
        if len(subjects) < 2:
            raise SamplingError("negative pairs need >= 2 subjects")
        for _ in range(n_neg):
            sa, sb = rng.choice(len(subjects), size=2, replace=False)
            a = groups[subjects[sa]][rng.integers(len(groups[subjects[sa]]))]
            b = groups[subjects[sb]][rng.integers(len(groups[subjects[sb]]))]
            pairs.append(PairSample(a, b, 0))
    return pairs


def _even_split(total, n_bins, rng):
    base, rem = divmod(total, n_bins)
    counts = np.full(n_bins, base, dtype=int)
    if rem:
        counts[rng.choice(n_bins, size=rem, replace=False)] += 1
    return counts


def _pair_loss(model, X, pairs, training=True):
    a_idx = [p.segment_a for p in pairs]
    b_idx = [p.segment_b for p in pairs]
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    emb_a = model.forward(X[a_idx], Mode.IDENTITY, training=training)
    emb_b = model.forward(X[b_idx], Mode.IDENTITY, training=training)
    scores = model.pair_score_tensor(emb_a, emb_b)
    return bce_loss(scores, labels)


def stack_segments(segments):
    return np.stack([s.data for s in segments])


def switch_train(model, segments, config: TrainConfig):
    """Alternating identity/quality training with periodic label correction.

    Returns (model, history); history rows carry per-epoch mean losses and
    the number of quality labels flipped by correction that epoch.
    """
    if not segments:
        raise ConfigurationError("no segments to train on")
    labels = np.array(
        [1 if s.quality_label == 1 else 0 for s in segments], dtype=int
    )
    if labels.sum() == 0:
        raise ConfigurationError("no segments labeled good at start of training")
    X = stack_segments(segments)
    n = len(segments)
    optimizer = Adam(model.params, lr=config.lr)
    q_names = model.param_names_for_mode(Mode.QUALITY)
    i_names = model.param_names_for_mode(Mode.IDENTITY)
    history = []

    for epoch in range(config.epochs):
        for i, seg in enumerate(segments):
            seg.quality_label = int(labels[i])
        q_order = rng_for(config.seed, "epoch", epoch, "shuffle").permutation(n)
        q_batches = [
            q_order[i : i + config.batch_size]
            for i in range(0, n, config.batch_size)
        ]
        n_id = (
            math.ceil(config.pairs_per_epoch / config.batch_size)
            if config.pairs_per_epoch
            else max(1, round(len(q_batches) * config.mode_ratio))
        )
        n_pairs = n_id * config.batch_size
        try:
            pairs = sample_pairs(
                segments,
                n_pairs - n_pairs // 2,
                n_pairs // 2,
                derive_seed(config.seed, "epoch", epoch, "pairs"),
                restrict_to_good=True,
            )
        except SamplingError:
            # Label correction can concentrate the good set on one subject;
            # fall back to the full pool rather than stalling the identity task.
            pairs = sample_pairs(
                segments,
                n_pairs - n_pairs // 2,
                n_pairs // 2,
                derive_seed(config.seed, "epoch", epoch, "pairs"),
            )
        rng_for(config.seed, "epoch", epoch, "pair-shuffle").shuffle(pairs)
        id_batches = [
            pairs[i : i + config.batch_size]
            for i in range(0, len(pairs), config.batch_size)
        ]

        id_losses, q_losses = [], []
        for b in range(max(len(q_batches), len(id_batches))):
            if b < len(id_batches):
                loss = _pair_loss(model, X, id_batches[b])
                loss.backward()
                optimizer.step(i_names)
                optimizer.zero_grad()
                id_losses.append(float(loss.data))
            if b < len(q_batches):
                batch = q_batches[b]
                conf = model.forward(X[batch], Mode.QUALITY, training=True)
                loss = bce_loss(conf, labels[batch].astype(float).reshape(-1, 1))
                loss.backward()
                optimizer.step(q_names)
                optimizer.zero_grad()
                q_losses.append(float(loss.data))

        flipped = 0
        e1 = epoch + 1
        if (
            e1 >= config.correction_start_epoch
            and (e1 - config.correction_start_epoch) % config.correction_period_epochs == 0
        ):
            labels, flipped = correct_labels(
                model,
                segments,
                config,
                derive_seed(config.seed, "correction", epoch),
                labels=labels,
                data=X,
            )
        history.append(
            {
                "epoch": epoch,
                "identity_loss": float(np.mean(id_losses)),
                "quality_loss": float(np.mean(q_losses)),
                "labels_flipped": int(flipped),
                "good_fraction": float(labels.mean()),
            }
        )

    for i, seg in enumerate(segments):
        seg.quality_label = int(labels[i])
    return model, history


def correct_labels(model, segments, config: TrainConfig, seed, labels=None, data=None):
    """Reassign quality labels from the identity module's verification success.

    Each segment is scored against K sampled pairs (half same-subject, half
    different-subject) drawn from currently-good segments; its label becomes
    good iff the fraction of correctly verified pairs reaches the accuracy
    threshold. If fewer than `min_good_fraction` of segments would stay
    good, the top ceil(min_good_fraction * N) by accuracy are kept instead.
    """
    n = len(segments)
    if labels is None:
        labels = np.array([1 if s.quality_label == 1 else 0 for s in segments], dtype=int)
    if data is None:
        data = stack_segments(segments)
    emb = model.embeddings(data)
    alpha = model.params["score_scale"].data[0]
    beta = model.params["score_bias"].data[0]
    rng = rng_for(seed, "correct")
    k_half = config.correction_pairs_per_segment // 2

    good = np.flatnonzero(labels == 1)
    subj = np.array([s.subject_id for s in segments])
    accuracy = np.zeros(n)
    for i in range(n):
        same = good[(subj[good] == subj[i]) & (good != i)]
        diff = good[subj[good] != subj[i]]
        picks = []
        if same.size:
            picks += [
                (j, 1) for j in rng.choice(same, size=min(k_half, same.size), replace=False)
            ]
        if diff.size:
            picks += [
                (j, 0) for j in rng.choice(diff, size=min(k_half, diff.size), replace=False)
            ]
        if not picks:
            continue
        correct = 0
        for j, is_same in picks:
            score = 1.0 / (1.0 + np.exp(-(alpha * float(emb[i] @ emb[j]) + beta)))
            correct += int((score >= 0.5) == bool(is_same))
        accuracy[i] = correct / len(picks)

    new_labels = (accuracy >= config.correction_accuracy_threshold).astype(int)
    floor = math.ceil(config.min_good_fraction * n)
    if new_labels.sum() < floor:
        order = sorted(range(n), key=lambda i: (-accuracy[i], i))
        new_labels = np.zeros(n, dtype=int)
        new_labels[order[:floor]] = 1
    flipped = int(np.sum(new_labels != labels))
    return new_labels, flipped


def fine_tune(model, day_segments, epochs, lr=1e-4, batch_size=64, seed=0):
    """Identity-mode-only continuation training; quality module stays frozen.

    Batchnorm statistics stay frozen too (forward passes run in eval mode):
    adaptation sets are small and single-condition, and letting them shift
    the running statistics degrades every other input far more than the
    weight updates help.
    """
    if not day_segments:
        raise ArgumentError("fine_tune needs at least one segment")
    if epochs == 0:
        return model
    X = stack_segments(day_segments)
    optimizer = Adam(model.params, lr=lr)
    i_names = model.param_names_for_mode(Mode.IDENTITY)
    n_pairs_per_epoch = max(batch_size, 2 * len(day_segments))
    for epoch in range(epochs):
        pairs = sample_pairs(
            day_segments,
            n_pairs_per_epoch // 2,
            n_pairs_per_epoch // 2,
            derive_seed(seed, "finetune", epoch),
        )
        rng_for(seed, "finetune", epoch, "shuffle").shuffle(pairs)
        for i in range(0, len(pairs), batch_size):
            loss = _pair_loss(model, X, pairs[i : i + batch_size], training=False)
            loss.backward()
            optimizer.step(i_names)
            optimizer.zero_grad()
    return model


def write_history_csv(path, history):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(
            f,
            fieldnames=[
                "epoch", "identity_loss", "quality_loss",
                "labels_flipped", "good_fraction",
            ],
        )
        writer.writeheader()
        writer.writerows(history)
