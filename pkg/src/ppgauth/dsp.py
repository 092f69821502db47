"""Preprocessing chain: resample, band-pass, trough detection, segmentation.

The pipeline standardizes every record to a common rate (default 60 Hz),
applies a 4th-order Butterworth band-pass (0.5-10 Hz) forward-backward
for zero phase, and cuts trough-aligned sliding windows (default 6 s with
2 s overlap). Each window carries both the raw filtered channels and
their first differences, each z-score normalized.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .corpus import STATIC_ACTIVITIES, PpgRecord
from .errors import ArgumentError

NORM_EPS = 1e-8


@dataclass
class Segment:
    """One trough-aligned, normalized window; the model's input unit.

    `data` holds C raw filtered channels followed by their C differentiated
    counterparts, shape (2C, L).
    """

    subject_id: str
    session_day: int
    activity: str
    fs_hz: float
    data: np.ndarray
    quality_label: int | None = None
    origin: tuple = ("", 0)
    motion_truth: float | None = None  # mean |m(t)| over the window, synthetic only


def resample(samples, fs_in, fs_out):
    """Linear interpolation onto the uniform grid k/fs_out."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 2:
        raise ArgumentError("resample needs at least 2 samples")
    if fs_in <= 0 or fs_out <= 0:
        raise ArgumentError("sampling rates must be positive")
    duration = (samples.size - 1) / fs_in
    n_out = int(np.floor(duration * fs_out)) + 1
    t_in = np.arange(samples.size) / fs_in
    t_out = np.arange(n_out) / fs_out
    return np.interp(t_out, t_in, samples)


def design_bandpass(fs_hz, low_hz=0.5, high_hz=10.0, order=4):
    """Butterworth band-pass as second-order sections.

    `order` is the overall filter order; the band-pass transform doubles
    the analog low-pass prototype order, so the prototype uses order // 2.
    """
    if not (0 < low_hz < high_hz < fs_hz / 2):
        raise ArgumentError(
            f"need 0 < low ({low_hz}) < high ({high_hz}) < Nyquist ({fs_hz / 2})"
        )
    if order < 2 or order % 2:
        raise ArgumentError("order must be an even integer >= 2")
    return sps.butter(order // 2, [low_hz, high_hz], btype="bandpass", fs=fs_hz, output="sos")


def filter_zero_phase(sos, samples):
    """Forward-backward filtering with reflection edge padding.

    Pad length is 3 * n_sections * 2 samples on each side; output length
    equals input length and the phase response is zero.
    """
    samples = np.asarray(samples, dtype=np.float64)
    sos = np.atleast_2d(sos)
    padlen = 3 * sos.shape[0] * 2
    if samples.size <= padlen:
        raise ArgumentError(f"input too short: need more than {padlen} samples")
    padded = np.pad(samples, padlen, mode="reflect")
    fwd = sps.sosfilt(sos, padded)
    bwd = sps.sosfilt(sos, fwd[::-1])[::-1]
    return bwd[padlen : padlen + samples.size]


def detect_troughs(samples, fs_hz):
    """Indices of pulse troughs (local minima).

    Minima must be separated by at least 0.3 s (caps heart rate at 200 bpm)
    and have prominence >= 0.2 * std of the input; among conflicting
    candidates the deeper one wins, ties broken by the earlier index.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < fs_hz:
        raise ArgumentError("need at least one second of signal")
    neg = -x
    candidates = sps.find_peaks(neg)[0]
    if candidates.size == 0:
        return np.array([], dtype=int)
    with warnings.catch_warnings():
        # Plateau minima can carry zero prominence; they are filtered below.
        warnings.simplefilter("ignore")
        prominence = sps.peak_prominences(neg, candidates)[0]
    min_prom = 0.2 * np.std(x)
    candidates = candidates[prominence >= min_prom]
    if candidates.size == 0:
        return np.array([], dtype=int)

    min_sep = int(0.3 * fs_hz)
    # Greedy by depth (deepest first, earlier index on ties) under the
    # separation constraint.
    order = sorted(candidates, key=lambda i: (x[i], i))
    accepted = []
    for i in order:
        if all(abs(i - j) >= min_sep for j in accepted):
            accepted.append(i)
    return np.array(sorted(accepted), dtype=int)


def _normalize(row):
    return (row - row.mean()) / (row.std() + NORM_EPS)


def segment_record(record: PpgRecord, window_s=6.0, overlap_s=2.0):
    """Trough-aligned sliding windows over an already-preprocessed record.

    The first window starts at the first trough of channel 0; subsequent
    windows advance by window_s - overlap_s. Windows past the record end
    are dropped. Each segment stacks raw and differentiated channels,
    each z-scored.
    """
    if not (window_s > overlap_s >= 0):
        raise ArgumentError("need window_s > overlap_s >= 0")
    fs = record.fs_hz
    length = int(round(window_s * fs))
    stride = int(round((window_s - overlap_s) * fs))
    n = record.n_samples
    if n < max(length, int(fs)):
        return []
    troughs = detect_troughs(record.channels[0], fs)
    start0 = int(troughs[0]) if troughs.size else 0

    segments = []
    for start in range(start0, n - length + 1, stride):
        raw = record.channels[:, start : start + length]
        diff = np.diff(raw, axis=1, prepend=raw[:, :1])
        data = np.vstack(
            [
                [_normalize(row) for row in raw],
                [_normalize(row) for row in diff],
            ]
        )
        motion = None
        if record.ground_truth_motion is not None:
            motion = float(np.mean(record.ground_truth_motion[start : start + length]))
        segments.append(
            Segment(
                subject_id=record.subject_id,
                session_day=record.session_day,
                activity=record.activity,
                fs_hz=fs,
                data=data,
                origin=(record.record_id, start),
                motion_truth=motion,
            )
        )
    return segments


def preprocess(record: PpgRecord, target_fs=60.0, window_s=6.0, overlap_s=2.0):
    """resample -> zero-phase band-pass -> trough-aligned segmentation.

    quality_label is initialized from the activity class: static activities
    (sit/stand/office) start as good (1), everything else as bad (0).
    """
    channels = np.vstack(
        [resample(ch, record.fs_hz, target_fs) for ch in record.channels]
    )
    motion = None
    if record.ground_truth_motion is not None:
        motion = resample(record.ground_truth_motion, record.fs_hz, target_fs)
    sos = design_bandpass(target_fs)
    filtered = np.vstack([filter_zero_phase(sos, ch) for ch in channels])
    resampled = PpgRecord(
        subject_id=record.subject_id,
        session_day=record.session_day,
        activity=record.activity,
        fs_hz=target_fs,
        channels=filtered,
        ground_truth_motion=motion,
    )
    segments = segment_record(resampled, window_s=window_s, overlap_s=overlap_s)
    label = 1 if record.activity in STATIC_ACTIVITIES else 0
    for seg in segments:
        seg.quality_label = label
    return segments


def preprocess_all(records, target_fs=60.0, window_s=6.0, overlap_s=2.0):
    segments = []
    for record in records:
        segments.extend(
            preprocess(record, target_fs=target_fs, window_s=window_s, overlap_s=overlap_s)
        )
    return segments


def save_segments(segments, path):
    """Segments as one wide CSV: metadata columns then flattened data."""
    if not segments:
        raise ArgumentError("no segments to save")
    n_rows, n_cols = segments[0].data.shape
    meta_cols = [
        "subject_id", "session_day", "activity", "fs_hz", "quality_label",
        "origin_record", "origin_start", "motion_truth", "n_channels",
    ]
    with open(path, "w", newline="") as f:
        header = meta_cols + [f"d{i:05d}" for i in range(n_rows * n_cols)]
        f.write(",".join(header) + "\n")
        for s in segments:
            meta = [
                s.subject_id,
                str(s.session_day),
                s.activity,
                f"{s.fs_hz:.17g}",
                "" if s.quality_label is None else str(s.quality_label),
                s.origin[0],
                str(s.origin[1]),
                "" if s.motion_truth is None else f"{s.motion_truth:.17g}",
                str(n_rows),
            ]
            values = [f"{v:.17g}" for v in s.data.ravel()]
            f.write(",".join(meta + values) + "\n")


def load_segments(path):
    import csv as _csv

    segments = []
    with open(path, newline="") as f:
        reader = _csv.reader(f)
        header = next(reader)
        n_meta = 9
        for row in reader:
            n_rows = int(row[8])
            data = np.array(row[n_meta:], dtype=np.float64).reshape(n_rows, -1)
            segments.append(
                Segment(
                    subject_id=row[0],
                    session_day=int(row[1]),
                    activity=row[2],
                    fs_hz=float(row[3]),
                    data=data,
                    quality_label=None if row[4] == "" else int(row[4]),
                    origin=(row[5], int(row[6])),
                    motion_truth=None if row[7] == "" else float(row[7]),
                )
            )
    return segments
