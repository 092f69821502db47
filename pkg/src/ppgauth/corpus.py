"""Synthetic PPG corpus generation and the on-disk dataset format.

The generative model composes, per channel c:

    samples = surface_gain[c] * coupling(m, p)
            + pulsatile_gain[c] * p
            + noise
            + baseline[c]

where p(t) is a subject-specific pulse train, m(t) is activity-dependent
motion, and coupling(m, p) = m * (1 + 0.5 * p) couples motion corruption
to physiological state. All generators are pure functions of their
explicit seed and arguments.

The dataset format is a `manifest.json` index plus one CSV file per
record (columns t, ch0, ch1, ch2 and optionally motion), serialized with
full float64 round-trip precision and SHA-256 checksums.
"""

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ArgumentError,
    ChannelLengthError,
    ChecksumMismatchError,
    DanglingEntryError,
    EmptyInputError,
    MissingManifestError,
    SchemaVersionError,
)
from .seeding import derive_seed, rng_for

DATASET_FORMAT_VERSION = 1

# Motion-state coupling coefficient: strong enough that corrupted windows
# look different from clean ones, weak enough not to dominate m itself.
COUPLING_COEFF = 0.5

# Per-day morphology drift is 2% of each parameter's span per unit of
# day_drift_sigma per day.
DRIFT_BASE_SCALE = 0.02

HR_CLAMP_BPM = (30.0, 220.0)


@dataclass(frozen=True)
class SubjectProfile:
    """Generative parameters for one synthetic subject."""

    subject_id: str
    hr_mean_bpm: float
    hr_jitter_bpm: float
    systolic_phase: float
    systolic_width: float
    dicrotic_phase: float
    dicrotic_amp_ratio: float
    pulsatile_gain: tuple
    baseline: tuple
    surface_gain: tuple
    noise_sigma: float
    day_drift_sigma: float

    def __post_init__(self):
        if not (self.dicrotic_phase > self.systolic_phase):
            raise ArgumentError("dicrotic_phase must exceed systolic_phase")
        for name in ("pulsatile_gain", "surface_gain"):
            if any(g <= 0 for g in getattr(self, name)):
                raise ArgumentError(f"{name} must be strictly positive")
        if self.noise_sigma < 0 or self.day_drift_sigma < 0:
            raise ArgumentError("noise and drift sigmas must be >= 0")


@dataclass(frozen=True)
class ActivitySpec:
    """Motion statistics for one activity class."""

    name: str
    motion_amp: float
    motion_band_hz: tuple
    burst_rate_hz: float

    def __post_init__(self):
        if self.motion_amp < 0 or self.burst_rate_hz < 0:
            raise ArgumentError("motion_amp and burst_rate_hz must be >= 0")
        lo, hi = self.motion_band_hz
        if not (0 < lo < hi):
            raise ArgumentError("motion_band_hz must be an increasing positive pair")


# Static classes (sit/stand/office) keep motion_amp <= 0.1; dynamic classes
# (walk/run/jump) start at >= 0.5 and increase monotonically.
ACTIVITIES = {
    "sit": ActivitySpec("sit", 0.0, (0.1, 0.5), 0.0),
    "stand": ActivitySpec("stand", 0.05, (0.1, 1.0), 0.05),
    "office": ActivitySpec("office", 0.1, (0.5, 3.0), 0.2),
    "walk": ActivitySpec("walk", 0.8, (1.0, 2.5), 0.6),
    "run": ActivitySpec("run", 1.6, (2.0, 4.0), 0.9),
    "jump": ActivitySpec("jump", 2.5, (2.0, 6.0), 1.2),
}

STATIC_ACTIVITIES = frozenset({"sit", "stand", "office"})


@dataclass
class PpgRecord:
    """A continuous 3-channel PPG recording with metadata."""

    subject_id: str
    session_day: int
    activity: str
    fs_hz: float
    channels: np.ndarray  # shape (3, n_samples)
    ground_truth_motion: np.ndarray | None = None  # |m(t)|, synthetic only

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2:
            raise ArgumentError("channels must be a 2-D (C, L) array")
        if self.channels.shape[1] < 1:
            raise ArgumentError("record must contain at least one sample")
        if self.fs_hz <= 0:
            raise ArgumentError("fs_hz must be positive")
        if self.session_day < 0:
            raise ArgumentError("session_day must be >= 0")
        if self.ground_truth_motion is not None:
            self.ground_truth_motion = np.asarray(
                self.ground_truth_motion, dtype=np.float64
            )
            if self.ground_truth_motion.shape != (self.channels.shape[1],):
                raise ChannelLengthError(
                    "ground_truth_motion length does not match channels"
                )

    @property
    def record_id(self) -> str:
        return f"{self.subject_id}_d{self.session_day}_{self.activity}"

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def n_channels(self) -> int:
        return self.channels.shape[0]


# Uniform sampling ranges for make_profiles. dicrotic_phase is drawn as an
# offset above systolic_phase so the ordering invariant holds by construction.
_PROFILE_RANGES = {
    "hr_mean_bpm": (50.0, 100.0),
    "hr_jitter_bpm": (0.5, 3.0),
    "systolic_phase": (0.12, 0.35),
    "systolic_width": (0.06, 0.12),
    "dicrotic_offset": (0.12, 0.25),
    "dicrotic_amp_ratio": (0.15, 0.40),
    "gain": (0.8, 1.2),
    "baseline": (5.0, 15.0),
    "noise_sigma": (0.01, 0.05),
    "day_drift_sigma": (0.5, 1.5),
}

# Nominal spans used to scale day drift per morphology parameter.
_DRIFT_SPANS = {
    "systolic_phase": 0.25,
    "systolic_width": 0.07,
    "dicrotic_phase": 0.15,
    "dicrotic_amp_ratio": 0.3,
    "hr_mean_bpm": 50.0,
}


def make_profiles(n_subjects, master_seed, day_drift_sigma=None):
    """Draw `n_subjects` subject profiles deterministically from the seed.

    `day_drift_sigma`, when given, overrides the drawn per-subject value
    (used to build corpora at controlled drift levels).
    """
    if n_subjects < 1:
        raise EmptyInputError("n_subjects must be >= 1")
    profiles = []
    for i in range(n_subjects):
        rng = rng_for(master_seed, "profile", i)
        u = lambda key: rng.uniform(*_PROFILE_RANGES[key])
        sp = u("systolic_phase")
        profiles.append(
            SubjectProfile(
                subject_id=f"s{i:03d}",
                hr_mean_bpm=u("hr_mean_bpm"),
                hr_jitter_bpm=u("hr_jitter_bpm"),
                systolic_phase=sp,
                systolic_width=u("systolic_width"),
                dicrotic_phase=sp + u("dicrotic_offset"),
                dicrotic_amp_ratio=u("dicrotic_amp_ratio"),
                pulsatile_gain=tuple(rng.uniform(*_PROFILE_RANGES["gain"], 3)),
                baseline=tuple(rng.uniform(*_PROFILE_RANGES["baseline"], 3)),
                surface_gain=tuple(rng.uniform(*_PROFILE_RANGES["gain"], 3)),
                noise_sigma=u("noise_sigma"),
                day_drift_sigma=(
                    day_drift_sigma
                    if day_drift_sigma is not None
                    else u("day_drift_sigma")
                ),
            )
        )
    return profiles


def _beat_template(profile, phase):
    """Two-Gaussian pulse shape evaluated at beat phase in [0, 1).

    The dicrotic bump is wider than the systolic one so it rides the
    systolic decay as a shoulder instead of carving out a second valley:
    downstream trough detection must see exactly one foot per beat.
    """
    sw = profile.systolic_width
    gap = profile.dicrotic_phase - profile.systolic_phase
    dw = max(1.8 * sw, 0.8 * gap)
    systolic = np.exp(-0.5 * ((phase - profile.systolic_phase) / sw) ** 2)
    dicrotic = profile.dicrotic_amp_ratio * np.exp(
        -0.5 * ((phase - profile.dicrotic_phase) / dw) ** 2
    )
    return systolic + dicrotic


def generate_physiological(profile, duration_s, fs_hz, seed):
    """Unit-normalized pulse train p(t) for one subject.

    Beat periods are sampled per beat from Normal(hr_mean, hr_jitter),
    clamped to physiological bounds; each beat contributes two Gaussian
    bumps (systolic + dicrotic) over its phase. Peak amplitude is
    normalized to 1.
    """
    if duration_s <= 0:
        raise ArgumentError("duration_s must be positive")
    if fs_hz <= 0:
        raise ArgumentError("fs_hz must be positive")
    rng = rng_for(seed, "beats")
    n = int(round(duration_s * fs_hz))
    t = np.arange(n) / fs_hz
    p = np.zeros(n)

    onset = 0.0
    while onset < duration_s:
        hr = rng.normal(profile.hr_mean_bpm, profile.hr_jitter_bpm)
        hr = min(max(hr, HR_CLAMP_BPM[0]), HR_CLAMP_BPM[1])
        period = 60.0 / hr
        # Overlap-add with one-period margins so Gaussian tails from
        # neighbouring beats are not truncated at beat boundaries.
        lo = max(0, int(np.floor((onset - 0.5 * period) * fs_hz)))
        hi = min(n, int(np.ceil((onset + 1.5 * period) * fs_hz)) + 1)
        if lo < hi:
            phase = (t[lo:hi] - onset) / period
            p[lo:hi] += _beat_template(profile, phase)
        onset += period

    peak = np.max(np.abs(p))
    if peak > 0:
        p /= peak
    return p


def generate_motion(spec, duration_s, fs_hz, seed):
    """Motion artifact m(t): Poisson-arriving Hann-windowed sine bursts.

    Burst frequencies are uniform in `motion_band_hz`, durations uniform
    in 0.5-2 s; the result is scaled so peak |m| equals motion_amp.
    """
    if duration_s <= 0:
        raise ArgumentError("duration_s must be positive")
    if fs_hz <= 0:
        raise ArgumentError("fs_hz must be positive")
    n = int(round(duration_s * fs_hz))
    m = np.zeros(n)
    if spec.motion_amp == 0 or spec.burst_rate_hz == 0:
        return m
    rng = rng_for(seed, "motion")
    n_bursts = rng.poisson(spec.burst_rate_hz * duration_s)
    for _ in range(n_bursts):
        start_s = rng.uniform(0, duration_s)
        dur_s = rng.uniform(0.5, 2.0)
        freq = rng.uniform(*spec.motion_band_hz)
        phi = rng.uniform(0, 2 * np.pi)
        i0 = int(start_s * fs_hz)
        length = min(int(dur_s * fs_hz), n - i0)
        if length < 2:
            continue
        tt = np.arange(length) / fs_hz
        window = np.hanning(length)
        m[i0 : i0 + length] += window * np.sin(2 * np.pi * freq * tt + phi)
    peak = np.max(np.abs(m))
    if peak > 0:
        m *= spec.motion_amp / peak
    return m


def _drift_profile(profile, session_day):
    """Morphology parameters shifted by day drift.

    The drift direction is a fixed per-subject standard-normal vector and
    the magnitude grows linearly with session_day, so pulse templates move
    monotonically away from their day-0 shape.
    """
    if session_day == 0 or profile.day_drift_sigma == 0:
        return profile
    rng = rng_for(0, "drift-direction", profile.subject_id)
    z = {name: rng.normal() for name in _DRIFT_SPANS}
    scale = profile.day_drift_sigma * session_day * DRIFT_BASE_SCALE
    shifted = {
        name: getattr(profile, name) + z[name] * scale * span
        for name, span in _DRIFT_SPANS.items()
    }
    # Keep parameters inside the single-foot-per-beat morphology box.
    shifted["systolic_phase"] = float(np.clip(shifted["systolic_phase"], 0.08, 0.40))
    shifted["systolic_width"] = float(np.clip(shifted["systolic_width"], 0.05, 0.13))
    shifted["dicrotic_phase"] = float(
        np.clip(
            shifted["dicrotic_phase"],
            shifted["systolic_phase"] + 0.10,
            shifted["systolic_phase"] + 0.26,
        )
    )
    shifted["dicrotic_amp_ratio"] = float(
        np.clip(shifted["dicrotic_amp_ratio"], 0.12, 0.42)
    )
    shifted["hr_mean_bpm"] = float(np.clip(shifted["hr_mean_bpm"], 45.0, 120.0))
    return replace(profile, **shifted)


def synthesize(profile, activity, session_day, duration_s, fs_hz, seed):
    """Compose one 3-channel synthetic record from pulse, motion and noise."""
    drifted = _drift_profile(profile, session_day)
    p = generate_physiological(drifted, duration_s, fs_hz, derive_seed(seed, "phys"))
    m = generate_motion(activity, duration_s, fs_hz, derive_seed(seed, "motion"))
    noise_rng = rng_for(seed, "noise")
    coupled = m * (1.0 + COUPLING_COEFF * p)
    channels = np.empty((3, p.size))
    for c in range(3):
        noise = (
            noise_rng.normal(0.0, profile.noise_sigma, p.size)
            if profile.noise_sigma > 0
            else 0.0
        )
        channels[c] = (
            profile.surface_gain[c] * coupled
            + profile.pulsatile_gain[c] * p
            + noise
            + profile.baseline[c]
        )
    return PpgRecord(
        subject_id=profile.subject_id,
        session_day=session_day,
        activity=activity.name,
        fs_hz=fs_hz,
        channels=channels,
        ground_truth_motion=np.abs(m),
    )


def generate_corpus(
    n_subjects,
    master_seed,
    activities=("sit", "walk"),
    days=(0,),
    duration_s=60.0,
    fs_hz=60.0,
    day_drift_sigma=None,
):
    """One record per (subject, day, activity); deterministic in the seed."""
    profiles = make_profiles(n_subjects, master_seed, day_drift_sigma=day_drift_sigma)
    records = []
    for profile in profiles:
        for day in days:
            for name in activities:
                spec = ACTIVITIES[name]
                seed = derive_seed(
                    master_seed, "record", profile.subject_id, day, name
                )
                records.append(
                    synthesize(profile, spec, day, duration_s, fs_hz, seed)
                )
    return records


# ---------------------------------------------------------------------------
# Dataset I/O
# ---------------------------------------------------------------------------


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def save_dataset(records, directory):
    """Write records as CSV files plus a manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, rec in enumerate(records):
        fname = f"rec{i:04d}_{rec.record_id}.csv"
        path = os.path.join(directory, fname)
        has_motion = rec.ground_truth_motion is not None
        header = ["t"] + [f"ch{c}" for c in range(rec.n_channels)]
        cols = [np.arange(rec.n_samples) / rec.fs_hz] + list(rec.channels)
        if has_motion:
            header.append("motion")
            cols.append(rec.ground_truth_motion)
        data = np.column_stack(cols)
        with open(path, "w", newline="") as f:
            f.write(",".join(header) + "\n")
            np.savetxt(f, data, fmt="%.17g", delimiter=",")
        entries.append(
            {
                "path": fname,
                "subject_id": rec.subject_id,
                "session_day": rec.session_day,
                "activity": rec.activity,
                "fs_hz": rec.fs_hz,
                "n_samples": rec.n_samples,
                "n_channels": rec.n_channels,
                "has_motion_truth": has_motion,
                "checksum": _sha256_file(path),
            }
        )
    manifest_path = os.path.join(directory, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(
            {"version": DATASET_FORMAT_VERSION, "records": entries},
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")
    return manifest_path


def load_dataset(directory):
    """Load all records listed in the directory's manifest."""
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise MissingManifestError(f"no manifest.json in {directory}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("version") != DATASET_FORMAT_VERSION:
        raise SchemaVersionError(
            f"unsupported dataset version {manifest.get('version')!r}"
        )
    records = []
    for entry in manifest["records"]:
        path = os.path.join(directory, entry["path"])
        if not os.path.exists(path):
            raise DanglingEntryError(f"manifest references missing file {entry['path']}")
        if _sha256_file(path) != entry["checksum"]:
            raise ChecksumMismatchError(f"checksum mismatch for {entry['path']}")
        with open(path) as f:
            reader = csv.reader(f)
            header = next(reader)
            data = np.loadtxt(f, delimiter=",", ndmin=2)
        n_channels = entry["n_channels"]
        expected_cols = 1 + n_channels + (1 if entry["has_motion_truth"] else 0)
        if data.shape[1] != expected_cols or data.shape[0] != entry["n_samples"]:
            raise ChannelLengthError(
                f"{entry['path']}: expected {entry['n_samples']}x{expected_cols},"
                f" got {data.shape[0]}x{data.shape[1]}"
            )
        channels = data[:, 1 : 1 + n_channels].T.copy()
        motion = data[:, -1].copy() if entry["has_motion_truth"] else None
        records.append(
            PpgRecord(
                subject_id=entry["subject_id"],
                session_day=entry["session_day"],
                activity=entry["activity"],
                fs_hz=entry["fs_hz"],
                channels=channels,
                ground_truth_motion=motion,
            )
        )
    return records
