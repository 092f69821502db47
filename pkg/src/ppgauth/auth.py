"""Registration and authentication over streams of preprocessed segments.

Enrollment stores every segment passing the quality gate (confidence >=
0.8 by default) as a template. Authentication scores every qualified
probe segment against every stored template and decides by strict
majority vote; ties reject. Segments that fail the quality gate never
change any state.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EnrollmentFailedError,
    NotEnrolledError,
    SchemaVersionError,
)
from .metrics import ScoredPairs, eer

STORE_FORMAT_VERSION = 1


@dataclass
class TemplateEntry:
    embedding: np.ndarray
    enrollment_day: int
    quality_confidence: float


@dataclass
class TemplateStore:
    decision_threshold: float = 0.5
    quality_threshold: float = 0.8
    update_templates: bool = False  # append accepted genuine probes as templates
    users: dict = field(default_factory=dict)  # user_id -> list[TemplateEntry]

    def add_template(self, user_id, embedding, day, confidence):
        entry = TemplateEntry(np.asarray(embedding, dtype=np.float64), day, confidence)
        self.users.setdefault(user_id, []).append(entry)

    def save(self, path):
        payload = {
            "format_version": STORE_FORMAT_VERSION,
            "decision_threshold": self.decision_threshold,
            "quality_threshold": self.quality_threshold,
            "update_templates": self.update_templates,
            "users": {
                uid: [
                    {
                        "embedding": e.embedding.tolist(),
                        "enrollment_day": e.enrollment_day,
                        "quality_confidence": e.quality_confidence,
                    }
                    for e in entries
                ]
                for uid, entries in self.users.items()
            },
        }
        with open(path, "w") as f:
            json.dump(payload, f, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            payload = json.load(f)
        if payload.get("format_version") != STORE_FORMAT_VERSION:
            raise SchemaVersionError(
                f"unsupported store version {payload.get('format_version')!r}"
            )
        store = cls(
            decision_threshold=payload["decision_threshold"],
            quality_threshold=payload["quality_threshold"],
            update_templates=payload.get("update_templates", False),
        )
        for uid, entries in payload["users"].items():
            for e in entries:
                store.add_template(
                    uid, e["embedding"], e["enrollment_day"], e["quality_confidence"]
                )
        return store


@dataclass
class AuthDecision:
    outcome: str  # "Accept" | "Reject" | "NoValidSignal"
    votes_for: int = 0
    votes_against: int = 0
    elapsed_signal_s: float = 0.0


def _segment_end_s(segment):
    _, start = segment.origin
    return (start + segment.data.shape[1]) / segment.fs_hz


def register(model, store: TemplateStore, user_id, segment_stream, min_signal_s=10.0):
    """Consume the stream, storing every segment that passes the quality gate.

    At least `min_signal_s` of signal is consumed; if nothing qualified by
    then, consumption continues until a segment qualifies or the stream
    ends (which fails enrollment without touching the store).
    """
    stored = []
    elapsed = 0.0
    for segment in segment_stream:
        elapsed = max(elapsed, _segment_end_s(segment))
        conf = float(model.quality_confidences(segment.data[None])[0])
        if conf >= store.quality_threshold:
            emb = model.embeddings(segment.data[None])[0]
            stored.append((emb, segment.session_day, conf))
        if elapsed >= min_signal_s and stored:
            break
    if not stored:
        raise EnrollmentFailedError(
            f"stream ended after {elapsed:.1f}s with no segment passing the quality gate"
        )
    for emb, day, conf in stored:
        store.add_template(user_id, emb, day, conf)
    return {"templates_stored": len(stored), "signal_consumed_s": elapsed}


def authenticate(model, store: TemplateStore, user_id, segment_stream, window_s=10.0):
    """Majority vote of qualified probe segments against stored templates.

    Probes come from the trailing `window_s` of consumed signal, extended
    until at least one probe qualifies or the stream ends. Ties reject.
    """
    if user_id not in store.users:
        raise NotEnrolledError(f"user {user_id!r} is not enrolled")
    templates = store.users[user_id]
    qualified = []  # (end_time, embedding)
    elapsed = 0.0
    for segment in segment_stream:
        end = _segment_end_s(segment)
        elapsed = max(elapsed, end)
        conf = float(model.quality_confidences(segment.data[None])[0])
        if conf >= store.quality_threshold:
            qualified.append((end, model.embeddings(segment.data[None])[0]))
        recent = [q for q in qualified if q[0] > elapsed - window_s]
        if elapsed >= window_s and recent:
            qualified = recent
            break
    else:
        qualified = [q for q in qualified if q[0] > elapsed - window_s]

    if not qualified:
        return AuthDecision("NoValidSignal", 0, 0, elapsed)

    votes_for = votes_against = 0
    accepted_probes = []
    for _, emb in qualified:
        for entry in templates:
            score = model.pair_score(emb, entry.embedding)
            if score >= store.decision_threshold:
                votes_for += 1
            else:
                votes_against += 1
        accepted_probes.append(emb)
    outcome = "Accept" if votes_for > votes_against else "Reject"
    if outcome == "Accept" and store.update_templates:
        for emb in accepted_probes:
            store.add_template(user_id, emb, -1, 1.0)
    return AuthDecision(outcome, votes_for, votes_against, elapsed)


def calibrate_threshold(model, validation_pairs: ScoredPairs) -> float:
    """Decision threshold at the EER operating point of validation scores.

    On perfectly separated scores this is the midpoint of the gap between
    the highest negative and lowest positive score.
    """
    pos = validation_pairs.scores[validation_pairs.labels == 1]
    neg = validation_pairs.scores[validation_pairs.labels == 0]
    if neg.max() < pos.min():
        return float((neg.max() + pos.min()) / 2.0)
    _, threshold = eer(validation_pairs, return_threshold=True)
    return float(threshold)
