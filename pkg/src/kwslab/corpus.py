"""Data model, serialized formats, windowing, labeling, and split selection
for session-structured multichannel recordings with word-level event
annotations.

A corpus on disk is a directory containing, per session,

    <session_id>.f32          raw little-endian float32 samples, channel-major
    <session_id>.json         sidecar: id, geometry, channel names, checksum
    <session_id>_events.tsv   onset / duration / kind / word rows

plus a ``manifest.json`` listing sessions with their default partition.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EventsParseError,
    InfeasibleTaskError,
    MissingKeywordError,
    ValidationError,
)

EVENT_KINDS = ("word", "phoneme", "speech")
EVENTS_HEADER = ("onset", "duration", "kind", "word")
STD_FLOOR = 1e-8


def round_half_up(x: float) -> int:
    """Round to nearest integer, ties away from zero toward +inf."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ChannelConfig:
    n_channels: int = 306
    sample_rate_hz: float = 250.0
    channel_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValidationError(f"n_channels must be >= 1, got {self.n_channels}")
        if self.sample_rate_hz <= 0:
            raise ValidationError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if self.channel_names is not None and len(self.channel_names) != self.n_channels:
            raise ValidationError(
                f"channel_names has {len(self.channel_names)} entries for "
                f"{self.n_channels} channels"
            )


@dataclass(frozen=True)
class WordEvent:
    onset_s: float
    duration_s: float
    word: str
    kind: str = "word"

    def __post_init__(self):
        if self.onset_s < 0:
            raise ValidationError(f"event onset must be >= 0, got {self.onset_s}")
        if self.duration_s <= 0:
            raise ValidationError(f"event duration must be > 0, got {self.duration_s}")
        if self.kind not in EVENT_KINDS:
            raise ValidationError(f"unknown event kind {self.kind!r}")
        if self.kind == "word" and not self.word:
            raise ValidationError("word-kind event with empty word string")


@dataclass
class Session:
    """One recording run: a C x T signal matrix plus its event list."""

    session_id: str
    signal: np.ndarray
    events: list[WordEvent]
    channel_config: ChannelConfig

    def __post_init__(self):
        self.signal = np.ascontiguousarray(self.signal, dtype=np.float32)
        if self.signal.ndim != 2:
            raise ValidationError(f"signal must be 2-D, got shape {self.signal.shape}")
        if self.signal.shape[0] != self.channel_config.n_channels:
            raise ValidationError(
                f"signal has {self.signal.shape[0]} channels, config says "
                f"{self.channel_config.n_channels}"
            )
        self.validate_events()

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.channel_config.sample_rate_hz

    def validate_events(self):
        last = -np.inf
        for ev in self.events:
            if ev.onset_s < last:
                raise ValidationError(
                    f"session {self.session_id}: events not sorted by onset"
                )
            last = ev.onset_s
            if ev.onset_s + ev.duration_s > self.duration_s + 1e-9:
                raise ValidationError(
                    f"session {self.session_id}: event at {ev.onset_s:.3f}s "
                    f"extends past the recording end ({self.duration_s:.3f}s)"
                )

    def word_events(self) -> list[WordEvent]:
        return [ev for ev in self.events if ev.kind == "word"]


@dataclass(frozen=True)
class KeywordTaskSpec:
    """Keyword set with buffers and the derived fixed window duration."""

    keywords: frozenset[str]
    beta_neg_s: float
    beta_pos_s: float
    d_max_s: dict[str, float]
    window_s: float

    def __post_init__(self):
        if not self.keywords:
            raise ValidationError("keyword set must be non-empty")
        if self.beta_neg_s < 0 or self.beta_pos_s < 0:
            raise ValidationError("buffers must be >= 0")
        for k in self.keywords:
            if self.d_max_s.get(k, 0.0) <= 0:
                raise ValidationError(f"d_max_s[{k!r}] must be > 0")
        expected = self.beta_neg_s + max(self.d_max_s[k] for k in self.keywords) + self.beta_pos_s
        if self.window_s != expected:
            raise ValidationError(
                f"window_s {self.window_s} != beta_neg + max d_max + beta_pos = {expected}"
            )

    def n_window_samples(self, sample_rate_hz: float) -> int:
        return round_half_up(self.window_s * sample_rate_hz)


@dataclass
class WindowExample:
    """Fixed-shape C x N window anchored to one word token."""

    signal: np.ndarray
    label: int
    session_id: str
    token_index: int
    word: str


@dataclass
class DropTally:
    """Events skipped because their window exceeds the session bounds."""

    positives: int = 0
    negatives: int = 0

    @property
    def total(self) -> int:
        return self.positives + self.negatives


@dataclass
class SplitAssignment:
    train: list[str]
    validation: str
    test: str
    positive_counts: dict[str, int] = field(default_factory=dict)

    def all_sessions(self) -> list[str]:
        return list(self.train) + [self.validation, self.test]

    def validate(self, session_ids):
        ids = set(session_ids)
        claimed = self.all_sessions()
        if len(set(claimed)) != len(claimed):
            raise ValidationError("split partitions overlap")
        if set(claimed) != ids:
            raise ValidationError("split does not cover exactly the corpus sessions")


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-score transform fitted on the training partition."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, arr: np.ndarray) -> np.ndarray:
        mean = self.mean.astype(np.float32)[:, None]
        std = self.std.astype(np.float32)[:, None]
        return ((np.asarray(arr, dtype=np.float32) - mean) / std).astype(np.float32)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def parse_events_tsv(text: str) -> list[WordEvent]:
    """Parse TSV event rows into sorted WordEvents.

    The header must name the columns onset, duration, kind and word (any
    order). Words are lowercased; rows are sorted by onset with the original
    order preserved among equal onsets.
    """
    lines = text.splitlines()
    if not lines:
        raise EventsParseError("empty events file (missing header)")
    header = lines[0].rstrip("\n").split("\t")
    try:
        cols = {name: header.index(name) for name in EVENTS_HEADER}
    except ValueError:
        raise EventsParseError(
            f"header must name columns {EVENTS_HEADER}, got {header}", line_number=1
        ) from None

    events = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < len(header):
            raise EventsParseError(
                f"expected {len(header)} tab-separated fields, got {len(fields)}",
                line_number=lineno,
            )
        try:
            onset = float(fields[cols["onset"]])
            duration = float(fields[cols["duration"]])
        except ValueError as exc:
            raise EventsParseError(f"malformed numeric field: {exc}", line_number=lineno) from None
        kind = fields[cols["kind"]].strip()
        word = fields[cols["word"]].strip().lower()
        try:
            events.append(WordEvent(onset_s=onset, duration_s=duration, word=word, kind=kind))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    events.sort(key=lambda ev: ev.onset_s)  # stable: preserves row order on ties
    return events


def format_events_tsv(events) -> str:
    """Inverse of parse_events_tsv; float repr round-trips bit-exactly."""
    rows = ["\t".join(EVENTS_HEADER)]
    for ev in events:
        rows.append(f"{ev.onset_s!r}\t{ev.duration_s!r}\t{ev.kind}\t{ev.word}")
    return "\n".join(rows) + "\n"


def compute_d_max(sessions, keywords) -> dict[str, float]:
    """Max observed duration of each keyword over all word tokens in the corpus."""
    keywords = {k.lower() for k in keywords}
    d_max = {k: 0.0 for k in keywords}
    for session in sessions:
        for ev in session.word_events():
            if ev.word in d_max:
                d_max[ev.word] = max(d_max[ev.word], ev.duration_s)
    for k, v in d_max.items():
        if v <= 0.0:
            raise MissingKeywordError(k)
    return d_max


def build_task_spec(sessions, keywords, beta_neg_s: float, beta_pos_s: float) -> KeywordTaskSpec:
    if beta_neg_s < 0 or beta_pos_s < 0:
        raise ValidationError("buffers must be >= 0")
    keywords = frozenset(k.lower() for k in keywords)
    d_max = compute_d_max(sessions, keywords)
    window_s = beta_neg_s + max(d_max.values()) + beta_pos_s
    return KeywordTaskSpec(
        keywords=keywords,
        beta_neg_s=beta_neg_s,
        beta_pos_s=beta_pos_s,
        d_max_s=d_max,
        window_s=window_s,
    )


def extract_windows(session, spec, normalizer=None):
    """Cut one fixed-length window per word token.

    Returns ``(examples, drop_tally)``. Windows start at
    ``round((onset - beta_neg) * fs)`` and span ``round(window_s * fs)``
    samples; tokens whose window would cross the session bounds are dropped
    and tallied instead of padded.
    """
    fs = session.channel_config.sample_rate_hz
    n = spec.n_window_samples(fs)
    total = session.n_samples
    signal = session.signal
    examples = []
    tally = DropTally()
    for token_index, ev in enumerate(session.word_events()):
        label = 1 if ev.word in spec.keywords else 0
        start = round_half_up((ev.onset_s - spec.beta_neg_s) * fs)
        if start < 0 or start + n > total:
            if label:
                tally.positives += 1
            else:
                tally.negatives += 1
            continue
        window = signal[:, start : start + n]
        if normalizer is not None:
            window = normalizer.apply(window)
        else:
            window = np.array(window, dtype=np.float32)
        examples.append(
            WindowExample(
                signal=window,
                label=label,
                session_id=session.session_id,
                token_index=token_index,
                word=ev.word,
            )
        )
    return examples, tally


def window_start_sample(session, spec, token_index: int) -> int:
    """Start sample of a token's window (same arithmetic as extract_windows)."""
    ev = session.word_events()[token_index]
    fs = session.channel_config.sample_rate_hz
    return round_half_up((ev.onset_s - spec.beta_neg_s) * fs)


def count_positives(session, keywords) -> int:
    """c_S: number of word tokens in the session matching the keyword set."""
    keywords = {k.lower() for k in keywords}
    return sum(1 for ev in session.word_events() if ev.word in keywords)


def select_splits(sessions, spec, default_split: SplitAssignment) -> SplitAssignment:
    """Keep the default split when its validation and test sessions both
    contain positives; otherwise reassign the two highest-count sessions
    (ties broken by ascending session_id; top count -> test)."""
    if len(sessions) < 3:
        raise InfeasibleTaskError(f"need at least 3 sessions, got {len(sessions)}")
    counts = {s.session_id: count_positives(s, spec.keywords) for s in sessions}
    if sum(1 for c in counts.values() if c > 0) < 2:
        raise InfeasibleTaskError(
            "fewer than 2 sessions contain positives; validation and test "
            "cannot both be satisfied"
        )
    default_split.validate(counts.keys())
    if counts[default_split.validation] >= 1 and counts[default_split.test] >= 1:
        return SplitAssignment(
            train=list(default_split.train),
            validation=default_split.validation,
            test=default_split.test,
            positive_counts=counts,
        )
    ranked = sorted(counts, key=lambda sid: (-counts[sid], sid))
    test_id, val_id = ranked[0], ranked[1]
    train = sorted(sid for sid in counts if sid not in (test_id, val_id))
    return SplitAssignment(
        train=train, validation=val_id, test=test_id, positive_counts=counts
    )


def fit_normalizer(train_sessions) -> Normalizer:
    """Per-channel mean/std over every training sample; std floored at 1e-8."""
    if not train_sessions:
        raise ValidationError("no training sessions to fit a normalizer on")
    n_channels = train_sessions[0].channel_config.n_channels
    total = 0
    acc = np.zeros(n_channels, dtype=np.float64)
    acc_sq = np.zeros(n_channels, dtype=np.float64)
    for session in train_sessions:
        sig = session.signal.astype(np.float64)
        acc += sig.sum(axis=1)
        acc_sq += (sig * sig).sum(axis=1)
        total += session.n_samples
    if total == 0:
        raise ValidationError("training sessions contain no samples")
    mean = acc / total
    var = np.maximum(acc_sq / total - mean * mean, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return Normalizer(mean=mean, std=std)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _signal_checksum(signal: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(signal, dtype="<f4").tobytes()).hexdigest()


def save_session(session, root: str):
    os.makedirs(root, exist_ok=True)
    sig = np.ascontiguousarray(session.signal, dtype="<f4")
    base = os.path.join(root, session.session_id)
    with open(base + ".f32", "wb") as fh:
        fh.write(sig.tobytes())
    sidecar = {
        "session_id": session.session_id,
        "n_channels": session.channel_config.n_channels,
        "n_samples": session.n_samples,
        "sample_rate_hz": session.channel_config.sample_rate_hz,
        "channel_names": list(session.channel_config.channel_names or []) or None,
        "checksum_sha256": _signal_checksum(sig),
    }
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(base + "_events.tsv", "w", encoding="utf-8") as fh:
        fh.write(format_events_tsv(session.events))


def load_session(root: str, session_id: str) -> Session:
    base = os.path.join(root, session_id)
    with open(base + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    with open(base + ".f32", "rb") as fh:
        raw = fh.read()
    signal = np.frombuffer(raw, dtype="<f4").reshape(
        sidecar["n_channels"], sidecar["n_samples"]
    )
    checksum = hashlib.sha256(raw).hexdigest()
    if checksum != sidecar["checksum_sha256"]:
        raise ValidationError(f"session {session_id}: signal checksum mismatch")
    names = sidecar.get("channel_names")
    config = ChannelConfig(
        n_channels=sidecar["n_channels"],
        sample_rate_hz=sidecar["sample_rate_hz"],
        channel_names=tuple(names) if names else None,
    )
    with open(base + "_events.tsv", encoding="utf-8") as fh:
        events = parse_events_tsv(fh.read())
    return Session(
        session_id=session_id, signal=signal.copy(), events=events, channel_config=config
    )


def save_corpus(sessions, root: str, default_split: SplitAssignment):
    """Write every session plus a manifest carrying the default partition hints."""
    os.makedirs(root, exist_ok=True)
    partition = {sid: "train" for sid in default_split.train}
    partition[default_split.validation] = "validation"
    partition[default_split.test] = "test"
    entries = []
    for session in sessions:
        save_session(session, root)
        entries.append(
            {
                "session_id": session.session_id,
                "partition": partition[session.session_id],
                "checksum_sha256": _signal_checksum(session.signal),
            }
        )
    manifest = {"sessions": entries}
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_corpus(root: str):
    """Read the manifest and all sessions; returns (sessions, default_split)."""
    with open(os.path.join(root, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    sessions = []
    parts = {"train": [], "validation": [], "test": []}
    for entry in manifest["sessions"]:
        sessions.append(load_session(root, entry["session_id"]))
        parts[entry["partition"]].append(entry["session_id"])
    if len(parts["validation"]) != 1 or len(parts["test"]) != 1:
        raise ValidationError(
            "manifest must hint exactly one validation and one test session"
        )
    split = SplitAssignment(
        train=sorted(parts["train"]),
        validation=parts["validation"][0],
        test=parts["test"][0],
    )
    return sessions, split


def corpus_checksums(root: str) -> dict[str, str]:
    """session_id -> signal checksum, straight from the manifest."""
    with open(os.path.join(root, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    return {e["session_id"]: e["checksum_sha256"] for e in manifest["sessions"]}
