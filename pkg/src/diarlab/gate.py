"""Data-cleaning quality gate: audio, video, synchronization and duration checks.

Every threshold is inclusive. The audio gate applies to the overall (OVRL)
score only; SIG and BAK ride along for the audit trail. The sync check
passes if at least one face track is synchronized with the audio, which also
rejects clips without any on-screen speaker. The verdict records every
check's measured value so gate decisions are fully auditable.
"""

from __future__ import annotations

from dataclasses import dataclass

CHECK_AUDIO = "audio_quality"
CHECK_VIDEO = "video_quality"
CHECK_SYNC = "av_sync"
CHECK_DURATION = "source_duration"


def _require_range(value: float, lo: float, hi: float, what: str) -> None:
    if not lo <= value <= hi:
        raise ValueError(f"{what} must be within [{lo}, {hi}], got {value}")


@dataclass(frozen=True)
class AudioQuality:
    """No-reference speech quality scores on the 0-5 scale."""

    sig: float
    bak: float
    ovrl: float

    def __post_init__(self):
        for name, value in (("sig", self.sig), ("bak", self.bak), ("ovrl", self.ovrl)):
            _require_range(value, 0.0, 5.0, name)


@dataclass(frozen=True)
class VideoQuality:
    """No-reference video quality score on the 0-100 scale."""

    score: float

    def __post_init__(self):
        _require_range(self.score, 0.0, 100.0, "score")


@dataclass(frozen=True)
class TrackSync:
    track_id: int
    offset: int  # signed frames
    confidence: float

    def __post_init__(self):
        if self.confidence < 0:
            raise ValueError(f"confidence must be >= 0, got {self.confidence}")


@dataclass(frozen=True)
class SyncResult:
    """Audio-visual offset estimates, overall and per face track."""

    offset: int
    confidence: float
    per_track: tuple[TrackSync, ...] = ()


@dataclass(frozen=True)
class GateConfig:
    ovrl_min: float = 3.0
    vqa_min: float = 60.0
    max_abs_offset: int = 5
    conf_min: float = 1.0
    min_source_duration: float = 180.0

    def __post_init__(self):
        _require_range(self.ovrl_min, 0.0, 5.0, "ovrl_min")
        _require_range(self.vqa_min, 0.0, 100.0, "vqa_min")
        if self.max_abs_offset < 0:
            raise ValueError(f"max_abs_offset must be >= 0, got {self.max_abs_offset}")
        if self.conf_min < 0:
            raise ValueError(f"conf_min must be >= 0, got {self.conf_min}")
        if self.min_source_duration < 0:
            raise ValueError(
                f"min_source_duration must be >= 0, got {self.min_source_duration}"
            )


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float | str
    threshold: float | str
    passed: bool


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reasons: tuple[CheckResult, ...]

    def failed_checks(self) -> list[str]:
        return [r.name for r in self.reasons if not r.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "reasons": [
                {
                    "name": r.name,
                    "measured": r.measured,
                    "threshold": r.threshold,
                    "passed": r.passed,
                }
                for r in self.reasons
            ],
        }

    @staticmethod
    def from_dict(data: dict) -> "Verdict":
        return Verdict(
            passed=data["passed"],
            reasons=tuple(
                CheckResult(r["name"], r["measured"], r["threshold"], r["passed"])
                for r in data["reasons"]
            ),
        )


def _sync_check(sync: SyncResult, cfg: GateConfig) -> CheckResult:
    threshold = f"|offset|<={cfg.max_abs_offset} and confidence>={cfg.conf_min}"
    if not sync.per_track:
        return CheckResult(CHECK_SYNC, "no synchronized face track", threshold, False)
    synchronized = [
        t
        for t in sync.per_track
        if abs(t.offset) <= cfg.max_abs_offset and t.confidence >= cfg.conf_min
    ]
    # Report the qualifying track with the highest confidence, or the most
    # confident candidate when none qualifies.
    pool = synchronized or list(sync.per_track)
    best = max(pool, key=lambda t: (t.confidence, -abs(t.offset), -t.track_id))
    measured = f"track {best.track_id}: offset={best.offset}, confidence={best.confidence:g}"
    return CheckResult(CHECK_SYNC, measured, threshold, bool(synchronized))


def evaluate(
    aq: AudioQuality,
    vq: VideoQuality,
    sync: SyncResult,
    source_duration: float,
    cfg: GateConfig = GateConfig(),
) -> Verdict:
    """Apply every configured check; the verdict passes iff all of them do."""
    reasons = (
        CheckResult(CHECK_AUDIO, aq.ovrl, cfg.ovrl_min, aq.ovrl >= cfg.ovrl_min),
        CheckResult(CHECK_VIDEO, vq.score, cfg.vqa_min, vq.score >= cfg.vqa_min),
        _sync_check(sync, cfg),
        CheckResult(
            CHECK_DURATION,
            source_duration,
            cfg.min_source_duration,
            source_duration >= cfg.min_source_duration,
        ),
    )
    return Verdict(passed=all(r.passed for r in reasons), reasons=reasons)
