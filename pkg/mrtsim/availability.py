import enum
import logging
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Optional

from .exceptions import ValidationError
from .model import Connection, ContextSnapshot

logger = logging.getLogger(__name__)

# Walking "within 90 seconds of a decision point"
WALKING_LOOKBACK_S = 90
MAX_SNOOZE_S = 12 * 3600
# Older snapshots are treated as a failed capture
DEFAULT_FRESHNESS_BOUND_S = 2 * 3600


class Reason(str, enum.Enum):
    DRIVING = "DRIVING"
    NO_CONNECTION = "NO_CONNECTION"
    INTERVENTION_OFF = "INTERVENTION_OFF"
    RECENTLY_WALKING = "RECENTLY_WALKING"


@dataclass(frozen=True)
class AvailabilityResult:
    available: bool
    reasons: FrozenSet[Reason]
    evaluated_at: int

    def __post_init__(self):
        object.__setattr__(self, "reasons", frozenset(Reason(r) for r in self.reasons))
        if self.available != (len(self.reasons) == 0):
            raise ValidationError(
                "available must be true exactly when no reason is recorded",
                "availability",
            )

    def reason_names(self):
        return sorted(r.value for r in self.reasons)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "available": self.available,
            "reasons": self.reason_names(),
            "evaluated_at": self.evaluated_at,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "AvailabilityResult":
        return cls(
            available=d["available"],
            reasons=frozenset(Reason(r) for r in d["reasons"]),
            evaluated_at=d["evaluated_at"],
        )


@dataclass(frozen=True)
class SnoozeState:
    active: bool = False
    expires_at: Optional[int] = None

    @classmethod
    def off(cls) -> "SnoozeState":
        return cls()

    @classmethod
    def set_at(cls, now: int, duration_s: int) -> "SnoozeState":
        if duration_s <= 0 or duration_s > MAX_SNOOZE_S:
            raise ValidationError(
                "snooze duration {}s outside (0, {}]".format(duration_s, MAX_SNOOZE_S),
                "snooze",
            )
        return cls(active=True, expires_at=now + duration_s)

    def is_on(self, now: int) -> bool:
        return self.active and self.expires_at is not None and now < self.expires_at


def evaluate_availability(
    snapshot: ContextSnapshot,
    snooze: SnoozeState,
    now: int,
    freshness_bound: int = DEFAULT_FRESHNESS_BOUND_S,
) -> AvailabilityResult:
    snap = snapshot.aged(now)
    if snap.staleness > freshness_bound and not snap.capture_failed:
        logger.debug(
            "Snapshot captured {}s ago is past the {}s bound, treated as failed".format(
                snap.staleness, freshness_bound
            )
        )
        snap = ContextSnapshot.failed(snap.captured_at)

    reasons = set()
    if snap.driving:
        reasons.add(Reason.DRIVING)
    # unknown and captive-portal connections give no usable internet either
    if snap.connection != Connection.ONLINE:
        reasons.add(Reason.NO_CONNECTION)
    if snooze.is_on(now):
        reasons.add(Reason.INTERVENTION_OFF)
    if snap.recent_activity:
        reasons.add(Reason.RECENTLY_WALKING)

    return AvailabilityResult(
        available=not reasons, reasons=frozenset(reasons), evaluated_at=now
    )
