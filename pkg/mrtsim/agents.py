"""Phone-side and server-side randomization agents.

Both agents emit the same RandomizationRecord schema. The phone decides
locally at the scheduled instant and can deliver pre-fetched content while
offline; the server decides from a pre-built table and delivers through a
push channel that may delay or drop the notification.
"""

import abc
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .availability import AvailabilityResult, Reason, SnoozeState
from .exceptions import ValidationError
from .model import (
    Connection,
    ContextSnapshot,
    DecisionPoint,
    LocationCategory,
    TrialConfig,
    Weather,
    build_schedule,
)
from .timekeeper import Stamp

logger = logging.getLogger(__name__)

PREFETCH_LEAD_S = 30 * 60
TAILORING_WINDOW_S = 90
ENGAGEMENT_TIMEOUT_S = 30 * 60
GENERIC_CONTENT = "generic"
UNDELIVERED_TREATMENT = "UNDELIVERED_TREATMENT"
DEVICE_OFF = "DEVICE_OFF"


class Outcome(str, enum.Enum):
    TREAT = "TREAT"
    NO_TREAT = "NO_TREAT"
    NOT_RANDOMIZED = "NOT_RANDOMIZED"


class AgentKind(str, enum.Enum):
    PHONE = "PHONE"
    SERVER = "SERVER"


class EngagementKind(str, enum.Enum):
    THUMBS_UP = "THUMBS_UP"
    THUMBS_DOWN = "THUMBS_DOWN"
    SNOOZE_SET = "SNOOZE_SET"
    NO_RESPONSE = "NO_RESPONSE"


def _stamp_or_none(d: Optional[Dict[str, Any]]) -> Optional[Stamp]:
    return Stamp.from_dict(d) if d is not None else None


@dataclass(frozen=True)
class RandomizationRecord:
    participant_id: str
    component_id: str
    global_index: int
    probability: Decimal
    outcome: Outcome
    availability: AvailabilityResult
    randomized_at: Optional[Stamp]
    delivered_at: Optional[Stamp]
    agent: AgentKind
    content_id: Optional[str] = None
    # instant the protocol asked for, for timing-skew accounting
    scheduled_at: Optional[Stamp] = None
    # age of the context used to tailor the delivered content
    context_staleness: Optional[int] = None
    data_note: Optional[str] = None

    def __post_init__(self):
        if self.probability is None:
            raise ValidationError("probability must always be recorded", "probability")
        if (self.outcome == Outcome.NOT_RANDOMIZED) != (not self.availability.available):
            raise ValidationError(
                "NOT_RANDOMIZED exactly when unavailable", "outcome"
            )
        if self.delivered_at is not None:
            if self.outcome != Outcome.TREAT:
                raise ValidationError("only TREAT can be delivered", "delivered_at")
            if self.randomized_at is None or self.delivered_at.utc < self.randomized_at.utc:
                raise ValidationError(
                    "delivered_at precedes randomized_at", "delivered_at"
                )

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.participant_id, self.component_id, self.global_index)

    @property
    def delivered(self) -> bool:
        return self.delivered_at is not None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "participant_id": self.participant_id,
            "component_id": self.component_id,
            "global_index": self.global_index,
            "probability": str(self.probability),
            "outcome": self.outcome.value,
            "availability": self.availability.to_dict(),
            "randomized_at": self.randomized_at.to_dict() if self.randomized_at else None,
            "delivered_at": self.delivered_at.to_dict() if self.delivered_at else None,
            "agent": self.agent.value,
            "content_id": self.content_id,
            "scheduled_at": self.scheduled_at.to_dict() if self.scheduled_at else None,
            "context_staleness": self.context_staleness,
            "data_note": self.data_note,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RandomizationRecord":
        return cls(
            participant_id=d["participant_id"],
            component_id=d["component_id"],
            global_index=d["global_index"],
            probability=Decimal(d["probability"]),
            outcome=Outcome(d["outcome"]),
            availability=AvailabilityResult.from_dict(d["availability"]),
            randomized_at=_stamp_or_none(d["randomized_at"]),
            delivered_at=_stamp_or_none(d["delivered_at"]),
            agent=AgentKind(d["agent"]),
            content_id=d.get("content_id"),
            scheduled_at=_stamp_or_none(d.get("scheduled_at")),
            context_staleness=d.get("context_staleness"),
            data_note=d.get("data_note"),
        )


@dataclass(frozen=True)
class PrefetchedContent:
    dp_key: Tuple[str, str, int]
    content_id: str
    fetched_at: int
    context_used: ContextSnapshot


@dataclass(frozen=True)
class DeliveryEvent:
    dp_key: Tuple[str, str, int]
    delivered_at: Stamp
    content_id: str
    # LOCAL (phone, online), CACHE (phone, offline), PUSH (server)
    channel: str


@dataclass(frozen=True)
class UserAction:
    at: int
    kind: EngagementKind
    # snooze length chosen by the participant
    snooze_seconds: int = 0


@dataclass(frozen=True)
class EngagementEvent:
    record_key: Tuple[str, str, int]
    kind: EngagementKind
    at: int
    snooze: Optional[SnoozeState] = field(default=None, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "participant_id": self.record_key[0],
            "component_id": self.record_key[1],
            "global_index": self.record_key[2],
            "kind": self.kind.value,
            "at": self.at,
            "snooze_expires_at": self.snooze.expires_at if self.snooze else None,
        }


def tailor_content(
    dp: DecisionPoint, snapshot: Optional[ContextSnapshot], now: int, freshness_bound: int
) -> Tuple[str, Optional[int]]:
    """Pick content for the context at hand; stale or absent context gets generic content."""
    if snapshot is None or snapshot.capture_failed:
        return GENERIC_CONTENT, None
    staleness = max(0, now - snapshot.captured_at)
    if staleness > freshness_bound:
        return GENERIC_CONTENT, staleness
    # walking and sedentary-break messages alternate over the day
    flavour = "walk" if dp.global_index % 2 == 0 else "break"
    location = snapshot.location_category
    weather = snapshot.weather
    if location == LocationCategory.UNKNOWN:
        location = LocationCategory.OTHER
    if weather == Weather.UNKNOWN:
        return "{}:{}:{}".format(dp.component_id, flavour, location.value.lower()), staleness
    return (
        "{}:{}:{}:{}".format(
            dp.component_id, flavour, location.value.lower(), weather.value.lower()
        ),
        staleness,
    )


def content_flavour(content_id: Optional[str]) -> Optional[str]:
    if not content_id or content_id == GENERIC_CONTENT:
        return None
    parts = content_id.split(":")
    return parts[1] if len(parts) > 1 else None


def randomize(
    dp: DecisionPoint,
    avail: AvailabilityResult,
    p: Decimal,
    rng: np.random.Generator,
    now: Stamp = None,
    agent: AgentKind = AgentKind.PHONE,
) -> RandomizationRecord:
    if not avail.available:
        # no draw: the stream only advances at available decision points
        return RandomizationRecord(
            participant_id=dp.participant_id,
            component_id=dp.component_id,
            global_index=dp.global_index,
            probability=p,
            outcome=Outcome.NOT_RANDOMIZED,
            availability=avail,
            randomized_at=now,
            delivered_at=None,
            agent=agent,
            scheduled_at=now,
        )
    draw = rng.random()
    outcome = Outcome.TREAT if draw < float(p) else Outcome.NO_TREAT
    return RandomizationRecord(
        participant_id=dp.participant_id,
        component_id=dp.component_id,
        global_index=dp.global_index,
        probability=p,
        outcome=outcome,
        availability=avail,
        randomized_at=now,
        delivered_at=None,
        agent=agent,
        scheduled_at=now,
    )


def missed_record(
    dp: DecisionPoint,
    p: Decimal,
    agent: AgentKind,
    evaluated_at: int,
    scheduled_at: Stamp = None,
) -> RandomizationRecord:
    """Record for a decision point the phone slept through: unreachable, never drawn."""
    return RandomizationRecord(
        participant_id=dp.participant_id,
        component_id=dp.component_id,
        global_index=dp.global_index,
        probability=p,
        outcome=Outcome.NOT_RANDOMIZED,
        availability=AvailabilityResult(
            False, frozenset([Reason.NO_CONNECTION]), evaluated_at
        ),
        randomized_at=None,
        delivered_at=None,
        agent=agent,
        scheduled_at=scheduled_at,
        data_note=DEVICE_OFF,
    )


def _with(record: RandomizationRecord, **changes) -> RandomizationRecord:
    return replace(record, **changes)


def prefetch(
    dp: DecisionPoint,
    scheduled_utc: int,
    snapshot: ContextSnapshot,
    now: int,
    connection: Optional[Connection],
    freshness_bound: int,
) -> Optional[PrefetchedContent]:
    if connection != Connection.ONLINE:
        return None
    if now >= scheduled_utc:
        raise ValidationError("prefetch must precede the decision point", "fetched_at")
    content_id, _ = tailor_content(dp, snapshot, now, freshness_bound)
    return PrefetchedContent(dp.key, content_id, now, snapshot)


def phone_agent_step(
    dp: DecisionPoint,
    clock: Stamp,
    connectivity: Optional[Connection],
    cache: Optional[PrefetchedContent],
    snapshot: ContextSnapshot,
    avail: AvailabilityResult,
    p: Decimal,
    rng: np.random.Generator,
    freshness_bound: int,
    scheduled_at: Stamp = None,
) -> Tuple[RandomizationRecord, Optional[DeliveryEvent]]:
    """Randomize on the phone at ``clock`` and deliver locally if possible."""
    record = randomize(dp, avail, p, rng, clock, AgentKind.PHONE)
    record = _with(record, scheduled_at=scheduled_at or clock)
    if record.outcome != Outcome.TREAT:
        return record, None

    if connectivity == Connection.ONLINE:
        content_id, staleness = tailor_content(dp, snapshot, clock.utc, freshness_bound)
        channel = "LOCAL"
    elif cache is not None and cache.dp_key == dp.key:
        content_id = cache.content_id
        staleness = cache.fetched_at - cache.context_used.captured_at
        channel = "CACHE"
    else:
        logger.debug(
            "{} {} #{}: offline without cached content, treatment not deliverable".format(
                dp.participant_id, dp.component_id, dp.global_index
            )
        )
        return _with(record, data_note=UNDELIVERED_TREATMENT), None

    record = _with(
        record, delivered_at=clock, content_id=content_id, context_staleness=staleness
    )
    return record, DeliveryEvent(dp.key, clock, content_id, channel)


class PushChannelInterface(metaclass=abc.ABCMeta):
    @classmethod
    def __subclasshook__(cls, subclass):
        return (
            hasattr(subclass, "deliver") and callable(subclass.deliver) or NotImplemented
        )

    @abc.abstractmethod
    def deliver(self, sent_at: Stamp) -> Optional[Stamp]:
        # Arrival stamp on the phone, None when the push is lost
        raise NotImplementedError


class LognormalPushChannel(PushChannelInterface):

    median_s: float
    sigma: float
    drop_probability: float
    enabled: bool

    def __init__(
        self,
        rng: np.random.Generator,
        median_s: float = 15.0,
        sigma: float = 1.0,
        drop_probability: float = 0.01,
        enabled: bool = True,
    ):
        self.rng = rng
        self.median_s = median_s
        self.sigma = sigma
        self.drop_probability = drop_probability
        self.enabled = enabled

    def sample_delay(self) -> Tuple[int, bool]:
        """(delay seconds, dropped); always consumes two draws so streams stay aligned."""
        u_drop = self.rng.random()
        z = self.rng.standard_normal()
        if not self.enabled:
            return 0, False
        delay = int(round(math.exp(math.log(self.median_s) + self.sigma * z)))
        return delay, u_drop < self.drop_probability

    def deliver(self, sent_at: Stamp) -> Optional[Stamp]:
        delay, dropped = self.sample_delay()
        if dropped:
            return None
        return Stamp(sent_at.utc + delay, sent_at.tz_offset_minutes, sent_at.tz_name)


class RecordTable(object):
    """Server-side table with one placeholder row per decision point, pre-built."""

    _rows: Dict[Tuple[str, str, int], Optional[RandomizationRecord]]

    def __init__(self, schedule: Sequence[DecisionPoint]):
        self._rows = {dp.key: None for dp in schedule}

    def __len__(self):
        return len(self._rows)

    def fill(self, record: RandomizationRecord) -> None:
        if record.key not in self._rows:
            raise KeyError("no pre-built row for {}".format(record.key))
        if self._rows[record.key] is not None:
            raise ValidationError(
                "row {} already filled".format(record.key), "record_table"
            )
        self._rows[record.key] = record

    def get(self, key: Tuple[str, str, int]) -> Optional[RandomizationRecord]:
        return self._rows[key]

    def unfilled(self) -> List[Tuple[str, str, int]]:
        return sorted(k for k, v in self._rows.items() if v is None)

    def records(self) -> List[RandomizationRecord]:
        return [self._rows[k] for k in sorted(self._rows) if self._rows[k] is not None]  # type: ignore


def server_agent_prepare(config: TrialConfig) -> RecordTable:
    table = RecordTable(build_schedule(config))
    logger.info("Pre-built {} server rows".format(len(table)))
    return table


def server_agent_step(
    dp: DecisionPoint,
    avail: AvailabilityResult,
    p: Decimal,
    rng: np.random.Generator,
    push_channel: PushChannelInterface,
    clock: Stamp,
    tailoring_snapshot: Optional[ContextSnapshot],
    freshness_bound: int,
) -> RandomizationRecord:
    record = randomize(dp, avail, p, rng, clock, AgentKind.SERVER)
    if record.outcome != Outcome.TREAT:
        return record
    content_id, staleness = tailor_content(
        dp, tailoring_snapshot, clock.utc, freshness_bound
    )
    arrival = push_channel.deliver(clock)
    if arrival is None:
        logger.warning(
            "{} {} #{}: push dropped".format(dp.participant_id, dp.component_id, dp.global_index)
        )
        return _with(
            record,
            content_id=content_id,
            context_staleness=staleness,
            data_note=UNDELIVERED_TREATMENT,
        )
    return _with(
        record, delivered_at=arrival, content_id=content_id, context_staleness=staleness
    )


def engage(
    record: RandomizationRecord,
    user_action_stream: Sequence[UserAction],
    clock: Optional[int] = None,
    timeout: int = ENGAGEMENT_TIMEOUT_S,
) -> Optional[EngagementEvent]:
    """First user action within the timeout wins, otherwise NO_RESPONSE at the timeout.

    With a ``clock`` before the timeout and no action seen yet, returns None:
    the treatment is still pending and nothing terminal has happened.
    """
    if record.outcome != Outcome.TREAT or record.delivered_at is None:
        raise ValidationError("engagement needs a delivered treatment", "record")
    start = record.delivered_at.utc
    deadline = start + timeout
    for action in sorted(user_action_stream, key=lambda a: a.at):
        if action.at < start:
            continue
        if action.at >= deadline:
            break
        if clock is not None and action.at > clock:
            return None
        snooze = None
        if action.kind == EngagementKind.SNOOZE_SET:
            snooze = SnoozeState.set_at(action.at, action.snooze_seconds)
        return EngagementEvent(record.key, action.kind, action.at, snooze)
    if clock is not None and clock < deadline:
        return None
    return EngagementEvent(record.key, EngagementKind.NO_RESPONSE, deadline)
