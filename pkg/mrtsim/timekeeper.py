"""UTC-first timestamps, fixed-offset itineraries and local decision-point indexing.

All instants are integer seconds since the Unix epoch, in UTC. Local wall time
only exists as (utc, offset) pairs; an itinerary is a list of half-open
segments of constant offset, DST transitions and travel being just more
segments. No system timezone database is consulted.
"""

import bisect
import datetime
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from dateutil import parser as dateparser

from .exceptions import ItineraryError, ValidationError
from .model import DecisionPoint, TimezonePolicy

logger = logging.getLogger(__name__)

MAX_OFFSET_MINUTES = 14 * 60
TRAVEL = "TRAVEL"

_EPOCH_DATE = datetime.date(1970, 1, 1)


@dataclass(frozen=True)
class Segment:
    effective_from: int
    tz_offset_minutes: int
    tz_name: Optional[str] = None
    travel: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "effective_from": self.effective_from,
            "tz_offset_minutes": self.tz_offset_minutes,
            "tz_name": self.tz_name,
            "travel": self.travel,
        }


@dataclass(frozen=True)
class Stamp:
    utc: int
    tz_offset_minutes: int
    tz_name: Optional[str] = None

    def __post_init__(self):
        if abs(self.tz_offset_minutes) > MAX_OFFSET_MINUTES:
            raise ValidationError(
                "offset {} outside +/-14h".format(self.tz_offset_minutes),
                "tz_offset_minutes",
            )

    @property
    def local_seconds(self) -> int:
        return self.utc + self.tz_offset_minutes * 60

    def local_datetime(self) -> datetime.datetime:
        return datetime.datetime(1970, 1, 1) + datetime.timedelta(
            seconds=self.local_seconds
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "at": iso_utc(self.utc),
            "tz_offset_minutes": self.tz_offset_minutes,
            "tz_name": self.tz_name,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Stamp":
        return cls(
            utc=parse_iso_utc(d["at"]),
            tz_offset_minutes=d["tz_offset_minutes"],
            tz_name=d.get("tz_name"),
        )


class TravelItinerary(object):

    segments: Tuple[Segment, ...]
    _starts: List[int]

    def __init__(self, segments: Sequence[Segment]):
        if not segments:
            raise ItineraryError("an itinerary needs at least one segment", "itinerary")
        for prev, cur in zip(segments, segments[1:]):
            if cur.effective_from <= prev.effective_from:
                raise ItineraryError(
                    "segments must be sorted and non-overlapping", "itinerary"
                )
        for s in segments:
            if abs(s.tz_offset_minutes) > MAX_OFFSET_MINUTES:
                raise ItineraryError(
                    "offset {} outside +/-14h".format(s.tz_offset_minutes), "itinerary"
                )
        self.segments = tuple(segments)
        self._starts = [s.effective_from for s in self.segments]

    def __eq__(self, other):
        return isinstance(other, TravelItinerary) and self.segments == other.segments

    def __repr__(self):
        return "TravelItinerary({!r})".format(list(self.segments))

    @classmethod
    def fixed(cls, tz_offset_minutes: int, tz_name: str = None) -> "TravelItinerary":
        return cls([Segment(0, tz_offset_minutes, tz_name)])

    def segment_index(self, utc: int) -> int:
        i = bisect.bisect_right(self._starts, utc) - 1
        if i < 0:
            raise ItineraryError(
                "itinerary does not cover {}".format(iso_utc(utc)), "itinerary"
            )
        return i

    def segment_at(self, utc: int) -> Segment:
        return self.segments[self.segment_index(utc)]

    def segment_end(self, index: int) -> Optional[int]:
        if index + 1 < len(self.segments):
            return self.segments[index + 1].effective_from
        return None

    def with_segment(
        self,
        start: int,
        end: Optional[int],
        tz_offset_minutes: int,
        tz_name: str = None,
        travel: bool = False,
    ) -> "TravelItinerary":
        """Overlay a constant offset on [start, end); what was in force at end resumes."""
        if end is not None and end <= start:
            raise ItineraryError("empty overlay window", "itinerary")
        out = [s for s in self.segments if s.effective_from < start]
        out.append(Segment(start, tz_offset_minutes, tz_name, travel))
        if end is not None:
            resumed = self.segment_at(end)
            out.append(
                Segment(end, resumed.tz_offset_minutes, resumed.tz_name, resumed.travel)
            )
            out.extend(s for s in self.segments if s.effective_from > end)
        return TravelItinerary(out)

    def has_travel(self) -> bool:
        return any(s.travel for s in self.segments)

    def travel_overlaps(self, start: int, end: int) -> bool:
        for i, s in enumerate(self.segments):
            if not s.travel:
                continue
            s_end = self.segment_end(i)
            if s.effective_from < end and (s_end is None or s_end > start):
                return True
        return False

    def to_list(self) -> List[Dict[str, Any]]:
        return [s.to_dict() for s in self.segments]

    @classmethod
    def from_list(cls, items: Sequence[Dict[str, Any]]) -> "TravelItinerary":
        return cls(
            [
                Segment(
                    d["effective_from"],
                    d["tz_offset_minutes"],
                    d.get("tz_name"),
                    d.get("travel", False),
                )
                for d in items
            ]
        )


def iso_utc(utc: int) -> str:
    return (
        datetime.datetime(1970, 1, 1) + datetime.timedelta(seconds=utc)
    ).isoformat() + "Z"


def parse_iso_utc(s: str) -> int:
    # Bare local times (no "Z" / offset) are refused
    try:
        dt = dateparser.isoparse(s)
    except (TypeError, ValueError) as e:
        raise ValidationError("invalid ISO-8601 instant {!r}: {}".format(s, e))
    if dt.tzinfo is None:
        raise ValidationError("timestamp {!r} carries no UTC designator".format(s))
    delta = dt - datetime.datetime(1970, 1, 1, tzinfo=datetime.timezone.utc)
    return int(delta.total_seconds())


def stamp(now_utc: int, itinerary: TravelItinerary) -> Stamp:
    seg = itinerary.segment_at(now_utc)
    return Stamp(now_utc, seg.tz_offset_minutes, seg.tz_name)


def local_seconds_of(day: datetime.date, wall: datetime.time) -> int:
    return (day - _EPOCH_DATE).days * 86400 + wall.hour * 3600 + wall.minute * 60


def local_to_utc(local: int, itinerary: TravelItinerary) -> Tuple[int, bool]:
    """Resolve a local wall time; returns (utc, rolled_forward).

    Ambiguous wall times (fall-back, westward travel) take the first occurrence;
    nonexistent ones (spring-forward, eastward travel) roll forward minute by
    minute to the next wall time that exists.
    """
    probe = local
    for _ in range(2 * MAX_OFFSET_MINUTES + 1):
        candidates = []
        for i, s in enumerate(itinerary.segments):
            utc = probe - s.tz_offset_minutes * 60
            end = itinerary.segment_end(i)
            if utc >= s.effective_from and (end is None or utc < end):
                candidates.append(utc)
        if candidates:
            return min(candidates), probe != local
        probe += 60
    raise ItineraryError(
        "no valid instant for local time {}".format(iso_utc(local)), "itinerary"
    )


@dataclass(frozen=True)
class LocalizedPoint:
    dp: DecisionPoint
    fire: Stamp
    rolled_forward: bool = False
    excluded: bool = False
    exclusion_reason: Optional[str] = None


def day_span(
    start_date: datetime.date, day_index: int, itinerary: TravelItinerary
) -> Tuple[int, int]:
    day = start_date + datetime.timedelta(days=day_index)
    begin, _ = local_to_utc(local_seconds_of(day, datetime.time(0, 0)), itinerary)
    end, _ = local_to_utc(
        local_seconds_of(day + datetime.timedelta(days=1), datetime.time(0, 0)),
        itinerary,
    )
    return begin, end


def localize_schedule(
    schedule: Sequence[DecisionPoint],
    itinerary: Union[TravelItinerary, Mapping[str, TravelItinerary]],
    start_date: datetime.date,
    policy: TimezonePolicy = TimezonePolicy.LOCAL_INDEXED,
) -> List[LocalizedPoint]:
    out = []
    travel_days: Dict[Tuple[str, int], bool] = {}
    for dp in schedule:
        it = itinerary if isinstance(itinerary, TravelItinerary) else itinerary[dp.participant_id]
        day = start_date + datetime.timedelta(days=dp.day_index)
        utc, rolled = local_to_utc(local_seconds_of(day, dp.scheduled_local_time), it)
        if rolled:
            logger.debug(
                "{} {} #{}: local {} does not exist, rolled forward".format(
                    dp.participant_id,
                    dp.component_id,
                    dp.global_index,
                    dp.scheduled_local_time,
                )
            )
        excluded = False
        if policy == TimezonePolicy.EXCLUDE_TRAVEL and it.has_travel():
            key = (dp.participant_id, dp.day_index)
            if key not in travel_days:
                begin, end = day_span(start_date, dp.day_index, it)
                travel_days[key] = it.travel_overlaps(begin, end)
            excluded = travel_days[key]
        out.append(
            LocalizedPoint(
                dp=dp,
                fire=stamp(utc, it),
                rolled_forward=rolled,
                excluded=excluded,
                exclusion_reason=TRAVEL if excluded else None,
            )
        )
    return out
