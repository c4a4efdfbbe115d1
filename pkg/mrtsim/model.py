"""Trial protocol, participants, context and the decision-point schedule."""

import datetime
import enum
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .exceptions import UnknownComponent, ValidationError


class TimezonePolicy(str, enum.Enum):
    LOCAL_INDEXED = "LOCAL_INDEXED"
    EXCLUDE_TRAVEL = "EXCLUDE_TRAVEL"


class WindowKind(str, enum.Enum):
    POST_WINDOW_MINUTES = "POST_WINDOW_MINUTES"
    NEXT_DAY_TOTAL = "NEXT_DAY_TOTAL"


class LocationCategory(str, enum.Enum):
    HOME = "HOME"
    WORK = "WORK"
    OTHER = "OTHER"
    UNKNOWN = "UNKNOWN"


class Weather(str, enum.Enum):
    SUNNY = "SUNNY"
    CLOUDY = "CLOUDY"
    RAIN = "RAIN"
    SNOW = "SNOW"
    UNKNOWN = "UNKNOWN"


class Connection(str, enum.Enum):
    ONLINE = "ONLINE"
    OFFLINE = "OFFLINE"
    CAPTIVE_PORTAL = "CAPTIVE_PORTAL"


DAY_NAMES = ("MON", "TUE", "WED", "THU", "FRI", "SAT", "SUN")


def parse_probability(value: Any, field_path: str = None) -> Decimal:
    # floats go through str() so 0.6 stays "0.6" and not 0.59999...
    if isinstance(value, bool):
        raise ValidationError("probability must be a number", field_path)
    try:
        p = Decimal(str(value))
    except (InvalidOperation, ValueError):
        raise ValidationError(
            "invalid probability {!r}".format(value), field_path
        ) from None
    if not p.is_finite() or p < 0 or p > 1:
        raise ValidationError(
            "probability {} outside [0, 1]".format(value), field_path
        )
    return p


def parse_clock(value: str, field_path: str = None) -> datetime.time:
    try:
        return datetime.time.fromisoformat(value)
    except (TypeError, ValueError):
        raise ValidationError(
            "invalid wall-clock time {!r}, expected HH:MM".format(value), field_path
        ) from None


@dataclass(frozen=True)
class ProximalWindow:
    kind: WindowKind
    minutes: Optional[int] = None

    def __post_init__(self):
        if self.kind == WindowKind.POST_WINDOW_MINUTES:
            if self.minutes is None or self.minutes < 1:
                raise ValidationError(
                    "POST_WINDOW_MINUTES needs minutes >= 1", "proximal_window"
                )
        elif self.minutes is not None:
            raise ValidationError(
                "NEXT_DAY_TOTAL takes no minutes", "proximal_window"
            )

    @classmethod
    def post_window(cls, minutes: int) -> "ProximalWindow":
        return cls(WindowKind.POST_WINDOW_MINUTES, minutes)

    @classmethod
    def next_day_total(cls) -> "ProximalWindow":
        return cls(WindowKind.NEXT_DAY_TOTAL)

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"kind": self.kind.value}
        if self.minutes is not None:
            d["minutes"] = self.minutes
        return d


@dataclass(frozen=True)
class ComponentSpec:
    id: str
    decision_points_per_day: int
    randomization_probability: Decimal
    proximal_window: ProximalWindow
    # Explicit local slot times, otherwise evenly spaced in the waking window
    slot_times: Optional[Tuple[datetime.time, ...]] = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("component id must not be empty", "id")
        if self.decision_points_per_day < 1:
            raise ValidationError(
                "decision_points_per_day must be >= 1", "decision_points_per_day"
            )
        object.__setattr__(
            self,
            "randomization_probability",
            parse_probability(
                self.randomization_probability, "randomization_probability"
            ),
        )
        if self.slot_times is not None:
            if len(self.slot_times) != self.decision_points_per_day:
                raise ValidationError(
                    "{} slot_times given for {} decision points per day".format(
                        len(self.slot_times), self.decision_points_per_day
                    ),
                    "slot_times",
                )
            if list(self.slot_times) != sorted(set(self.slot_times)):
                raise ValidationError(
                    "slot_times must be strictly increasing", "slot_times"
                )

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "id": self.id,
            "decision_points_per_day": self.decision_points_per_day,
            "randomization_probability": str(self.randomization_probability),
            "proximal_window": self.proximal_window.to_dict(),
        }
        if self.slot_times is not None:
            d["slot_times"] = [t.strftime("%H:%M") for t in self.slot_times]
        return d


@dataclass(frozen=True)
class TrialConfig:
    participant_count: int
    study_days: int
    components: Tuple[ComponentSpec, ...]
    timezone_policy: TimezonePolicy = TimezonePolicy.LOCAL_INDEXED
    start_date: datetime.date = datetime.date(2015, 8, 3)
    waking_start: datetime.time = datetime.time(8, 0)
    waking_end: datetime.time = datetime.time(20, 0)

    def __post_init__(self):
        if self.participant_count < 1:
            raise ValidationError("participant_count must be >= 1", "participant_count")
        if self.study_days < 1:
            raise ValidationError("study_days must be >= 1", "study_days")
        object.__setattr__(self, "components", tuple(self.components))
        ids = [c.id for c in self.components]
        if len(ids) != len(set(ids)):
            raise ValidationError("component identifiers must be unique", "components")
        if self.waking_end <= self.waking_start:
            raise ValidationError("waking window is empty", "waking_window")

    def participant_ids(self) -> List[str]:
        return [participant_id(i, self.participant_count) for i in range(self.participant_count)]

    def component(self, component_id: str) -> ComponentSpec:
        for c in self.components:
            if c.id == component_id:
                return c
        raise UnknownComponent(component_id)

    def slot_times(self, component_id: str) -> Tuple[datetime.time, ...]:
        c = self.component(component_id)
        if c.slot_times is not None:
            return c.slot_times
        return evenly_spaced_slots(
            c.decision_points_per_day, self.waking_start, self.waking_end
        )

    def local_date(self, day_index: int) -> datetime.date:
        return self.start_date + datetime.timedelta(days=day_index)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "participant_count": self.participant_count,
            "study_days": self.study_days,
            "components": [c.to_dict() for c in self.components],
            "timezone_policy": self.timezone_policy.value,
            "start_date": self.start_date.isoformat(),
            "waking_window": [
                self.waking_start.strftime("%H:%M"),
                self.waking_end.strftime("%H:%M"),
            ],
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any], path: str = "trial") -> "TrialConfig":
        if not isinstance(d, dict):
            raise ValidationError("expected an object", path)
        components = []
        for i, cd in enumerate(_require(d, "components", list, path)):
            cpath = "{}.components[{}]".format(path, i)
            components.append(_component_from_dict(cd, cpath))
        kwargs: Dict[str, Any] = {}
        if "timezone_policy" in d:
            try:
                kwargs["timezone_policy"] = TimezonePolicy(d["timezone_policy"])
            except ValueError:
                raise ValidationError(
                    "unknown policy {!r}".format(d["timezone_policy"]),
                    path + ".timezone_policy",
                ) from None
        if "start_date" in d:
            try:
                kwargs["start_date"] = datetime.date.fromisoformat(d["start_date"])
            except (TypeError, ValueError):
                raise ValidationError(
                    "invalid date {!r}".format(d["start_date"]), path + ".start_date"
                ) from None
        if "waking_window" in d:
            ww = d["waking_window"]
            if not isinstance(ww, list) or len(ww) != 2:
                raise ValidationError(
                    "expected [start, end]", path + ".waking_window"
                )
            kwargs["waking_start"] = parse_clock(ww[0], path + ".waking_window[0]")
            kwargs["waking_end"] = parse_clock(ww[1], path + ".waking_window[1]")
        try:
            return cls(
                participant_count=_require(d, "participant_count", int, path),
                study_days=_require(d, "study_days", int, path),
                components=tuple(components),
                **kwargs
            )
        except ValidationError as e:
            if e.field is not None and not e.field.startswith(path):
                raise ValidationError(str(e).split(": ", 1)[-1], path + "." + e.field)
            raise


def _require(d: Dict[str, Any], key: str, typ: Any, path: str) -> Any:
    if key not in d:
        raise ValidationError("missing field", "{}.{}".format(path, key))
    value = d[key]
    if typ is int and isinstance(value, bool) or not isinstance(value, typ):
        names = typ if isinstance(typ, tuple) else (typ,)
        raise ValidationError(
            "expected {}, got {!r}".format("/".join(t.__name__ for t in names), value),
            "{}.{}".format(path, key),
        )
    return value


def _component_from_dict(cd: Dict[str, Any], path: str) -> ComponentSpec:
    if not isinstance(cd, dict):
        raise ValidationError("expected an object", path)
    wd = _require(cd, "proximal_window", dict, path)
    try:
        kind = WindowKind(wd.get("kind"))
    except ValueError:
        raise ValidationError(
            "unknown window kind {!r}".format(wd.get("kind")),
            path + ".proximal_window.kind",
        ) from None
    slot_times = None
    if "slot_times" in cd:
        slot_times = tuple(
            parse_clock(t, "{}.slot_times[{}]".format(path, i))
            for i, t in enumerate(cd["slot_times"])
        )
    try:
        return ComponentSpec(
            id=_require(cd, "id", str, path),
            decision_points_per_day=_require(cd, "decision_points_per_day", int, path),
            randomization_probability=parse_probability(
                _require(cd, "randomization_probability", (str, int, float), path),
                path + ".randomization_probability",
            ),
            proximal_window=ProximalWindow(kind, wd.get("minutes")),
            slot_times=slot_times,
        )
    except ValidationError as e:
        if e.field is not None and not e.field.startswith(path):
            raise ValidationError(str(e).split(": ", 1)[-1], path + "." + e.field)
        raise


def participant_id(index: int, participant_count: int = 1) -> str:
    # zero-padded wide enough that lexical order is numeric order
    width = max(3, len(str(participant_count)))
    return "P{:0{}d}".format(index + 1, width)


def evenly_spaced_slots(
    n: int, start: datetime.time, end: datetime.time
) -> Tuple[datetime.time, ...]:
    start_min = start.hour * 60 + start.minute
    end_min = end.hour * 60 + end.minute
    if n == 1:
        # a single daily slot sits at the end of the waking window (evening)
        return (end,)
    step = (end_min - start_min) / (n - 1)
    out = []
    for i in range(n):
        m = int(round(start_min + i * step))
        out.append(datetime.time(m // 60, m % 60))
    return tuple(out)


@dataclass(frozen=True, order=True)
class DecisionPoint:
    participant_id: str
    component_id: str
    global_index: int
    day_index: int = field(compare=False)
    slot_index: int = field(compare=False)
    scheduled_local_time: datetime.time = field(compare=False)

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.participant_id, self.component_id, self.global_index)


@dataclass(frozen=True)
class ContextSnapshot:
    captured_at: int
    location_category: LocationCategory
    weather: Weather
    recent_activity: bool
    # None when the connection state could not be read
    connection: Optional[Connection]
    staleness: int = 0
    driving: bool = False
    # Raw (lat, lon); never leaves the phone-side log, see pipeline.coarsen_location
    coordinates: Optional[Tuple[float, float]] = None
    capture_failed: bool = False

    def __post_init__(self):
        if self.staleness < 0:
            raise ValidationError("staleness must be >= 0", "staleness")
        if (
            self.location_category == LocationCategory.UNKNOWN
            and self.coordinates is not None
            and not self.capture_failed
        ):
            raise ValidationError(
                "UNKNOWN location only allowed when capture failed",
                "location_category",
            )

    def aged(self, now: int) -> "ContextSnapshot":
        return replace(self, staleness=max(0, now - self.captured_at))

    @classmethod
    def failed(cls, now: int) -> "ContextSnapshot":
        return cls(
            captured_at=now,
            location_category=LocationCategory.UNKNOWN,
            weather=Weather.UNKNOWN,
            recent_activity=False,
            connection=None,
            capture_failed=True,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "captured_at": self.captured_at,
            "location_category": self.location_category.value,
            "weather": self.weather.value,
            "recent_activity": self.recent_activity,
            "connection": self.connection.value if self.connection else None,
            "staleness": self.staleness,
            "driving": self.driving,
            "coordinates": list(self.coordinates) if self.coordinates else None,
            "capture_failed": self.capture_failed,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ContextSnapshot":
        return cls(
            captured_at=d["captured_at"],
            location_category=LocationCategory(d["location_category"]),
            weather=Weather(d["weather"]),
            recent_activity=d["recent_activity"],
            connection=Connection(d["connection"]) if d["connection"] else None,
            staleness=d["staleness"],
            driving=d["driving"],
            coordinates=tuple(d["coordinates"]) if d["coordinates"] else None,  # type: ignore
            capture_failed=d["capture_failed"],
        )


NO_RESPONSE = "NO_RESPONSE"


@dataclass(frozen=True)
class DailyObservation:
    participant_id: str
    day_index: int
    measure_id: str
    # numeric score, or the explicit NO_RESPONSE marker
    value: Any
    recorded_at: int


def clean_daily(observations: Sequence[DailyObservation]) -> List[DailyObservation]:
    """Keep one value per (participant, day, measure): the last one recorded."""
    latest: Dict[Tuple[str, int, str], DailyObservation] = {}
    for obs in observations:
        key = (obs.participant_id, obs.day_index, obs.measure_id)
        if key not in latest or obs.recorded_at >= latest[key].recorded_at:
            latest[key] = obs
    return [latest[k] for k in sorted(latest)]


def build_schedule(config: TrialConfig) -> List[DecisionPoint]:
    schedule = []
    components = sorted(config.components, key=lambda c: c.id)
    for pid in config.participant_ids():
        for c in components:
            times = config.slot_times(c.id)
            for day in range(config.study_days):
                for slot in range(c.decision_points_per_day):
                    schedule.append(
                        DecisionPoint(
                            participant_id=pid,
                            component_id=c.id,
                            global_index=day * c.decision_points_per_day + slot,
                            day_index=day,
                            slot_index=slot,
                            scheduled_local_time=times[slot],
                        )
                    )
    return schedule


def count_decision_points(
    config: TrialConfig,
    component_id: str,
    per_participant: bool = False,
    participant_ids: Optional[Sequence[str]] = None,
) -> int:
    c = config.component(component_id)
    per = config.study_days * c.decision_points_per_day
    if per_participant:
        return per
    if participant_ids is not None:
        known = set(config.participant_ids())
        return per * len([p for p in participant_ids if p in known])
    return config.participant_count * per


def heartsteps_trial(
    participant_count: int = 37, study_days: int = 42
) -> TrialConfig:
    return TrialConfig(
        participant_count=participant_count,
        study_days=study_days,
        components=(
            ComponentSpec(
                id="suggestions",
                decision_points_per_day=5,
                randomization_probability=Decimal("0.6"),
                proximal_window=ProximalWindow.post_window(30),
            ),
            ComponentSpec(
                id="planning",
                decision_points_per_day=1,
                randomization_probability=Decimal("0.5"),
                proximal_window=ProximalWindow.next_day_total(),
                slot_times=(datetime.time(21, 0),),
            ),
        ),
    )
