"""Scenario files: trial protocol, behavior model, injected effects and fault script.

A scenario is a JSON document (``schema_version`` 1). Every field is validated
before a run starts; diagnostics carry the JSON path of the offending field
and, when it can be located, its line in the file.
"""

import datetime
import enum
import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .agents import AgentKind
from .exceptions import ValidationError
from .model import TrialConfig, heartsteps_trial, parse_clock
from .sync import SyncStrategy
from .timekeeper import (
    TravelItinerary,
    iso_utc,
    local_seconds_of,
    local_to_utc,
    parse_iso_utc,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class FaultKind(str, enum.Enum):
    CONNECTIVITY_LOSS = "CONNECTIVITY_LOSS"
    CAPTIVE_PORTAL = "CAPTIVE_PORTAL"
    APP_SWIPE_KILL = "APP_SWIPE_KILL"
    PHONE_POWER_OFF = "PHONE_POWER_OFF"
    TRACKER_BATTERY_DEAD = "TRACKER_BATTERY_DEAD"
    BLUETOOTH_OFF = "BLUETOOTH_OFF"
    GPS_OFF = "GPS_OFF"
    ACK_LOSS = "ACK_LOSS"
    PUSH_DROP = "PUSH_DROP"
    TIMEZONE_TRAVEL = "TIMEZONE_TRAVEL"
    DROPOUT = "DROPOUT"
    PAYLOAD_CORRUPTION = "PAYLOAD_CORRUPTION"


# kinds whose window may be left open (they last until the study ends)
_OPEN_ENDED = (FaultKind.DROPOUT,)
# the app is relaunched a minute after a swipe unless told otherwise
_DEFAULT_DURATION_S = {FaultKind.APP_SWIPE_KILL: 60}


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    # empty tuple targets every participant
    participants: Tuple[str, ...]
    start: int
    end: Optional[int] = None
    # ACK_LOSS, PUSH_DROP, PAYLOAD_CORRUPTION: chance each exchange is hit
    probability: float = 1.0
    # TIMEZONE_TRAVEL only
    tz_offset_minutes: Optional[int] = None
    tz_name: Optional[str] = None
    # TIMEZONE_TRAVEL: False keeps the phone on its old offset (not rebooted)
    phone_updates: bool = True

    def __post_init__(self):
        object.__setattr__(self, "participants", tuple(self.participants))
        if self.end is None and self.kind in _DEFAULT_DURATION_S:
            object.__setattr__(self, "end", self.start + _DEFAULT_DURATION_S[self.kind])
        if self.end is None and self.kind not in _OPEN_ENDED:
            raise ValidationError("{} needs an end".format(self.kind.value), "end")
        if self.end is not None and self.end <= self.start:
            raise ValidationError("fault window ends before it starts", "end")
        if not 0.0 <= self.probability <= 1.0:
            raise ValidationError("probability outside [0, 1]", "probability")
        if self.kind == FaultKind.TIMEZONE_TRAVEL and self.tz_offset_minutes is None:
            raise ValidationError("TIMEZONE_TRAVEL needs tz_offset_minutes", "tz_offset_minutes")

    def applies_to(self, participant_id: str) -> bool:
        return not self.participants or participant_id in self.participants

    def active_at(self, utc: int) -> bool:
        return self.start <= utc and (self.end is None or utc < self.end)

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "kind": self.kind.value,
            "participants": list(self.participants),
            "start": iso_utc(self.start),
        }
        if self.end is not None:
            d["end"] = iso_utc(self.end)
        if self.probability != 1.0:
            d["probability"] = self.probability
        if self.kind == FaultKind.TIMEZONE_TRAVEL:
            d["tz_offset_minutes"] = self.tz_offset_minutes
            d["tz_name"] = self.tz_name
            d["phone_updates"] = self.phone_updates
        return d


@dataclass(frozen=True)
class BehaviorModel:
    # walking bouts started per waking hour, before per-participant scaling
    bout_rate_per_hour: float = 0.6
    mean_bout_minutes: float = 12.0
    # steps per minute while in a bout (Poisson mean)
    bout_cadence: float = 95.0
    # sigma of the lognormal per-participant rate multiplier
    rate_heterogeneity: float = 0.3
    sleep_start: datetime.time = datetime.time(23, 0)
    sleep_end: datetime.time = datetime.time(7, 0)
    driving_probability: float = 0.3
    # chance the phone is on the body during a bout
    phone_carry_probability: float = 0.8
    phone_fit_undercount: float = 0.85
    thumbs_up_probability: float = 0.35
    thumbs_down_probability: float = 0.10
    snooze_probability: float = 0.05
    survey_time: datetime.time = datetime.time(20, 30)
    survey_response_rate: float = 0.85

    def __post_init__(self):
        for name in (
            "driving_probability",
            "phone_carry_probability",
            "phone_fit_undercount",
            "thumbs_up_probability",
            "thumbs_down_probability",
            "snooze_probability",
            "survey_response_rate",
        ):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError("{} outside [0, 1]".format(v), name)
        if self.thumbs_up_probability + self.thumbs_down_probability + self.snooze_probability > 1:
            raise ValidationError("engagement probabilities sum above 1", "thumbs_up_probability")
        if self.bout_rate_per_hour < 0 or self.bout_cadence < 0:
            raise ValidationError("rates must be non-negative", "bout_rate_per_hour")
        if self.mean_bout_minutes < 1:
            raise ValidationError("mean_bout_minutes must be >= 1", "mean_bout_minutes")

    def to_dict(self) -> Dict[str, Any]:
        d = {}
        for k, v in self.__dict__.items():
            d[k] = v.strftime("%H:%M") if isinstance(v, datetime.time) else v
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any], path: str = "behavior") -> "BehaviorModel":
        if not isinstance(d, dict):
            raise ValidationError("expected an object", path)
        known = set(cls.__dataclass_fields__)
        kwargs: Dict[str, Any] = {}
        for k, v in d.items():
            if k not in known:
                raise ValidationError("unknown field", "{}.{}".format(path, k))
            if k in ("sleep_start", "sleep_end", "survey_time"):
                kwargs[k] = parse_clock(v, "{}.{}".format(path, k))
            elif isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError("expected a number, got {!r}".format(v), "{}.{}".format(path, k))
            else:
                kwargs[k] = float(v)
        return _scoped(path, lambda: cls(**kwargs))


@dataclass(frozen=True)
class EffectConfig:
    """Steps added by a delivered treatment over its proximal window."""

    delta: float = 0.0
    # used instead of delta on Saturdays and Sundays
    weekend_delta: Optional[float] = None
    # delta falls linearly to zero at this study day
    decay_to_day: Optional[int] = None
    # "sedentary break" content adds this instead of delta
    break_delta: Optional[float] = None

    def __post_init__(self):
        if self.decay_to_day is not None and self.decay_to_day < 1:
            raise ValidationError("decay_to_day must be >= 1", "decay_to_day")
        for name in ("delta", "weekend_delta", "break_delta"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValidationError("effects add steps, {} must be >= 0".format(name), name)

    def effect_for(self, day_index: int, weekend: bool, flavour: Optional[str]) -> float:
        base = self.delta
        if flavour == "break" and self.break_delta is not None:
            base = self.break_delta
        if weekend and self.weekend_delta is not None:
            base = self.weekend_delta
        if self.decay_to_day is not None:
            base *= max(0.0, 1.0 - day_index / self.decay_to_day)
        return base

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: Dict[str, Any], path: str) -> "EffectConfig":
        if not isinstance(d, dict):
            raise ValidationError("expected an object", path)
        for k in d:
            if k not in cls.__dataclass_fields__:
                raise ValidationError("unknown field", "{}.{}".format(path, k))
        return _scoped(path, lambda: cls(**d))


@dataclass(frozen=True)
class PushModel:
    median_s: float = 15.0
    sigma: float = 1.0
    drop_probability: float = 0.01
    enabled: bool = True
    # pushes wait this long for an unreachable phone before being dropped
    ttl_s: int = 30 * 60

    def __post_init__(self):
        if self.median_s <= 0 or self.sigma < 0:
            raise ValidationError("median_s must be > 0 and sigma >= 0", "push")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValidationError("drop_probability outside [0, 1]", "push.drop_probability")

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: Dict[str, Any], path: str = "push") -> "PushModel":
        if not isinstance(d, dict):
            raise ValidationError("expected an object", path)
        for k in d:
            if k not in cls.__dataclass_fields__:
                raise ValidationError("unknown field", "{}.{}".format(path, k))
        return _scoped(path, lambda: cls(**d))


@dataclass(frozen=True)
class Region:
    lat: float
    lon: float
    radius_m: float

    def contains(self, lat: float, lon: float) -> bool:
        return haversine_m(self.lat, self.lon, lat, lon) <= self.radius_m


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    r = 6371000.0
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * r * math.asin(math.sqrt(a))


@dataclass(frozen=True)
class RegionLayout:
    """Home and work regions per participant, laid out on a grid around a city."""

    base_lat: float = 40.7
    base_lon: float = -74.0
    radius_m: float = 200.0
    # distance between neighbouring participants' homes
    spacing_deg: float = 0.01
    # work lies this far east of home
    commute_deg: float = 0.05

    def home(self, index: int) -> Region:
        return Region(self.base_lat + index * self.spacing_deg, self.base_lon, self.radius_m)

    def work(self, index: int) -> Region:
        return Region(
            self.base_lat + index * self.spacing_deg,
            self.base_lon + self.commute_deg,
            self.radius_m,
        )

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def _scoped(path: str, build):
    try:
        return build()
    except ValidationError as e:
        if e.field is not None and not e.field.startswith(path):
            raise ValidationError(str(e).split(": ", 1)[-1], path + "." + e.field) from None
        raise
    except TypeError as e:
        raise ValidationError(str(e), path) from None


@dataclass(frozen=True)
class ScenarioConfig:
    trial: TrialConfig
    behavior: BehaviorModel = BehaviorModel()
    # component id -> injected effect
    effects: Dict[str, EffectConfig] = field(default_factory=dict)
    faults: Tuple[FaultSpec, ...] = ()
    agent: AgentKind = AgentKind.PHONE
    seed: int = 0
    push: PushModel = PushModel()
    sync: SyncStrategy = field(default_factory=SyncStrategy, compare=False)
    home_itinerary: TravelItinerary = field(
        default_factory=lambda: TravelItinerary.fixed(-240, "EDT")
    )
    regions: RegionLayout = RegionLayout()
    freshness_bound_s: int = 2 * 3600
    wear_window_s: int = 4 * 3600

    def __post_init__(self):
        object.__setattr__(self, "faults", tuple(self.faults))
        for cid in self.effects:
            self.trial.component(cid)
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer", "seed")
        known = set(self.trial.participant_ids())
        for i, f in enumerate(self.faults):
            for pid in f.participants:
                if pid not in known:
                    raise ValidationError(
                        "unknown participant {!r}".format(pid), "faults[{}].participants".format(i)
                    )

    def effect(self, component_id: str) -> EffectConfig:
        return self.effects.get(component_id, EffectConfig())

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)

    def faults_for(self, participant_id: str, kind: FaultKind = None) -> List[FaultSpec]:
        return [
            f
            for f in self.faults
            if f.applies_to(participant_id) and (kind is None or f.kind == kind)
        ]

    def has_travel(self) -> bool:
        return any(f.kind == FaultKind.TIMEZONE_TRAVEL for f in self.faults)

    def itinerary_for(self, participant_id: str, phone: bool = False) -> TravelItinerary:
        """True itinerary, or the one the phone clock follows when phone is set."""
        it = self.home_itinerary
        travel = sorted(
            self.faults_for(participant_id, FaultKind.TIMEZONE_TRAVEL), key=lambda f: f.start
        )
        for f in travel:
            if phone and not f.phone_updates:
                continue
            it = it.with_segment(f.start, f.end, f.tz_offset_minutes, f.tz_name, travel=True)
        return it

    def dropout_at(self, participant_id: str) -> Optional[int]:
        starts = [f.start for f in self.faults_for(participant_id, FaultKind.DROPOUT)]
        return min(starts) if starts else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "trial": self.trial.to_dict(),
            "behavior": self.behavior.to_dict(),
            "effects": {k: v.to_dict() for k, v in sorted(self.effects.items())},
            "faults": [f.to_dict() for f in self.faults],
            "agent": self.agent.value,
            "seed": self.seed,
            "push": self.push.to_dict(),
            "sync": self.sync.to_dict(),
            "home_itinerary": self.home_itinerary.to_list(),
            "regions": self.regions.to_dict(),
            "freshness_bound_s": self.freshness_bound_s,
            "wear_window_s": self.wear_window_s,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ValidationError("scenario must be a JSON object")
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValidationError(
                "unsupported schema_version {!r}, expected {}".format(version, SCHEMA_VERSION),
                "schema_version",
            )
        allowed = {
            "schema_version", "trial", "behavior", "effects", "faults", "agent", "seed",
            "push", "sync", "home_itinerary", "regions", "freshness_bound_s", "wear_window_s",
        }  # fmt: skip
        for k in d:
            if k not in allowed:
                raise ValidationError("unknown field", k)
        if "trial" not in d:
            raise ValidationError("missing field", "trial")
        trial = TrialConfig.from_dict(d["trial"], "trial")
        kwargs: Dict[str, Any] = {"trial": trial}

        if "home_itinerary" in d:
            kwargs["home_itinerary"] = _scoped(
                "home_itinerary", lambda: TravelItinerary.from_list(d["home_itinerary"])
            )
        home = kwargs.get("home_itinerary") or TravelItinerary.fixed(-240, "EDT")
        if "behavior" in d:
            kwargs["behavior"] = BehaviorModel.from_dict(d["behavior"])
        if "effects" in d:
            if not isinstance(d["effects"], dict):
                raise ValidationError("expected an object", "effects")
            effects = {}
            for cid, ed in d["effects"].items():
                effects[cid] = EffectConfig.from_dict(ed, "effects.{}".format(cid))
            kwargs["effects"] = effects
        if "faults" in d:
            if not isinstance(d["faults"], list):
                raise ValidationError("expected a list", "faults")
            kwargs["faults"] = tuple(
                _fault_from_dict(fd, "faults[{}]".format(i), trial, home)
                for i, fd in enumerate(d["faults"])
            )
        if "agent" in d:
            try:
                kwargs["agent"] = AgentKind(d["agent"])
            except ValueError:
                raise ValidationError("unknown agent {!r}".format(d["agent"]), "agent") from None
        if "seed" in d:
            if isinstance(d["seed"], bool) or not isinstance(d["seed"], int):
                raise ValidationError("expected an integer", "seed")
            kwargs["seed"] = d["seed"]
        if "push" in d:
            kwargs["push"] = PushModel.from_dict(d["push"])
        if "sync" in d:
            if not isinstance(d["sync"], dict):
                raise ValidationError("expected an object", "sync")
            kwargs["sync"] = SyncStrategy.from_dict(d["sync"])
        if "regions" in d:
            kwargs["regions"] = _scoped("regions", lambda: RegionLayout(**d["regions"]))
        for k in ("freshness_bound_s", "wear_window_s"):
            if k in d:
                if isinstance(d[k], bool) or not isinstance(d[k], int) or d[k] <= 0:
                    raise ValidationError("expected a positive integer", k)
                kwargs[k] = d[k]
        return cls(**kwargs)

    @classmethod
    def heartsteps_default(
        cls,
        seed: int = 0,
        delta: float = 30.0,
        participant_count: int = 37,
        study_days: int = 42,
    ) -> "ScenarioConfig":
        return cls(
            trial=heartsteps_trial(participant_count, study_days),
            effects={"suggestions": EffectConfig(delta=delta)},
            seed=seed,
        )


def resolve_instant(
    value: Any, field_path: str, trial: TrialConfig, itinerary: TravelItinerary
) -> int:
    """ISO-8601 UTC string, or {"day": d, "time": "HH:MM"} in home local time."""
    if isinstance(value, str):
        return parse_iso_utc_at(value, field_path)
    if isinstance(value, dict):
        day = value.get("day")
        if isinstance(day, bool) or not isinstance(day, int) or day < 0:
            raise ValidationError("day must be a non-negative integer", field_path + ".day")
        wall = parse_clock(value.get("time", "00:00"), field_path + ".time")
        utc, _ = local_to_utc(local_seconds_of(trial.local_date(day), wall), itinerary)
        return utc
    raise ValidationError("expected an ISO-8601 UTC instant or {day, time}", field_path)


def parse_iso_utc_at(value: str, field_path: str) -> int:
    try:
        return parse_iso_utc(value)
    except ValidationError as e:
        raise ValidationError(str(e), field_path) from None


def _fault_from_dict(
    fd: Dict[str, Any], path: str, trial: TrialConfig, home: TravelItinerary
) -> FaultSpec:
    if not isinstance(fd, dict):
        raise ValidationError("expected an object", path)
    try:
        kind = FaultKind(fd.get("kind"))
    except ValueError:
        raise ValidationError("unknown fault kind {!r}".format(fd.get("kind")), path + ".kind") from None
    if "start" not in fd:
        raise ValidationError("missing field", path + ".start")
    start = resolve_instant(fd["start"], path + ".start", trial, home)
    end = None
    if "end" in fd:
        end = resolve_instant(fd["end"], path + ".end", trial, home)
    elif "duration_minutes" in fd:
        end = start + int(fd["duration_minutes"]) * 60
    participants = fd.get("participants", [])
    if participants == "all":
        participants = []
    if not isinstance(participants, list):
        raise ValidationError("expected a list of participant ids or \"all\"", path + ".participants")
    return _scoped(
        path,
        lambda: FaultSpec(
            kind=kind,
            participants=tuple(participants),
            start=start,
            end=end,
            probability=float(fd.get("probability", 1.0)),
            tz_offset_minutes=fd.get("tz_offset_minutes"),
            tz_name=fd.get("tz_name"),
            phone_updates=bool(fd.get("phone_updates", True)),
        ),
    )


_WS = re.compile(r"[ \t\n\r]*")
_PATH_STEP = re.compile(r"([^.\[\]]+)|\[(\d+)\]")


def _skip(text: str, pos: int, sep: str = "") -> int:
    pos = _WS.match(text, pos).end()  # type: ignore
    if sep and text.startswith(sep, pos):
        pos = _WS.match(text, pos + 1).end()  # type: ignore
    return pos


def _line_of(text: str, field_path: Optional[str]) -> Optional[int]:
    """Line of the deepest part of ``field_path`` present in ``text``.

    Walks the path key by key and index by index, so repeated keys such as
    ``kind`` resolve to the right element. ``text`` must be valid JSON.
    """
    if not field_path:
        return None
    decoder = json.JSONDecoder()
    pos = found = _skip(text, 0)
    for name, index in _PATH_STEP.findall(field_path):
        if name:
            if not text.startswith("{", pos):
                break
            pos = _skip(text, pos + 1)
            while text.startswith('"', pos):
                key_at = pos
                key, pos = decoder.raw_decode(text, pos)
                pos = _skip(text, pos, ":")
                if key == name:
                    found = key_at
                    break
                _, pos = decoder.raw_decode(text, pos)
                pos = _skip(text, pos, ",")
            else:
                break
        else:
            if not text.startswith("[", pos):
                break
            pos = _skip(text, pos + 1)
            for _ in range(int(index)):
                if text.startswith("]", pos):
                    break
                _, pos = decoder.raw_decode(text, pos)
                pos = _skip(text, pos, ",")
            if text.startswith("]", pos):
                break
            found = pos
    return text.count("\n", 0, found) + 1


def loads_scenario(text: str) -> ScenarioConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(
            "invalid JSON: {} (column {})".format(e.msg, e.colno), line=e.lineno
        ) from None
    try:
        return ScenarioConfig.from_dict(d)
    except ValidationError as e:
        if e.line is not None:
            raise
        message = str(e)
        if e.field is not None:
            message = message.split(": ", 1)[-1]
        raise ValidationError(message, e.field, _line_of(text, e.field)) from None


def load_scenario(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    scenario = loads_scenario(text)
    logger.info(
        "Loaded scenario {}: {} participants x {} days, {} fault(s), agent {}".format(
            path,
            scenario.trial.participant_count,
            scenario.trial.study_days,
            len(scenario.faults),
            scenario.agent.value,
        )
    )
    return scenario


_RANDOM_KINDS = (
    FaultKind.CONNECTIVITY_LOSS,
    FaultKind.CAPTIVE_PORTAL,
    FaultKind.APP_SWIPE_KILL,
    FaultKind.PHONE_POWER_OFF,
    FaultKind.TRACKER_BATTERY_DEAD,
    FaultKind.BLUETOOTH_OFF,
    FaultKind.GPS_OFF,
    FaultKind.ACK_LOSS,
    FaultKind.PUSH_DROP,
    FaultKind.TIMEZONE_TRAVEL,
    FaultKind.DROPOUT,
    FaultKind.PAYLOAD_CORRUPTION,
)


def random_fault_schedule(
    seed: int, scenario: ScenarioConfig, count: int, kinds: Sequence[FaultKind] = _RANDOM_KINDS
) -> Tuple[FaultSpec, ...]:
    """Draw a fault script over the study period, one participant per fault."""
    rng = np.random.default_rng(seed)
    trial = scenario.trial
    pids = trial.participant_ids()
    horizon = trial.study_days * 86400
    begin, _ = local_to_utc(
        local_seconds_of(trial.start_date, datetime.time(0, 0)), scenario.home_itinerary
    )
    faults = []
    for _ in range(count):
        kind = kinds[int(rng.integers(len(kinds)))]
        pid = pids[int(rng.integers(len(pids)))]
        start = begin + int(rng.integers(horizon)) // 60 * 60
        duration = int(rng.integers(10, 8 * 60)) * 60
        end: Optional[int] = start + duration
        kwargs: Dict[str, Any] = {}
        if kind == FaultKind.DROPOUT:
            end = None
        elif kind == FaultKind.APP_SWIPE_KILL:
            end = start + 60 * int(rng.integers(1, 30))
        elif kind in (FaultKind.ACK_LOSS, FaultKind.PUSH_DROP, FaultKind.PAYLOAD_CORRUPTION):
            kwargs["probability"] = float(rng.choice([0.5, 1.0]))
        elif kind == FaultKind.TIMEZONE_TRAVEL:
            end = start + int(rng.integers(1, 5)) * 86400
            kwargs["tz_offset_minutes"] = int(rng.choice([-600, -420, 60, 120]))
            kwargs["tz_name"] = "TRAVEL"
            kwargs["phone_updates"] = bool(rng.random() < 0.7)
        faults.append(FaultSpec(kind, (pid,), start, end, **kwargs))
    return tuple(faults)
