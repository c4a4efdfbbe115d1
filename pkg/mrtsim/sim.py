"""Deterministic discrete-event simulation of an MRT deployment.

Participants walk according to a seeded bout process, phones capture context,
randomize or receive pushes, sync through the outbox, and a scripted fault
catalog perturbs devices and transport. Everything the analyst would see ends
up in the EventLog; the truth (per-minute steps, applied effects, causes of
missing data, every payload generated) goes to the GroundTruthLedger.
"""

import copy
import gzip
import hashlib
import heapq
import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from . import streams
from .agents import (
    PREFETCH_LEAD_S,
    TAILORING_WINDOW_S,
    AgentKind,
    EngagementEvent,
    EngagementKind,
    LognormalPushChannel,
    PrefetchedContent,
    PushChannelInterface,
    RandomizationRecord,
    UserAction,
    content_flavour,
    engage,
    missed_record,
    phone_agent_step,
    prefetch,
    server_agent_prepare,
    server_agent_step,
)
from .availability import SnoozeState, evaluate_availability
from .eventlog import EventLog
from .exceptions import ValidationError
from .jsonc import as_canonical_json_string
from .model import (
    Connection,
    ContextSnapshot,
    LocationCategory,
    Weather,
    WindowKind,
    build_schedule,
)
from .payloads import PayloadKind
from .pipeline import coarsen_location, prorated_total, round_half_up
from .scenario import FaultKind, FaultSpec, ScenarioConfig
from .sync import Outbox, ServerStore, SyncEnvelope, attempt_send
from .timekeeper import (
    LocalizedPoint,
    Stamp,
    TravelItinerary,
    day_span,
    local_seconds_of,
    local_to_utc,
    localize_schedule,
    stamp,
)
from .transcript import TranscriptLogger

logger = logging.getLogger(__name__)

# a minute counts as walking at or above this many steps
WALKING_STEPS_PER_MINUTE = 20
TRACKER_BATCH_S = 3600

# tie-break between events at the same instant
_FAULT_START = 0
_FAULT_END = 1
_TRACKER_TICK = 2
_PREFETCH = 3
_DECISION = 4
_PUSH_ARRIVAL = 5
_ENGAGEMENT = 6
_SURVEY = 7
_SYNC = 8
_CLOSE_OUT = 9

_WEATHER_TAGS = (Weather.SUNNY, Weather.CLOUDY, Weather.RAIN, Weather.SNOW)
_WEATHER_P = (0.5, 0.3, 0.2, 0.0)

# what a garbled transfer loses, per payload kind
_GARBLE_FIELD = {
    PayloadKind.RANDOMIZATION.value: "outcome",
    PayloadKind.ENGAGEMENT.value: "kind",
    PayloadKind.CONTEXT.value: "snapshot",
    PayloadKind.DAILY_SURVEY.value: "responses",
    PayloadKind.SYNC_MANIFEST.value: "sample_count",
}


def garble(kind: str, body: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(body)
    if kind in (PayloadKind.TRACKER_SAMPLES.value, PayloadKind.PHONE_FIT_SAMPLES.value):
        for s in out.get("samples", []):
            s.pop("steps", None)
    else:
        out.pop(_GARBLE_FIELD[kind], None)
    return out


@dataclass(frozen=True)
class EffectApplied:
    participant_id: str
    component_id: str
    global_index: int
    delivered_at: int
    steps: int
    # minutes starting in [window_start, window_end) received the steps
    window_start: int
    window_end: int

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


class GroundTruthLedger(object):
    """Simulator-private truth. Append-only; faults never write to it."""

    horizon_start: int
    steps: Dict[str, np.ndarray]
    effects: List[EffectApplied]
    causes: List[Dict[str, Any]]
    generated: "OrderedDict[str, Dict[str, Any]]"
    lost: List[str]
    tracker: Dict[str, Dict[str, int]]

    def __init__(self, horizon_start: int):
        self.horizon_start = horizon_start
        self.steps = {}
        self.effects = []
        self.causes = []
        self.generated = OrderedDict()
        self.lost = []
        self.tracker = {}

    def minute_of(self, utc: int) -> int:
        return (utc - self.horizon_start) // 60

    def steps_between(self, participant_id: str, start: int, end: int) -> int:
        """True steps over [start, end), minutes on the boundary prorated."""
        arr = self.steps[participant_id]
        lo = max(0, self.minute_of(start))
        hi = min(len(arr), -(-(end - self.horizon_start) // 60))
        idx = np.flatnonzero(arr[lo:hi]) + lo
        starts = self.horizon_start + idx * 60
        return round_half_up(prorated_total(starts, starts + 60, arr[idx], start, end))

    def to_dict(self) -> Dict[str, Any]:
        steps = {}
        for pid in sorted(self.steps):
            arr = self.steps[pid]
            idx = np.flatnonzero(arr)
            steps[pid] = [[int(i), int(arr[i])] for i in idx]
        return {
            "horizon_start": self.horizon_start,
            "steps": steps,
            "effects": [e.to_dict() for e in self.effects],
            "causes": self.causes,
            "generated": self.generated,
            "lost": self.lost,
            "tracker": self.tracker,
        }

    def write(self, directory: str, name: str = "ledger") -> Tuple[str, str]:
        """Write the gzip ledger plus a sha256 seal next to it."""
        data = as_canonical_json_string(self.to_dict()).encode("utf-8")
        filename = name + ".json.gz"
        with open(os.path.join(directory, filename), "wb") as f:
            with gzip.GzipFile(fileobj=f, mode="w", mtime=0) as fgz:
                fgz.write(data)
        with open(os.path.join(directory, filename), "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()
        seal = name + ".sha256"
        with open(os.path.join(directory, seal), "w", encoding="ascii") as f:
            f.write("{}  {}\n".format(digest, filename))
        return filename, digest


def verify_seal(directory: str, name: str = "ledger") -> bool:
    with open(os.path.join(directory, name + ".sha256"), "r", encoding="ascii") as f:
        digest, filename = f.read().split()
    with open(os.path.join(directory, filename), "rb") as f:
        return hashlib.sha256(f.read()).hexdigest() == digest


def offsets_per_minute(itinerary: TravelItinerary, utc: np.ndarray) -> np.ndarray:
    """Offset in seconds in force at each instant."""
    starts = np.array([s.effective_from for s in itinerary.segments], dtype=np.int64)
    offsets = np.array([s.tz_offset_minutes * 60 for s in itinerary.segments], dtype=np.int64)
    idx = np.clip(np.searchsorted(starts, utc, side="right") - 1, 0, None)
    return offsets[idx]


def bout_process(
    rng: np.random.Generator,
    n_minutes: int,
    asleep: np.ndarray,
    starts_per_minute: float,
    mean_bout_minutes: float,
    cadence: float,
    carry_probability: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Two-state idle/bout process; returns (steps per minute, phone carried)."""
    starts = (rng.random(n_minutes) < starts_per_minute) & ~asleep
    idx = np.flatnonzero(starts)
    durations = rng.geometric(1.0 / mean_bout_minutes, size=idx.size)
    carried_bout = rng.random(idx.size) < carry_probability
    ends = np.minimum(idx + durations, n_minutes)

    diff = np.zeros(n_minutes + 1, dtype=np.int64)
    np.add.at(diff, idx, 1)
    np.add.at(diff, ends, -1)
    in_bout = (np.cumsum(diff)[:n_minutes] > 0) & ~asleep

    diff_c = np.zeros(n_minutes + 1, dtype=np.int64)
    np.add.at(diff_c, idx[carried_bout], 1)
    np.add.at(diff_c, ends[carried_bout], -1)
    carried = (np.cumsum(diff_c)[:n_minutes] > 0) & in_bout

    steps = np.where(in_bout, rng.poisson(cadence, n_minutes), 0).astype(np.int64)
    return steps, carried


def behave(ledger: GroundTruthLedger, participant_id: str, minute: int) -> int:
    """True steps taken in one simulation minute, treatment effects included."""
    return int(ledger.steps[participant_id][minute])


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(padded)
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


class _Participant(object):

    pid: str
    index: int
    itinerary: TravelItinerary
    phone_itinerary: TravelItinerary
    faults: Dict[FaultKind, List[FaultSpec]]
    outbox: Outbox
    snooze: SnoozeState
    cache: Dict[Tuple[str, str, int], PrefetchedContent]
    deferred: List[Tuple[str, Dict[str, Any]]]
    tracker_buffer: List[Tuple[int, int, List[Dict[str, int]]]]
    dropped_at: Optional[int]
    app_dead: bool
    server_context: Optional[ContextSnapshot]
    # filled in by World._generate
    carried: np.ndarray
    recording: np.ndarray
    phone_up: np.ndarray
    weather: List[Weather]

    def __init__(self, pid: str, index: int, scenario: ScenarioConfig):
        self.pid = pid
        self.index = index
        self.itinerary = scenario.home_itinerary
        self.phone_itinerary = scenario.home_itinerary
        self.faults = {}
        self.outbox = Outbox(pid, scenario.sync, seed=scenario.seed)
        self.snooze = SnoozeState.off()
        self.cache = {}
        self.deferred = []
        self.tracker_buffer = []
        self.dropped_at = None
        self.app_dead = False
        self.server_context = None


class _PushChannel(PushChannelInterface):
    """Lognormal push delay plus PUSH_DROP faults and the phone's reachability."""

    def __init__(self, world: "World", part: _Participant):
        self.world = world
        self.part = part
        model = world.scenario.push
        self.inner = LognormalPushChannel(
            world.bank.get(streams.PUSH, part.pid),
            median_s=model.median_s,
            sigma=model.sigma,
            drop_probability=model.drop_probability,
            enabled=model.enabled,
        )
        self.ttl_s = model.ttl_s

    def deliver(self, sent_at: Stamp) -> Optional[Stamp]:
        delay, dropped = self.inner.sample_delay()
        if self.world.fault_hits(self.part, FaultKind.PUSH_DROP, sent_at.utc):
            self.world.note_cause(self.part, "push", sent_at.utc, sent_at.utc, "PUSH_DROP")
            return None
        if dropped:
            self.world.note_cause(self.part, "push", sent_at.utc, sent_at.utc, "PUSH_LOST")
            return None
        arrival = sent_at.utc + delay
        t = arrival
        while t <= arrival + self.ttl_s:
            if self.world.network(self.part, t) == Connection.ONLINE:
                return stamp(t, self.part.phone_itinerary)
            t += 60
        self.world.note_cause(self.part, "push", arrival, arrival + self.ttl_s, "PUSH_EXPIRED")
        return None


class World(object):

    scenario: ScenarioConfig
    log: EventLog
    ledger: GroundTruthLedger
    server: ServerStore
    participants: "OrderedDict[str, _Participant]"
    closing: bool
    horizon_start: int
    horizon_end: int
    n_minutes: int
    _now: int

    def __init__(self, scenario: ScenarioConfig, transcript: TranscriptLogger = None):
        self.scenario = scenario
        self.transcript = transcript
        self.bank = streams.StreamBank(scenario.seed)
        self.log = EventLog(scenario.to_dict())
        self.server = ServerStore()
        self.server.on_event(self._on_server)
        self.participants = OrderedDict(
            (pid, _Participant(pid, i, scenario))
            for i, pid in enumerate(scenario.trial.participant_ids())
        )
        self.table = server_agent_prepare(scenario.trial) if scenario.agent == AgentKind.SERVER else None
        self.closing = False
        self.prepared = False
        self._heap: List[Tuple[int, int, int, Callable, tuple]] = []
        self._seq = 0
        self.summary = {
            "decision_points": 0,
            "randomized": 0,
            "treatments": 0,
            "treatments_delivered": 0,
            "faults_fired": 0,
            "payloads_generated": 0,
        }
        for f in scenario.faults:
            inject_fault(self, f)

    # ---- fault surfaces -------------------------------------------------

    def _in(self, part: _Participant, kind: FaultKind, t: int) -> bool:
        return any(f.active_at(t) for f in part.faults.get(kind, ()))

    def dropped(self, part: _Participant, t: int) -> bool:
        return part.dropped_at is not None and t >= part.dropped_at

    def phone_on(self, part: _Participant, t: int) -> bool:
        if self.closing:
            return True
        return not self.dropped(part, t) and not self._in(part, FaultKind.PHONE_POWER_OFF, t)

    def app_alive(self, part: _Participant, t: int) -> bool:
        if self.closing:
            return True
        return self.phone_on(part, t) and not self._in(part, FaultKind.APP_SWIPE_KILL, t)

    def network(self, part: _Participant, t: int) -> Optional[Connection]:
        if not self.app_alive(part, t):
            return None
        if self.closing:
            return Connection.ONLINE
        if self._in(part, FaultKind.CONNECTIVITY_LOSS, t):
            return Connection.OFFLINE
        if self._in(part, FaultKind.CAPTIVE_PORTAL, t):
            return Connection.CAPTIVE_PORTAL
        return Connection.ONLINE

    def bluetooth(self, part: _Participant, t: int) -> bool:
        if self.closing:
            return True
        return self.app_alive(part, t) and not self._in(part, FaultKind.BLUETOOTH_OFF, t)

    def fault_hits(self, part: _Participant, kind: FaultKind, t: int) -> bool:
        if self.closing:
            return False
        active = [f for f in part.faults.get(kind, ()) if f.active_at(t)]
        if not active:
            return False
        p = max(f.probability for f in active)
        return bool(self.bank.get(streams.FAULTS, part.pid, kind.value).random() < p)

    def note_cause(self, part: _Participant, what: str, start: int, end: int, cause: str) -> None:
        self.ledger.causes.append(
            {"participant_id": part.pid, "what": what, "start": start, "end": end, "cause": cause}
        )

    # ---- plumbing -------------------------------------------------------

    def schedule(self, utc: int, priority: int, handler: Callable, *args) -> None:
        heapq.heappush(self._heap, (utc, priority, self._seq, handler, args))
        self._seq += 1

    def _log(self, type: str, utc: int, part: Optional[_Participant], **fields) -> None:
        if part is None:
            self.log.append(type, utc, None, 0, **fields)
            return
        offset = stamp(utc, part.itinerary).tz_offset_minutes
        self.log.append(type, utc, part.pid, offset, **fields)

    def _emit(self, part: _Participant, kind: PayloadKind, body: Dict[str, Any], now: int) -> None:
        if not self.app_alive(part, now):
            part.deferred.append((kind.value, body))
            return
        self._enqueue(part, kind.value, body, now)

    def _enqueue(self, part: _Participant, kind: str, body: Dict[str, Any], now: int) -> None:
        env = part.outbox.enqueue(kind, body)
        self.ledger.generated[env.message_id] = {
            "participant_id": part.pid,
            "kind": kind,
            "body": body,
        }
        self.summary["payloads_generated"] += 1
        self._log("enqueue", now, part, message_id=env.message_id, kind=kind)

    def _on_server(self, what: str, obj: Any, now: int) -> None:
        if what == "store":
            env = obj.envelope
            part = self.participants[env.participant_id]
            self._log("store", now, part, message_id=env.message_id, kind=env.kind, body=env.body)
            if env.kind == PayloadKind.CONTEXT.value:
                snap = ContextSnapshot.from_dict(env.body["snapshot"])
                if part.server_context is None or snap.captured_at > part.server_context.captured_at:
                    part.server_context = snap
        elif what == "quarantine":
            env = obj.envelope
            self._log(
                "quarantine",
                now,
                self.participants[env.participant_id],
                message_id=env.message_id,
                kind=env.kind,
                reason=obj.reason,
                body=env.body,
            )
        elif what == "duplicate":
            self._log(
                "duplicate", now, self.participants[obj.participant_id], message_id=obj.message_id, kind=obj.kind
            )

    # ---- preparation ----------------------------------------------------

    def prepare(self) -> None:
        if self.prepared:
            return
        trial = self.scenario.trial
        spans = []
        for part in self.participants.values():
            spans.append(day_span(trial.start_date, 0, part.itinerary)[0])
            spans.append(day_span(trial.start_date, trial.study_days - 1, part.itinerary)[1])
        self.horizon_start = min(spans) // TRACKER_BATCH_S * TRACKER_BATCH_S
        self.horizon_end = -(-max(spans) // TRACKER_BATCH_S) * TRACKER_BATCH_S
        self.n_minutes = (self.horizon_end - self.horizon_start) // 60
        self.ledger = GroundTruthLedger(self.horizon_start)

        for part in self.participants.values():
            self._generate(part)

        schedule = build_schedule(trial)
        true_points = localize_schedule(
            schedule,
            {p.pid: p.itinerary for p in self.participants.values()},
            trial.start_date,
            trial.timezone_policy,
        )
        phone_points = localize_schedule(
            schedule,
            {p.pid: p.phone_itinerary for p in self.participants.values()},
            trial.start_date,
            trial.timezone_policy,
        )
        for true_lp, phone_lp in zip(true_points, phone_points):
            part = self.participants[true_lp.dp.participant_id]
            fire = phone_lp.fire.utc
            self.schedule(fire - PREFETCH_LEAD_S, _PREFETCH, self._prefetch, part, true_lp, fire)
            self.schedule(fire, _DECISION, self._decide, part, true_lp, fire)

        b = self.scenario.behavior
        for part in self.participants.values():
            for t in range(self.horizon_start + TRACKER_BATCH_S, self.horizon_end + 1, TRACKER_BATCH_S):
                self.schedule(t, _TRACKER_TICK, self._tracker_tick, part, t)
            interval = self.scenario.sync.sync_interval_s
            for t in range(self.horizon_start + interval, self.horizon_end + 1, interval):
                self.schedule(t, _SYNC, self._sync, part)
            for d in range(trial.study_days):
                utc, _ = local_to_utc(
                    local_seconds_of(trial.local_date(d), b.survey_time), part.itinerary
                )
                self.schedule(utc, _SURVEY, self._survey, part, d)
        self.schedule(self.horizon_end + TRACKER_BATCH_S, _CLOSE_OUT, self._close_out)
        self.prepared = True

    def _generate(self, part: _Participant) -> None:
        b = self.scenario.behavior
        n = self.n_minutes
        utc = self.horizon_start + 60 * np.arange(n, dtype=np.int64)
        local_minute = ((utc + offsets_per_minute(part.itinerary, utc)) // 60) % 1440
        s = b.sleep_start.hour * 60 + b.sleep_start.minute
        e = b.sleep_end.hour * 60 + b.sleep_end.minute
        if s > e:
            asleep = (local_minute >= s) | (local_minute < e)
        else:
            asleep = (local_minute >= s) & (local_minute < e)

        rng = self.bank.get(streams.BEHAVIOR, part.pid)
        multiplier = rng.lognormal(0.0, b.rate_heterogeneity)
        steps, carried = bout_process(
            rng,
            n,
            asleep,
            min(1.0, b.bout_rate_per_hour / 60.0 * multiplier),
            b.mean_bout_minutes,
            b.bout_cadence,
            b.phone_carry_probability,
        )
        self.ledger.steps[part.pid] = steps
        part.carried = carried

        recording = np.ones(n, dtype=bool)
        phone_up = np.ones(n, dtype=bool)
        for f in part.faults.get(FaultKind.TRACKER_BATTERY_DEAD, ()):
            recording[self._minute_slice(f.start, f.end)] = False
        for kind in (FaultKind.PHONE_POWER_OFF, FaultKind.APP_SWIPE_KILL):
            for f in part.faults.get(kind, ()):
                phone_up[self._minute_slice(f.start, f.end)] = False
        if part.dropped_at is not None:
            recording[self._minute_slice(part.dropped_at, None)] = False
            phone_up[self._minute_slice(part.dropped_at, None)] = False
        part.recording = recording
        part.phone_up = phone_up
        self.ledger.tracker[part.pid] = {
            "emitted": 0,
            "recovered_late": 0,
            "suppressed_zero": 0,
            "not_worn": 0,
        }

        wrng = self.bank.get(streams.CONTEXT, part.pid, "weather")
        draws = wrng.choice(len(_WEATHER_TAGS), size=self.scenario.trial.study_days, p=_WEATHER_P)
        part.weather = [_WEATHER_TAGS[int(i)] for i in draws]

    def _minute_slice(self, start: int, end: Optional[int]) -> slice:
        lo = max(0, min(self.n_minutes, -(-(start - self.horizon_start) // 60)))
        if end is None:
            return slice(lo, self.n_minutes)
        hi = max(lo, min(self.n_minutes, -(-(end - self.horizon_start) // 60)))
        return slice(lo, hi)

    # ---- handlers -------------------------------------------------------

    def _fault_start(self, part: _Participant, fault: FaultSpec) -> None:
        now = fault.start
        self.summary["faults_fired"] += 1
        self._log("fault_start", now, part, kind=fault.kind.value)
        if fault.kind in (FaultKind.PHONE_POWER_OFF, FaultKind.APP_SWIPE_KILL):
            self._kill(part, now, fault.kind.value)
        elif fault.kind == FaultKind.DROPOUT:
            self._log("withdrawal", now, part)
        elif fault.kind in (
            FaultKind.TRACKER_BATTERY_DEAD,
            FaultKind.GPS_OFF,
            FaultKind.BLUETOOTH_OFF,
            FaultKind.CONNECTIVITY_LOSS,
            FaultKind.CAPTIVE_PORTAL,
        ):
            self.note_cause(part, fault.kind.value.lower(), fault.start, fault.end, fault.kind.value)

    def _fault_end(self, part: _Participant, fault: FaultSpec) -> None:
        now = fault.end
        self._log("fault_end", now, part, kind=fault.kind.value)
        if part.app_dead and self.app_alive(part, now):
            self._app_start(part, now)

    def _kill(self, part: _Participant, now: int, cause: str) -> None:
        if part.app_dead:
            return
        memory_only = [e.envelope.message_id for e in part.outbox.entries if not e.persisted]
        part.outbox.kill()
        part.app_dead = True
        if memory_only:
            logger.warning(
                "{}: {} lost {} unpersisted outbox entries".format(part.pid, cause, len(memory_only))
            )
            self.ledger.lost.extend(memory_only)
        self._log("app_killed", now, part, cause=cause, lost=len(memory_only))

    def _app_start(self, part: _Participant, now: int) -> None:
        part.app_dead = False
        part.outbox.restart()
        self._log("app_started", now, part, restored=len(part.outbox))
        deferred, part.deferred = part.deferred, []
        for kind, body in deferred:
            self._enqueue(part, kind, body, now)
        self.schedule(now, _SYNC, self._sync, part)

    def capture(self, part: _Participant, t: int, connection: Optional[Connection]) -> ContextSnapshot:
        b = self.scenario.behavior
        rng = self.bank.get(streams.CONTEXT, part.pid)
        u_place, j_lat, j_lon, u_drive = rng.random(4)
        local = stamp(t, part.itinerary).local_datetime()
        weekday = local.weekday() < 5
        mod = local.hour * 60 + local.minute

        if weekday and 9 * 60 <= mod < 17 * 60:
            place = LocationCategory.WORK if u_place < 0.8 else LocationCategory.OTHER
        elif mod < 8 * 60 or mod >= 19 * 60:
            place = LocationCategory.HOME if u_place < 0.85 else LocationCategory.OTHER
        else:
            place = LocationCategory.OTHER if u_place < 0.6 else LocationCategory.HOME
        layout = self.scenario.regions
        if place == LocationCategory.WORK:
            center = layout.work(part.index)
            lat, lon = center.lat, center.lon
        elif place == LocationCategory.HOME:
            center = layout.home(part.index)
            lat, lon = center.lat, center.lon
        else:
            center = layout.home(part.index)
            lat, lon = center.lat + 0.03, center.lon - 0.02
        # ~50 m of jitter
        lat += (j_lat - 0.5) * 0.001
        lon += (j_lon - 0.5) * 0.001

        commute = weekday and (7 * 60 + 30 <= mod < 9 * 60 or 17 * 60 <= mod < 18 * 60 + 30)
        driving = bool(commute and u_drive < b.driving_probability)

        day = (local.date() - self.scenario.trial.start_date).days
        day = min(max(day, 0), self.scenario.trial.study_days - 1)
        weather = part.weather[day] if connection == Connection.ONLINE else Weather.UNKNOWN

        coords: Optional[Tuple[float, float]] = (round(lat, 6), round(lon, 6))
        if self._in(part, FaultKind.GPS_OFF, t):
            coords = None
        snap = ContextSnapshot(
            captured_at=t,
            location_category=LocationCategory.OTHER if coords else LocationCategory.UNKNOWN,
            weather=weather,
            recent_activity=self.recently_walking(part, t),
            connection=connection,
            driving=driving,
            coordinates=coords,
        )
        category = coarsen_location(snap, layout.home(part.index), layout.work(part.index))
        return replace(snap, location_category=category)

    def recently_walking(self, part: _Participant, t: int) -> bool:
        arr = self.ledger.steps[part.pid]
        lo = max(0, (t - TAILORING_WINDOW_S - self.horizon_start) // 60)
        hi = min(len(arr), -(-(t - self.horizon_start) // 60))
        return bool(hi > lo and arr[lo:hi].max() >= WALKING_STEPS_PER_MINUTE)

    def _prefetch(self, part: _Participant, lp: LocalizedPoint, fire: int) -> None:
        now = fire - PREFETCH_LEAD_S
        if self.dropped(part, now) or not self.app_alive(part, now):
            return
        connection = self.network(part, now)
        snap = self.capture(part, now, connection)
        self._emit_context(part, lp, snap, "prefetch", now)
        if self.scenario.agent == AgentKind.PHONE:
            cached = prefetch(lp.dp, fire, snap, now, connection, self.scenario.freshness_bound_s)
            if cached is not None:
                part.cache[lp.dp.key] = cached

    def _emit_context(
        self, part: _Participant, lp: LocalizedPoint, snap: ContextSnapshot, purpose: str, now: int
    ) -> None:
        body = {
            "participant_id": part.pid,
            "component_id": lp.dp.component_id,
            "global_index": lp.dp.global_index,
            "purpose": purpose,
            "snapshot": snap.to_dict(),
        }
        self._emit(part, PayloadKind.CONTEXT, body, now)

    def _decide(self, part: _Participant, lp: LocalizedPoint, fire: int) -> None:
        dp = lp.dp
        trial = self.scenario.trial
        p = trial.component(dp.component_id).randomization_probability
        self.summary["decision_points"] += 1
        self._log(
            "decision_point",
            fire,
            part,
            component_id=dp.component_id,
            global_index=dp.global_index,
            day_index=dp.day_index,
            slot_index=dp.slot_index,
            scheduled_local_time=dp.scheduled_local_time.strftime("%H:%M"),
            scheduled_at=lp.fire.to_dict(),
            rolled_forward=lp.rolled_forward,
            excluded=lp.excluded,
            exclusion_reason=lp.exclusion_reason,
        )
        part.cache = {k: v for k, v in part.cache.items() if k[1] != dp.component_id or k == dp.key}
        if self.dropped(part, fire):
            return
        agent = self.scenario.agent
        bound = self.scenario.freshness_bound_s
        clock = stamp(fire, part.phone_itinerary)

        if not self.app_alive(part, fire):
            self.note_cause(part, "decision", fire, fire, "DEVICE_OFF")
            record = missed_record(dp, p, agent, fire, lp.fire)
            if agent == AgentKind.PHONE:
                self._emit(part, PayloadKind.RANDOMIZATION, record.to_dict(), fire)
            else:
                self._server_record(part, record, fire)
            return

        # connectivity as probed at the start of the tailoring window
        snap = self.capture(part, fire, self.network(part, fire - TAILORING_WINDOW_S))
        self._emit_context(part, lp, snap, "decision", fire)
        avail = evaluate_availability(snap, part.snooze, fire, bound)
        rng = self.bank.get(streams.RANDOMIZATION, part.pid, dp.component_id)

        if agent == AgentKind.PHONE:
            record, delivery = phone_agent_step(
                dp,
                clock,
                self.network(part, fire),
                part.cache.pop(dp.key, None),
                snap,
                avail,
                p,
                rng,
                bound,
                scheduled_at=lp.fire,
            )
            self._count(record)
            self._emit(part, PayloadKind.RANDOMIZATION, record.to_dict(), fire)
            if delivery is not None:
                self._delivered(part, lp, record)
            return

        tailoring = part.server_context
        if tailoring is not None and tailoring.captured_at > fire:
            tailoring = None
        record = server_agent_step(
            dp, avail, p, rng, _PushChannel(self, part), clock, tailoring, bound
        )
        record = replace(record, scheduled_at=lp.fire)
        self._count(record)
        if record.delivered_at is not None:
            self.schedule(record.delivered_at.utc, _PUSH_ARRIVAL, self._push_arrival, part, lp, record)
        else:
            self._server_record(part, record, fire)

    def _count(self, record: RandomizationRecord) -> None:
        if record.availability.available:
            self.summary["randomized"] += 1
        if record.outcome.value == "TREAT":
            self.summary["treatments"] += 1

    def _server_record(self, part: _Participant, record: RandomizationRecord, now: int) -> None:
        self.table.fill(record)
        self._log("record", now, part, body=record.to_dict())

    def _push_arrival(self, part: _Participant, lp: LocalizedPoint, record: RandomizationRecord) -> None:
        self._server_record(part, record, record.delivered_at.utc)
        self._delivered(part, lp, record)

    def _delivered(self, part: _Participant, lp: LocalizedPoint, record: RandomizationRecord) -> None:
        self.summary["treatments_delivered"] += 1
        dp = lp.dp
        trial = self.scenario.trial
        component = trial.component(dp.component_id)
        at = record.delivered_at.utc
        weekend = trial.local_date(dp.day_index).weekday() >= 5
        delta = self.scenario.effect(dp.component_id).effect_for(
            dp.day_index, weekend, content_flavour(record.content_id)
        )
        if component.proximal_window.kind == WindowKind.POST_WINDOW_MINUTES:
            start, end = at, at + component.proximal_window.minutes * 60
        else:
            next_day = trial.local_date(dp.day_index + 1)
            start, _ = local_to_utc(local_seconds_of(next_day, trial.waking_start), part.itinerary)
            end, _ = local_to_utc(local_seconds_of(next_day, trial.waking_end), part.itinerary)
        self._apply_effect(part, dp, at, delta, start, end)

        rng = self.bank.get(streams.USER, part.pid)
        u_kind, u_delay, u_snooze = rng.random(3)
        b = self.scenario.behavior
        actions = []
        # reactions spread over 45 minutes, so some miss the 30-minute timeout
        action_at = at + 1 + int(u_delay * 2699)
        if u_kind < b.thumbs_up_probability:
            actions.append(UserAction(action_at, EngagementKind.THUMBS_UP))
        elif u_kind < b.thumbs_up_probability + b.thumbs_down_probability:
            actions.append(UserAction(action_at, EngagementKind.THUMBS_DOWN))
        elif u_kind < b.thumbs_up_probability + b.thumbs_down_probability + b.snooze_probability:
            hours = (1, 4, 12)[min(2, int(u_snooze * 3))]
            actions.append(UserAction(action_at, EngagementKind.SNOOZE_SET, hours * 3600))
        event = engage(record, actions)
        if event is not None:
            self.schedule(event.at, _ENGAGEMENT, self._engagement, part, event)

    def _apply_effect(self, part: _Participant, dp, at: int, delta: float, start: int, end: int) -> None:
        total = round_half_up(delta)
        arr = self.ledger.steps[part.pid]
        lo = max(0, -(-(start - self.horizon_start) // 60))
        hi = min(len(arr), -(-(end - self.horizon_start) // 60))
        if total <= 0 or hi <= lo:
            return
        base, rem = divmod(total, hi - lo)
        arr[lo:hi] += base
        arr[lo : lo + rem] += 1
        self.ledger.effects.append(
            EffectApplied(part.pid, dp.component_id, dp.global_index, at, total, start, end)
        )

    def _engagement(self, part: _Participant, event: EngagementEvent) -> None:
        if event.kind == EngagementKind.SNOOZE_SET and event.snooze is not None:
            part.snooze = event.snooze
        self._emit(part, PayloadKind.ENGAGEMENT, event.to_dict(), event.at)

    def _survey(self, part: _Participant, day: int) -> None:
        now = self._now
        rng = self.bank.get(streams.SURVEY, part.pid)
        u = rng.random()
        stress = int(rng.integers(1, 6))
        typicality = int(rng.integers(1, 6))
        if self.dropped(part, now):
            return
        if not self.app_alive(part, now):
            self.note_cause(part, "daily_survey", now, now, "DEVICE_OFF")
            return
        if u < self.scenario.behavior.survey_response_rate:
            responses: Dict[str, Any] = {"stress": stress, "typicality": typicality}
        else:
            responses = {"stress": "NO_RESPONSE", "typicality": "NO_RESPONSE"}
        body = {
            "participant_id": part.pid,
            "day_index": day,
            "responses": responses,
            "recorded_at": now,
        }
        self._emit(part, PayloadKind.DAILY_SURVEY, body, now)

    def _tracker_tick(self, part: _Participant, t: int) -> None:
        start = t - TRACKER_BATCH_S
        m0 = (start - self.horizon_start) // 60
        m1 = m0 + TRACKER_BATCH_S // 60
        steps = self.ledger.steps[part.pid][m0:m1]
        recording = part.recording[m0:m1]
        counts = self.ledger.tracker[part.pid]
        counts["suppressed_zero"] += int(np.count_nonzero(recording & (steps == 0)))
        counts["not_worn"] += int(np.count_nonzero(~recording))
        # the tracker is silent for zero-step minutes
        minutes = np.flatnonzero(recording & (steps > 0))
        samples = [
            {"start": start + 60 * int(m), "end": start + 60 * int(m) + 60, "steps": int(steps[m])}
            for m in minutes
        ]
        counts["emitted"] += len(samples)
        if samples:
            part.tracker_buffer.append((start, t, samples))
        if self.bluetooth(part, t):
            self._flush_tracker(part, t)

        self._phone_fit(part, start, t, m0, m1)

    def _flush_tracker(self, part: _Participant, now: int) -> None:
        if not part.tracker_buffer:
            return
        backlog = [b for b in part.tracker_buffer if b[1] < now]
        for window_start, window_end, samples in part.tracker_buffer:
            body = {
                "participant_id": part.pid,
                "window_start": window_start,
                "window_end": window_end,
                "samples": samples,
            }
            self._emit(part, PayloadKind.TRACKER_SAMPLES, body, now)
        if backlog:
            count = sum(len(b[2]) for b in backlog)
            self.ledger.tracker[part.pid]["recovered_late"] += count
            manifest = {
                "participant_id": part.pid,
                "window_start": backlog[0][0],
                "window_end": backlog[-1][1],
                "sample_count": count,
            }
            self._emit(part, PayloadKind.SYNC_MANIFEST, manifest, now)
        part.tracker_buffer = []

    def _phone_fit(self, part: _Participant, start: int, t: int, m0: int, m1: int) -> None:
        steps = self.ledger.steps[part.pid][m0:m1]
        mask = part.carried[m0:m1] & part.phone_up[m0:m1] & (steps > 0)
        factor = self.scenario.behavior.phone_fit_undercount
        samples = []
        for lo, hi in _runs(mask):
            aggregated = int(math.floor(int(steps[lo:hi].sum()) * factor))
            if aggregated > 0:
                samples.append(
                    {"start": start + 60 * int(lo), "end": start + 60 * int(hi), "steps": aggregated}
                )
        if samples and self.phone_on(part, t):
            body = {
                "participant_id": part.pid,
                "window_start": start,
                "window_end": t,
                "samples": samples,
            }
            self._emit(part, PayloadKind.PHONE_FIT_SAMPLES, body, t)

    def _sync(self, part: _Participant) -> None:
        now = self._now
        if not self.app_alive(part, now) or not len(part.outbox):
            return
        outbox = part.outbox
        if outbox.next_attempt_at is not None and now < outbox.next_attempt_at:
            return

        def ack_lost(env: SyncEnvelope) -> bool:
            return self.fault_hits(part, FaultKind.ACK_LOSS, now)

        def corrupt(env: SyncEnvelope) -> SyncEnvelope:
            if self.fault_hits(part, FaultKind.PAYLOAD_CORRUPTION, now):
                return replace(env, body=garble(env.kind, env.body))
            return env

        report = attempt_send(
            outbox,
            self.network(part, now),
            self.server,
            now,
            ack_lost=ack_lost,
            transcript=self.transcript,
            corrupt=corrupt,
        )
        if report.acks_lost:
            self._log("ack_lost", now, part, count=report.acks_lost)
        if outbox.next_attempt_at is not None:
            self.schedule(outbox.next_attempt_at, _SYNC, self._sync, part)

    def _close_out(self) -> None:
        """Study-end visit: every phone online, faults cleared, everything drained."""
        now = self._now
        self.closing = True
        for part in self.participants.values():
            if part.app_dead:
                part.app_dead = False
                part.outbox.restart()
            deferred, part.deferred = part.deferred, []
            for kind, body in deferred:
                self._enqueue(part, kind, body, now)
            self._flush_tracker(part, now)
            for _ in range(3):
                if not len(part.outbox):
                    break
                part.outbox.record_success()
                attempt_send(
                    part.outbox, Connection.ONLINE, self.server, now, transcript=self.transcript
                )
            self._log("close_out", now, part, remaining=len(part.outbox))

    # ---- loop -----------------------------------------------------------

    def run(self) -> Tuple[EventLog, GroundTruthLedger]:
        self.prepare()
        while self._heap:
            utc, _, _, handler, args = heapq.heappop(self._heap)
            self._now = utc
            handler(*args)
        logger.info(
            "Run finished: {decision_points} decision points, {treatments_delivered} treatments "
            "delivered, {faults_fired} faults fired".format(**self.summary)
        )
        return self.log, self.ledger


def inject_fault(world: World, fault: FaultSpec) -> World:
    """Register a fault on the participants it targets; only before the run starts."""
    if world.prepared:
        raise ValidationError("faults must be injected before the run starts", "faults")
    if fault not in world.scenario.faults:
        world.scenario = replace(world.scenario, faults=world.scenario.faults + (fault,))
        world.log.header["scenario"] = world.scenario.to_dict()
    for part in world.participants.values():
        if not fault.applies_to(part.pid):
            continue
        part.faults.setdefault(fault.kind, []).append(fault)
        if fault.kind == FaultKind.TIMEZONE_TRAVEL:
            part.itinerary = part.itinerary.with_segment(
                fault.start, fault.end, fault.tz_offset_minutes, fault.tz_name, travel=True
            )
            if fault.phone_updates:
                part.phone_itinerary = part.phone_itinerary.with_segment(
                    fault.start, fault.end, fault.tz_offset_minutes, fault.tz_name, travel=True
                )
        elif fault.kind == FaultKind.DROPOUT:
            part.dropped_at = world.scenario.dropout_at(part.pid)
        world.schedule(fault.start, _FAULT_START, world._fault_start, part, fault)
        if fault.end is not None:
            world.schedule(fault.end, _FAULT_END, world._fault_end, part, fault)
    return world


def run(
    scenario: ScenarioConfig, transcript: TranscriptLogger = None
) -> Tuple[EventLog, GroundTruthLedger]:
    return World(scenario, transcript).run()
