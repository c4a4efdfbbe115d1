"""From the event log to one analysis row per scheduled decision point.

Rows are built from what the server stored (plus the server agent's own
records), never from the simulator's truth. Every absent field carries a
``field:CODE`` entry in ``missingness_codes``.
"""

import bisect
import collections
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from decimal import Decimal
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .agents import DEVICE_OFF, Outcome, RandomizationRecord
from .model import (
    DAY_NAMES,
    NO_RESPONSE,
    ContextSnapshot,
    DailyObservation,
    LocationCategory,
    TrialConfig,
    Weather,
    WindowKind,
    build_schedule,
    clean_daily,
)
from .payloads import PayloadKind, PayloadListProcessor, SampleListProcessor
from .timekeeper import Stamp, TravelItinerary, day_span, localize_schedule, stamp

logger = logging.getLogger(__name__)

DAILY_MEASURES = ("stress", "typicality")
RECENT_TREATMENT_WINDOW_S = 24 * 3600


class MissingnessCode(str, enum.Enum):
    NO_RESPONSE = "NO_RESPONSE"
    SENSOR_GAP_AMBIGUOUS = "SENSOR_GAP_AMBIGUOUS"
    DEVICE_OFF = "DEVICE_OFF"
    SYNC_PENDING_RECOVERED = "SYNC_PENDING_RECOVERED"
    DATA_QUARANTINED = "DATA_QUARANTINED"
    UNAVAILABLE = "UNAVAILABLE"
    TRAVEL_EXCLUDED = "TRAVEL_EXCLUDED"
    UNDELIVERED_TREATMENT = "UNDELIVERED_TREATMENT"
    NO_PRIOR = "NO_PRIOR"
    END_OF_STUDY = "END_OF_STUDY"
    DROPPED_OUT = "DROPPED_OUT"
    NOT_TREATED = "NOT_TREATED"
    RECORD_LOST = "RECORD_LOST"
    NO_CONTEXT = "NO_CONTEXT"


class OutcomeSource(str, enum.Enum):
    TRACKER = "TRACKER"
    TRACKER_ZERO_IMPUTED = "TRACKER_ZERO_IMPUTED"
    REDUNDANT_IMPUTED = "REDUNDANT_IMPUTED"
    # not resolved (yet): still a gap, quarantined, end of study ...
    NONE = "NONE"


def code(field_name: str, c: MissingnessCode) -> str:
    return "{}:{}".format(field_name, c.value)


def codes_for(codes: Iterable[str], field_name: str) -> List[str]:
    prefix = field_name + ":"
    return [c[len(prefix):] for c in codes if c.startswith(prefix)]


@dataclass(frozen=True)
class AnalysisRow:
    participant_id: str
    component_id: str
    global_index: int
    day_index: int
    slot_index: int
    scheduled_local_time: str
    day_of_week: str
    weekend: bool
    scheduled_at: Stamp
    agent: str
    available: bool
    # None when no randomization record reached the server
    availability_reasons: Optional[Tuple[str, ...]]
    probability: Decimal
    treatment: Optional[int]
    randomized_at: Optional[Stamp]
    delivered_at: Optional[Stamp]
    content_id: Optional[str]
    context_staleness_seconds: Optional[int]
    delivery_delay_seconds: Optional[int]
    timing_skew_seconds: Optional[int]
    engagement: Optional[str]
    outcome_window_start_at: Optional[Stamp]
    outcome_window_end_at: Optional[Stamp]
    proximal_outcome: Optional[int]
    outcome_source: OutcomeSource
    redundant_outcome: Optional[int]
    location_category: str
    weather: str
    # score, NO_RESPONSE, or None when nothing was recorded before the row
    stress: Any
    typicality: Any
    recent_treatment_count: int
    travel_excluded: bool
    missingness_codes: Tuple[str, ...] = field(default=())

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.participant_id, self.component_id, self.global_index)

    @property
    def instant(self) -> int:
        """Randomization instant, the scheduled one when never randomized."""
        return self.randomized_at.utc if self.randomized_at else self.scheduled_at.utc

    def has_code(self, field_name: str, c: MissingnessCode) -> bool:
        return code(field_name, c) in self.missingness_codes

    def with_codes(self, *added: str, **changes) -> "AnalysisRow":
        codes = tuple(sorted(set(self.missingness_codes) | set(added)))
        return replace(self, missingness_codes=codes, **changes)


def round_half_up(x: Union[int, float, Fraction]) -> int:
    return int(math.floor(Fraction(x) + Fraction(1, 2)))


def prorated_total(
    starts: np.ndarray, ends: np.ndarray, steps: np.ndarray, lo: int, hi: int
) -> Fraction:
    """Exact step total over [lo, hi); a sample straddling a bound counts by overlap fraction."""
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    steps = np.asarray(steps, dtype=np.int64)
    overlap = np.minimum(ends, hi) - np.maximum(starts, lo)
    keep = overlap > 0
    full = keep & (overlap == ends - starts)
    total = Fraction(int(steps[full].sum()))
    for s, e, n, o in zip(
        starts[keep & ~full], ends[keep & ~full], steps[keep & ~full], overlap[keep & ~full]
    ):
        total += Fraction(int(n) * int(o), int(e - s))
    return total


class SampleSeries(object):
    """Non-overlapping step samples of one stream and participant, sorted by start."""

    starts: np.ndarray
    ends: np.ndarray
    steps: np.ndarray

    def __init__(self, starts: Sequence[int] = (), ends: Sequence[int] = (), steps: Sequence[int] = ()):
        order = np.argsort(np.asarray(starts, dtype=np.int64), kind="stable")
        self.starts = np.asarray(starts, dtype=np.int64)[order]
        self.ends = np.asarray(ends, dtype=np.int64)[order]
        self.steps = np.asarray(steps, dtype=np.int64)[order]

    @classmethod
    def from_samples(cls, samples: Iterable[Dict[str, Any]]) -> "SampleSeries":
        samples = list(samples)
        return cls(
            [s["start"] for s in samples], [s["end"] for s in samples], [s["steps"] for s in samples]
        )

    def __len__(self):
        return len(self.starts)

    def span(self, lo: int, hi: int) -> Tuple[int, int]:
        # ends are sorted too, samples do not overlap
        return (
            int(np.searchsorted(self.ends, lo, side="right")),
            int(np.searchsorted(self.starts, hi, side="left")),
        )

    def covers(self, lo: int, hi: int) -> bool:
        i, j = self.span(lo, hi)
        return j > i

    def total(self, lo: int, hi: int) -> int:
        i, j = self.span(lo, hi)
        return round_half_up(
            prorated_total(self.starts[i:j], self.ends[i:j], self.steps[i:j], lo, hi)
        )

    def bracketed(self, lo: int, hi: int, wear_window_s: int) -> bool:
        """A sample ends within wear_window_s before lo and another starts within it after hi."""
        i, j = self.span(lo, hi)
        if i == 0 or j >= len(self.starts):
            return False
        return lo - int(self.ends[i - 1]) <= wear_window_s and int(self.starts[j]) - hi <= wear_window_s


def window_outcome(
    samples: SampleSeries, lo: int, hi: int, wear_window_s: int
) -> Tuple[Optional[int], Optional[MissingnessCode]]:
    if samples.covers(lo, hi):
        return samples.total(lo, hi), None
    if samples.bracketed(lo, hi, wear_window_s):
        # tracker evidently worn around the gap: silence means zero steps
        return 0, None
    return None, MissingnessCode.SENSOR_GAP_AMBIGUOUS


def compute_proximal_window(
    samples: SampleSeries,
    anchor: int,
    window_s: int = 30 * 60,
    wear_window_s: int = 4 * 3600,
) -> Tuple[Optional[int], Optional[MissingnessCode]]:
    """Steps over [anchor, anchor + window_s); anchor is delivery if delivered, else schedule."""
    return window_outcome(samples, anchor, anchor + window_s, wear_window_s)


def next_day_window(
    trial: TrialConfig, day_index: int, itinerary: TravelItinerary
) -> Optional[Tuple[int, int]]:
    if day_index + 1 >= trial.study_days:
        return None
    return day_span(trial.start_date, day_index + 1, itinerary)


def compute_next_day_total(
    samples: SampleSeries,
    trial: TrialConfig,
    day_index: int,
    itinerary: TravelItinerary,
    wear_window_s: int = 4 * 3600,
) -> Tuple[Optional[int], Optional[MissingnessCode]]:
    span = next_day_window(trial, day_index, itinerary)
    if span is None:
        return None, MissingnessCode.END_OF_STUDY
    return window_outcome(samples, span[0], span[1], wear_window_s)


def zero_impute(rows: Sequence[AnalysisRow]) -> List[AnalysisRow]:
    out = []
    for r in rows:
        if r.proximal_outcome is None and r.has_code(
            "proximal_outcome", MissingnessCode.SENSOR_GAP_AMBIGUOUS
        ):
            r = replace(r, proximal_outcome=0, outcome_source=OutcomeSource.TRACKER_ZERO_IMPUTED)
        out.append(r)
    return out


def impute_from_redundant(
    rows: Sequence[AnalysisRow], redundant_samples: Dict[str, SampleSeries]
) -> List[AnalysisRow]:
    """Fill ambiguous tracker gaps from the phone's own step counts where it has coverage."""
    out = []
    for r in rows:
        if (
            r.proximal_outcome is None
            and r.has_code("proximal_outcome", MissingnessCode.SENSOR_GAP_AMBIGUOUS)
            and r.outcome_window_start_at is not None
            and r.outcome_window_end_at is not None
        ):
            series = redundant_samples.get(r.participant_id)
            lo, hi = r.outcome_window_start_at.utc, r.outcome_window_end_at.utc
            if series is not None and series.covers(lo, hi):
                r = replace(
                    r,
                    proximal_outcome=series.total(lo, hi),
                    outcome_source=OutcomeSource.REDUNDANT_IMPUTED,
                )
        out.append(r)
    return out


def merge_daily(
    rows: Sequence[AnalysisRow], daily_obs: Sequence[DailyObservation]
) -> List[AnalysisRow]:
    """Attach the latest daily observation recorded strictly before each row's randomization."""
    series: Dict[Tuple[str, str], Tuple[List[int], List[Any]]] = {}
    for obs in sorted(clean_daily(daily_obs), key=lambda o: o.recorded_at):
        times, values = series.setdefault((obs.participant_id, obs.measure_id), ([], []))
        times.append(obs.recorded_at)
        values.append(obs.value)

    out = []
    for r in rows:
        changes: Dict[str, Any] = {}
        added = []
        for measure in DAILY_MEASURES:
            times, values = series.get((r.participant_id, measure), ([], []))
            i = bisect.bisect_left(times, r.instant) - 1
            if i < 0:
                changes[measure] = None
                added.append(code(measure, MissingnessCode.NO_PRIOR))
                continue
            changes[measure] = values[i]
            if values[i] == NO_RESPONSE:
                added.append(code(measure, MissingnessCode.NO_RESPONSE))
        out.append(r.with_codes(*added, **changes))
    return out


def coarsen_location(snapshot: Optional[ContextSnapshot], home_region, work_region) -> LocationCategory:
    if snapshot is None or snapshot.capture_failed or snapshot.coordinates is None:
        return LocationCategory.UNKNOWN
    lat, lon = snapshot.coordinates
    if home_region.contains(lat, lon):
        return LocationCategory.HOME
    if work_region.contains(lat, lon):
        return LocationCategory.WORK
    return LocationCategory.OTHER


class ContextProcessor(PayloadListProcessor):
    """Decision-time snapshots keyed by decision point; prefetch captures are dropped."""

    def __init__(self):
        super().__init__(PayloadKind.CONTEXT)

    @staticmethod
    def process_item(entry):
        if entry.get("purpose") != "decision":
            return None
        return entry


class SurveyProcessor(PayloadListProcessor):
    def __init__(self):
        super().__init__(PayloadKind.DAILY_SURVEY)

    @staticmethod
    def mangle_payload(body: Dict[str, Any], stored_at: int) -> List[Any]:
        return [
            DailyObservation(
                body["participant_id"], body["day_index"], measure, value, body["recorded_at"]
            )
            for measure, value in sorted(body["responses"].items())
        ]


@dataclass
class Collected:
    """Everything the server holds for a run, grouped per participant."""

    records: Dict[Tuple[str, str, int], RandomizationRecord]
    contexts: Dict[Tuple[str, str, int], ContextSnapshot]
    engagements: Dict[Tuple[str, str, int], str]
    tracker: Dict[str, SampleSeries]
    phone_fit: Dict[str, SampleSeries]
    daily: List[DailyObservation]
    quarantined_records: set
    quarantined_contexts: set
    quarantined_engagements: set
    # per participant: [window_start, window_end) of quarantined tracker batches
    quarantined_tracker: Dict[str, List[Tuple[int, int]]]
    manifests: Dict[str, List[Tuple[int, int]]]
    withdrawals: Dict[str, int]


def _key_of(body: Dict[str, Any]) -> Optional[Tuple[str, str, int]]:
    try:
        return (body["participant_id"], body["component_id"], body["global_index"])
    except (KeyError, TypeError):
        return None


def collect(event_log) -> Collected:
    tracker = SampleListProcessor(PayloadKind.TRACKER_SAMPLES)
    phone_fit = SampleListProcessor(PayloadKind.PHONE_FIT_SAMPLES)
    contexts = ContextProcessor()
    surveys = SurveyProcessor()
    records: Dict[Tuple[str, str, int], RandomizationRecord] = {}
    engagements: Dict[Tuple[str, str, int], str] = {}
    tracker_owner: List[str] = []
    fit_owner: List[str] = []
    q_records, q_contexts, q_engagements = set(), set(), set()
    q_tracker: Dict[str, List[Tuple[int, int]]] = collections.defaultdict(list)
    manifests: Dict[str, List[Tuple[int, int]]] = collections.defaultdict(list)
    withdrawals: Dict[str, int] = {}

    for e in event_log.events:
        etype = e["type"]
        if etype == "store":
            kind, body, at = e["kind"], e["body"], e["utc"]
            pid = e["participant_id"]
            if kind == PayloadKind.RANDOMIZATION.value:
                rec = RandomizationRecord.from_dict(body)
                records.setdefault(rec.key, rec)
            elif kind == PayloadKind.ENGAGEMENT.value:
                engagements.setdefault(_key_of(body), body["kind"])  # type: ignore
            elif kind == PayloadKind.SYNC_MANIFEST.value:
                manifests[pid].append((body["window_start"], body["window_end"]))
            elif kind == PayloadKind.TRACKER_SAMPLES.value:
                n = len(tracker.data)
                tracker.process_one_payload(kind, body, at)
                tracker_owner.extend([pid] * (len(tracker.data) - n))
            elif kind == PayloadKind.PHONE_FIT_SAMPLES.value:
                n = len(phone_fit.data)
                phone_fit.process_one_payload(kind, body, at)
                fit_owner.extend([pid] * (len(phone_fit.data) - n))
            contexts.process_one_payload(kind, body, at)
            surveys.process_one_payload(kind, body, at)
        elif etype == "record":
            rec = RandomizationRecord.from_dict(e["body"])
            records.setdefault(rec.key, rec)
        elif etype == "quarantine":
            kind, body = e["kind"], e["body"]
            key = _key_of(body)
            if kind == PayloadKind.RANDOMIZATION.value and key:
                q_records.add(key)
            elif kind == PayloadKind.CONTEXT.value and key and body.get("purpose") == "decision":
                q_contexts.add(key)
            elif kind == PayloadKind.ENGAGEMENT.value and key:
                q_engagements.add(key)
            elif kind == PayloadKind.TRACKER_SAMPLES.value and "window_start" in body:
                q_tracker[e["participant_id"]].append((body["window_start"], body["window_end"]))
        elif etype == "withdrawal":
            withdrawals.setdefault(e["participant_id"], e["utc"])

    def grouped(samples, owners) -> Dict[str, SampleSeries]:
        by_pid: Dict[str, List[Dict[str, Any]]] = collections.defaultdict(list)
        for s, pid in zip(samples, owners):
            by_pid[pid].append(s)
        return {pid: SampleSeries.from_samples(ss) for pid, ss in by_pid.items()}

    snapshots = {}
    for body in contexts.return_all_data():
        snapshots.setdefault(_key_of(body), ContextSnapshot.from_dict(body["snapshot"]))

    return Collected(
        records=records,
        contexts=snapshots,
        engagements=engagements,
        tracker=grouped(tracker.return_all_data(), tracker_owner),
        phone_fit=grouped(phone_fit.return_all_data(), fit_owner),
        daily=surveys.return_all_data(),
        quarantined_records=q_records,
        quarantined_contexts=q_contexts,
        quarantined_engagements=q_engagements,
        quarantined_tracker=dict(q_tracker),
        manifests=dict(manifests),
        withdrawals=withdrawals,
    )


def _overlaps(windows: Sequence[Tuple[int, int]], lo: int, hi: int) -> bool:
    return any(s < hi and e > lo for s, e in windows)


def _modal_weather(snapshots: Sequence[ContextSnapshot]) -> Weather:
    counts = collections.Counter(s.weather for s in snapshots if s.weather != Weather.UNKNOWN)
    if not counts:
        return Weather.UNKNOWN
    best = max(counts.values())
    # ties go to the earlier tag in declaration order
    return next(w for w in Weather if counts.get(w) == best)


def build_rows(event_log) -> List[AnalysisRow]:
    """Raw rows (no imputation) for every scheduled decision point of the run."""
    scenario = event_log.scenario()
    trial = scenario.trial
    data = collect(event_log)
    schedule = build_schedule(trial)
    itineraries = {pid: scenario.itinerary_for(pid) for pid in trial.participant_ids()}
    points = localize_schedule(schedule, itineraries, trial.start_date, trial.timezone_policy)

    delivered: Dict[Tuple[str, str], List[int]] = collections.defaultdict(list)
    for rec in data.records.values():
        if rec.delivered_at is not None:
            delivered[(rec.participant_id, rec.component_id)].append(rec.delivered_at.utc)
    for times in delivered.values():
        times.sort()

    by_day: Dict[Tuple[str, int], List[ContextSnapshot]] = collections.defaultdict(list)
    for lp in points:
        snap = data.contexts.get(lp.dp.key)
        if snap is not None:
            by_day[(lp.dp.participant_id, lp.dp.day_index)].append(snap)

    layout = scenario.regions
    pids = trial.participant_ids()
    rows = []
    for lp in points:
        dp = lp.dp
        pid = dp.participant_id
        it = itineraries[pid]
        component = trial.component(dp.component_id)
        local_day = trial.local_date(dp.day_index)
        codes: List[str] = []
        rec = data.records.get(dp.key)
        withdrawn_at = data.withdrawals.get(pid)
        dropped = withdrawn_at is not None and lp.fire.utc >= withdrawn_at

        if lp.excluded:
            codes.append(code("row", MissingnessCode.TRAVEL_EXCLUDED))

        if rec is None:
            if dropped:
                lost = MissingnessCode.DROPPED_OUT
            elif dp.key in data.quarantined_records:
                lost = MissingnessCode.DATA_QUARANTINED
            else:
                lost = MissingnessCode.RECORD_LOST
            for f in (
                "available",
                "availability_reasons",
                "treatment",
                "randomized_at",
                "delivered_at",
                "content_id",
                "context_staleness_seconds",
                "delivery_delay_seconds",
                "timing_skew_seconds",
                "engagement",
            ):
                codes.append(code(f, lost))
            available, reasons, treatment = False, None, None
            randomized_at = delivered_at = None
            content_id = engagement = None
            staleness = delay = skew = None
            agent = scenario.agent.value
        else:
            agent = rec.agent.value
            available = rec.availability.available
            reasons = tuple(rec.availability.reason_names())
            randomized_at, delivered_at = rec.randomized_at, rec.delivered_at
            content_id = rec.content_id
            staleness = rec.context_staleness
            treatment = {Outcome.TREAT: 1, Outcome.NO_TREAT: 0}.get(rec.outcome)
            if treatment is None:
                codes.append(code("treatment", MissingnessCode.UNAVAILABLE))
            if randomized_at is None:
                # the phone was off: nothing ran at this decision point
                missing = MissingnessCode.DEVICE_OFF if rec.data_note == DEVICE_OFF else MissingnessCode.RECORD_LOST
                codes.append(code("randomized_at", missing))
                codes.append(code("timing_skew_seconds", missing))
                skew = None
            else:
                skew = randomized_at.utc - lp.fire.utc
            if rec.outcome != Outcome.TREAT:
                not_delivered = MissingnessCode.NOT_TREATED
            elif delivered_at is None:
                not_delivered = MissingnessCode.UNDELIVERED_TREATMENT
            else:
                not_delivered = None
            if not_delivered is not None:
                for f in ("delivered_at", "delivery_delay_seconds", "engagement"):
                    codes.append(code(f, not_delivered))
                delay = None
                engagement = None
            else:
                delay = delivered_at.utc - randomized_at.utc  # type: ignore
                engagement = data.engagements.get(dp.key)
                if engagement is None:
                    missing = (
                        MissingnessCode.DATA_QUARANTINED
                        if dp.key in data.quarantined_engagements
                        else MissingnessCode.RECORD_LOST
                    )
                    codes.append(code("engagement", missing))
                elif engagement == NO_RESPONSE:
                    codes.append(code("engagement", MissingnessCode.NO_RESPONSE))
            if content_id is None:
                codes.append(code("content_id", not_delivered or MissingnessCode.NOT_TREATED))
                codes.append(
                    code("context_staleness_seconds", not_delivered or MissingnessCode.NOT_TREATED)
                )
            elif staleness is None:
                codes.append(code("context_staleness_seconds", MissingnessCode.NO_CONTEXT))

        # proximal outcome
        if component.proximal_window.kind == WindowKind.POST_WINDOW_MINUTES:
            anchor = delivered_at.utc if delivered_at is not None else lp.fire.utc
            window: Optional[Tuple[int, int]] = (
                anchor,
                anchor + component.proximal_window.minutes * 60,  # type: ignore
            )
        else:
            window = next_day_window(trial, dp.day_index, it)

        redundant = None
        source = OutcomeSource.NONE
        if window is None:
            outcome = None
            codes.append(code("proximal_outcome", MissingnessCode.END_OF_STUDY))
            codes.append(code("redundant_outcome", MissingnessCode.END_OF_STUDY))
            codes.append(code("outcome_window_start_at", MissingnessCode.END_OF_STUDY))
            codes.append(code("outcome_window_end_at", MissingnessCode.END_OF_STUDY))
        elif dropped:
            outcome = None
            codes.append(code("proximal_outcome", MissingnessCode.DROPPED_OUT))
            codes.append(code("redundant_outcome", MissingnessCode.DROPPED_OUT))
        else:
            lo, hi = window
            if _overlaps(data.quarantined_tracker.get(pid, ()), lo, hi):
                outcome = None
                codes.append(code("proximal_outcome", MissingnessCode.DATA_QUARANTINED))
            else:
                samples = data.tracker.get(pid, SampleSeries())
                if component.proximal_window.kind == WindowKind.POST_WINDOW_MINUTES:
                    outcome, gap = compute_proximal_window(
                        samples, lo, hi - lo, scenario.wear_window_s
                    )
                else:
                    outcome, gap = compute_next_day_total(
                        samples, trial, dp.day_index, it, scenario.wear_window_s
                    )
                if gap is not None:
                    codes.append(code("proximal_outcome", gap))
                else:
                    source = OutcomeSource.TRACKER
                if _overlaps(data.manifests.get(pid, ()), lo, hi):
                    codes.append(code("proximal_outcome", MissingnessCode.SYNC_PENDING_RECOVERED))
            fit = data.phone_fit.get(pid, SampleSeries())
            if fit.covers(lo, hi):
                redundant = fit.total(lo, hi)
            else:
                codes.append(code("redundant_outcome", MissingnessCode.SENSOR_GAP_AMBIGUOUS))

        # context
        snap = data.contexts.get(dp.key)
        home, work = layout.home(pids.index(pid)), layout.work(pids.index(pid))
        if snap is None:
            missing = (
                MissingnessCode.DATA_QUARANTINED
                if dp.key in data.quarantined_contexts
                else MissingnessCode.DROPPED_OUT if dropped else MissingnessCode.NO_CONTEXT
            )
            codes.append(code("location_category", missing))
            codes.append(code("weather", missing))
        location = coarsen_location(snap, home, work)
        if component.proximal_window.kind == WindowKind.NEXT_DAY_TOTAL:
            weather = _modal_weather(by_day.get((pid, dp.day_index), ()))
        else:
            weather = snap.weather if snap is not None else Weather.UNKNOWN

        instant = randomized_at.utc if randomized_at is not None else lp.fire.utc
        times = delivered.get((pid, dp.component_id), [])
        recent = bisect.bisect_left(times, instant) - bisect.bisect_left(
            times, instant - RECENT_TREATMENT_WINDOW_S
        )

        rows.append(
            AnalysisRow(
                participant_id=pid,
                component_id=dp.component_id,
                global_index=dp.global_index,
                day_index=dp.day_index,
                slot_index=dp.slot_index,
                scheduled_local_time=dp.scheduled_local_time.strftime("%H:%M"),
                day_of_week=DAY_NAMES[local_day.weekday()],
                weekend=local_day.weekday() >= 5,
                scheduled_at=lp.fire,
                agent=agent,
                available=available,
                availability_reasons=reasons,
                probability=component.randomization_probability,
                treatment=treatment,
                randomized_at=randomized_at,
                delivered_at=delivered_at,
                content_id=content_id,
                context_staleness_seconds=staleness,
                delivery_delay_seconds=delay,
                timing_skew_seconds=skew,
                engagement=engagement,
                outcome_window_start_at=stamp(window[0], it) if window else None,
                outcome_window_end_at=stamp(window[1], it) if window else None,
                proximal_outcome=outcome,
                outcome_source=source,
                redundant_outcome=redundant,
                location_category=location.value,
                weather=weather.value,
                stress=None,
                typicality=None,
                recent_treatment_count=recent,
                travel_excluded=lp.excluded,
                missingness_codes=tuple(sorted(set(codes))),
            )
        )

    rows = merge_daily(rows, data.daily)
    rows.sort(key=lambda r: r.key)
    logger.info(
        "Built {} rows from {} events ({} randomization records)".format(
            len(rows), len(event_log.events), len(data.records)
        )
    )
    return rows


def build_variant(event_log, variant: str = "zero") -> List[AnalysisRow]:
    """Rows under one outcome variant: zero, redundant (then zero) or raw."""
    rows = build_rows(event_log)
    if variant == "raw":
        return rows
    if variant == "redundant":
        rows = impute_from_redundant(rows, collect(event_log).phone_fit)
    elif variant != "zero":
        raise ValueError("unknown variant {!r}".format(variant))
    return zero_impute(rows)


def differing_rows(a: Sequence[AnalysisRow], b: Sequence[AnalysisRow]) -> List[Tuple[str, str, int]]:
    """Keys whose (outcome, source) differ between two variants of the same rows."""
    return [
        x.key
        for x, y in zip(a, b)
        if (x.proximal_outcome, x.outcome_source) != (y.proximal_outcome, y.outcome_source)
    ]


def unavailability_trend(rows: Sequence[AnalysisRow], component_id: str = None) -> pd.DataFrame:
    """Per study day, the share of decision points unavailable for each reason."""
    kept = [
        r
        for r in rows
        if (component_id is None or r.component_id == component_id)
        and r.availability_reasons is not None
    ]
    if not kept:
        return pd.DataFrame(columns=["day_index", "decision_points", "unavailable"])
    reason_cols = sorted({reason for r in kept for reason in r.availability_reasons})
    records = []
    for r in kept:
        entry = {"day_index": r.day_index, "unavailable": not r.available}
        entry.update({reason: reason in r.availability_reasons for reason in reason_cols})
        records.append(entry)
    df = pd.DataFrame.from_records(records, columns=["day_index", "unavailable"] + reason_cols)
    grouped = df.groupby("day_index")
    out = grouped[["unavailable"] + reason_cols].mean()
    out.insert(0, "decision_points", grouped.size())
    return out.reset_index()
