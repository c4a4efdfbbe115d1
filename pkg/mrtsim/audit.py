"""Data-quality checklist run over an exported dataset and its event log.

Each check reports PASS, FAIL or NOT_APPLICABLE with the exact locations it
objects to: ``row N: column`` for cells (N counts data rows from 1),
``column X`` for whole columns, ``message ID`` and ``decision point ...``
for event-level findings. Inputs are only read, never written.
"""

import collections
import enum
import logging
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd
from dateutil import parser as dateparser

from .agents import GENERIC_CONTENT, AgentKind
from .dataset import COLUMNS, EMPTY_LIST, NA, OFFSET_SUFFIX, STAMP_FIELDS, cell_text
from .eventlog import EventLog, read_event_log
from .exceptions import EventLogError, ExportFormatError, UnknownComponent, ValidationError
from .jsonc import loads
from .model import LocationCategory, Weather, build_schedule
from .payloads import PayloadKind
from .pipeline import MissingnessCode, OutcomeSource
from .scenario import FaultKind
from .timekeeper import MAX_OFFSET_MINUTES, iso_utc, parse_iso_utc, stamp

logger = logging.getLogger(__name__)

_COORDINATES = re.compile(r"-?\d{1,3}\.\d{3,}\s*[,;]\s*-?\d{1,3}\.\d{3,}")
_COORDINATE_COLUMNS = re.compile(r"(^|_)(lat|lon|lng|latitude|longitude|coordinates?)($|_)", re.I)
_CODE_FIELDS = set(c for c in COLUMNS if not c.endswith(OFFSET_SUFFIX)) | {"row"}
_CODES = set(c.value for c in MissingnessCode)


class Status(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    NOT_APPLICABLE = "NOT_APPLICABLE"


@dataclass(frozen=True)
class Violation:
    locator: str
    message: str

    def to_dict(self) -> Dict[str, str]:
        return {"locator": self.locator, "message": self.message}


@dataclass
class CheckResult:
    check_id: str
    title: str
    violations: List[Violation] = field(default_factory=list)
    applicable: bool = True
    note: Optional[str] = None

    @property
    def status(self) -> Status:
        if not self.applicable:
            return Status.NOT_APPLICABLE
        return Status.FAIL if self.violations else Status.PASS

    def flag(self, locator: str, message: str) -> None:
        self.violations.append(Violation(locator, message))

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "id": self.check_id,
            "title": self.title,
            "status": self.status.value,
            "violations": [v.to_dict() for v in self.violations],
        }
        if self.note:
            d["note"] = self.note
        return d


@dataclass
class AuditReport:
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.status != Status.FAIL for c in self.checks)

    def check(self, check_id: str) -> CheckResult:
        for c in self.checks:
            if c.check_id == check_id:
                return c
        raise KeyError(check_id)

    def status(self, check_id: str) -> Status:
        return self.check(check_id).status

    def locators(self) -> Set[str]:
        return {v.locator for c in self.checks for v in c.violations}

    def summary(self) -> Dict[str, int]:
        counts = collections.Counter(c.status.value for c in self.checks)
        return {
            "PASS": counts.get("PASS", 0),
            "FAIL": counts.get("FAIL", 0),
            "NOT_APPLICABLE": counts.get("NOT_APPLICABLE", 0),
            "violations": sum(len(c.violations) for c in self.checks),
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "summary": self.summary(),
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_text(self, max_violations: int = 20) -> str:
        lines = []
        for c in self.checks:
            lines.append("[{:<14}] {} {}".format(c.status.value, c.check_id, c.title))
            if c.note:
                lines.append("    ({})".format(c.note))
            for v in c.violations[:max_violations]:
                lines.append("    {}: {}".format(v.locator, v.message))
            if len(c.violations) > max_violations:
                lines.append("    ... {} more".format(len(c.violations) - max_violations))
        s = self.summary()
        lines.append(
            "{} passed, {} failed, {} not applicable, {} violations".format(
                s["PASS"], s["FAIL"], s["NOT_APPLICABLE"], s["violations"]
            )
        )
        return "\n".join(lines)


def at(n: int, column: str) -> str:
    return "row {}: {}".format(n, column)


def read_cells(path: str) -> pd.DataFrame:
    """Every cell as text, CSV spelling (NA, true/false, |-joined lists), no column checks."""
    if path.endswith(".jsonl"):
        records = []
        with open(path, "r", encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    d = loads(line)
                except ValueError as e:
                    raise ExportFormatError("row {}: invalid JSON: {}".format(n, e)) from None
                if not isinstance(d, dict):
                    raise ExportFormatError("row {}: expected a JSON object".format(n))
                records.append({k: NA if v is None else cell_text(v) for k, v in d.items()})
        columns = list(records[0]) if records else list(COLUMNS)
        return pd.DataFrame.from_records(records, columns=columns)
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ExportFormatError("unreadable CSV: {}".format(e)) from None


def _codes(cell: str) -> List[str]:
    if cell in (NA, EMPTY_LIST, ""):
        return []
    return cell.split("|")


def _has_code(codes: Sequence[str], field_name: str, c: str = None) -> bool:
    prefix = field_name + ":"
    return any(x.startswith(prefix) and (c is None or x == prefix + c) for x in codes)


def _int(cell: str) -> Optional[int]:
    try:
        return int(cell)
    except (TypeError, ValueError):
        return None


def _utc(cell: str) -> Optional[int]:
    if not cell.endswith("Z"):
        return None
    try:
        return parse_iso_utc(cell)
    except ValidationError:
        return None


class _Audit(object):
    def __init__(self, frame: pd.DataFrame, event_log: EventLog):
        self.frame = frame
        self.log = event_log
        self.scenario = event_log.scenario()
        self.trial = self.scenario.trial
        self.rows: List[Tuple[int, Dict[str, str]]] = list(
            enumerate(frame.to_dict("records"), 1)
        )
        self.codes = {n: _codes(r["missingness_codes"]) for n, r in self.rows}
        self.record_agents: Dict[Tuple[str, str, int], str] = {}
        for e in self.log.events:
            if e["type"] == "record" or (
                e["type"] == "store" and e["kind"] == PayloadKind.RANDOMIZATION.value
            ):
                b = e["body"]
                key = (b["participant_id"], b["component_id"], b["global_index"])
                self.record_agents.setdefault(key, b["agent"])

    def key(self, r: Dict[str, str]) -> Optional[Tuple[str, str, int]]:
        gi = _int(r["global_index"])
        if gi is None:
            return None
        return (r["participant_id"], r["component_id"], gi)

    # 1
    def outcome_present_or_coded(self, c: CheckResult) -> None:
        sources = set(s.value for s in OutcomeSource)
        for n, r in self.rows:
            value = r["proximal_outcome"]
            if value == NA:
                if not _has_code(self.codes[n], "proximal_outcome"):
                    c.flag(at(n, "proximal_outcome"), "outcome absent without a missingness code")
                continue
            v = _int(value)
            if v is None or v < 0:
                c.flag(at(n, "proximal_outcome"), "not a step count: {!r}".format(value))
            if r["outcome_source"] not in sources or r["outcome_source"] == OutcomeSource.NONE.value:
                c.flag(at(n, "outcome_source"), "outcome present without its source")

    # 2
    def agent_consistent(self, c: CheckResult) -> None:
        agents = set(a.value for a in AgentKind)
        default = self.scenario.agent.value
        for n, r in self.rows:
            agent = r["agent"]
            if agent not in agents:
                c.flag(at(n, "agent"), "agent not recorded: {!r}".format(agent))
                continue
            key = self.key(r)
            expected = self.record_agents.get(key, default) if key else default
            if agent != expected:
                c.flag(at(n, "agent"), "{} disagrees with the stored record ({})".format(agent, expected))

    # 3
    def probability_and_treatment(self, c: CheckResult) -> None:
        scheduled = collections.Counter(dp.key for dp in build_schedule(self.trial))
        seen: Dict[Tuple[str, str, int], int] = {}
        for n, r in self.rows:
            key = self.key(r)
            if key is None or key not in scheduled:
                c.flag(at(n, "global_index"), "not a scheduled decision point")
            elif key in seen:
                c.flag(at(n, "global_index"), "duplicate of row {}".format(seen[key]))
            else:
                seen[key] = n
            try:
                expected = self.trial.component(r["component_id"]).randomization_probability
            except UnknownComponent:
                expected = None
            try:
                p: Optional[Decimal] = Decimal(r["probability"])
            except (InvalidOperation, ValueError):
                p = None
            if p is None or not p.is_finite() or not 0 < p < 1:
                c.flag(at(n, "probability"), "randomization probability not recorded")
            elif expected is not None and p != expected:
                c.flag(at(n, "probability"), "{} differs from the configured {}".format(p, expected))
            available = r["available"] == "true"
            treatment = r["treatment"]
            if available and treatment not in ("0", "1"):
                c.flag(at(n, "treatment"), "available but no treatment recorded")
            elif not available and treatment != NA:
                c.flag(at(n, "treatment"), "treatment recorded while unavailable")
        for key in sorted(set(scheduled) - set(seen)):
            c.flag("decision point {}/{}/{}".format(*key), "no row for this decision point")

    # 4
    def context(self, c: CheckResult) -> None:
        bound = self.scenario.freshness_bound_s
        for column in self.frame.columns:
            if _COORDINATE_COLUMNS.search(column):
                c.flag("column {}".format(column), "raw coordinate column")
        locations = set(x.value for x in LocationCategory)
        weathers = set(x.value for x in Weather)
        for n, r in self.rows:
            for name, allowed in (("location_category", locations), ("weather", weathers)):
                if r[name] == NA:
                    if not _has_code(self.codes[n], name):
                        c.flag(at(n, name), "context absent without a missingness code")
                elif r[name] not in allowed:
                    c.flag(at(n, name), "not a coarse category: {!r}".format(r[name]))
            for column, value in r.items():
                if isinstance(value, str) and _COORDINATES.search(value):
                    c.flag(at(n, column), "raw coordinates")
            staleness = _int(r["context_staleness_seconds"])
            if staleness is not None and staleness > bound and r["content_id"] not in (
                GENERIC_CONTENT,
                NA,
            ):
                c.flag(
                    at(n, "context_staleness_seconds"),
                    "tailored content from context {} s old (bound {} s)".format(staleness, bound),
                )

    # 5
    def utc_stamps(self, c: CheckResult) -> None:
        for column in self.frame.columns:
            if column in COLUMNS:
                continue
            values = [v for v in self.frame[column] if v not in (NA, "")]
            if values and all(_bare_timestamp(v) for v in values):
                c.flag("column {}".format(column), "timestamps without a UTC designator")
        for n, r in self.rows:
            for name in STAMP_FIELDS:
                value, offset = r[name], r[name + OFFSET_SUFFIX]
                if value == NA:
                    if offset != NA:
                        c.flag(at(n, name + OFFSET_SUFFIX), "offset without an instant")
                    continue
                if _utc(value) is None:
                    c.flag(at(n, name), "not a UTC instant: {!r}".format(value))
                off = _int(offset)
                if off is None or abs(off) > MAX_OFFSET_MINUTES:
                    c.flag(at(n, name + OFFSET_SUFFIX), "local offset missing or out of range")

    # 5, travel
    def travel_offsets(self, c: CheckResult) -> None:
        itineraries = {pid: self.scenario.itinerary_for(pid) for pid in self.trial.participant_ids()}
        for n, r in self.rows:
            it = itineraries.get(r["participant_id"])
            if it is None:
                continue
            for name in ("scheduled_at", "outcome_window_start_at", "outcome_window_end_at"):
                utc, off = _utc(r[name]), _int(r[name + OFFSET_SUFFIX])
                if utc is None or off is None:
                    continue
                expected = stamp(utc, it).tz_offset_minutes
                if off != expected:
                    c.flag(
                        at(n, name + OFFSET_SUFFIX),
                        "offset {} but the itinerary gives {}".format(off, expected),
                    )

    # 6
    def reasons_blanks_codes(self, c: CheckResult) -> None:
        for n, r in self.rows:
            for column, value in r.items():
                if value == "":
                    c.flag(at(n, column), "blank field")
            codes = self.codes[n]
            for x in codes:
                f, _, cd = x.partition(":")
                if f not in _CODE_FIELDS or cd not in _CODES:
                    c.flag(at(n, "missingness_codes"), "malformed code {!r}".format(x))
            reasons = r["availability_reasons"]
            if reasons == NA:
                pass
            elif r["available"] == "false" and reasons == EMPTY_LIST:
                c.flag(at(n, "availability_reasons"), "unavailable without a reason")
            elif r["available"] == "true" and reasons != EMPTY_LIST:
                c.flag(at(n, "availability_reasons"), "available but reasons listed")
            for column in COLUMNS:
                if column not in r or r[column] != NA:
                    continue
                base = column[: -len(OFFSET_SUFFIX)] if column.endswith(OFFSET_SUFFIX) else column
                if not _has_code(codes, base):
                    c.flag(at(n, column), "absent value without a missingness code")

    def handshake(self, c: CheckResult) -> None:
        enqueued: Dict[str, str] = {}
        landed: Dict[str, int] = collections.Counter()
        for e in self.log.events:
            if e["type"] == "enqueue":
                enqueued[e["message_id"]] = e["participant_id"]
            elif e["type"] in ("store", "quarantine"):
                landed[e["message_id"]] += 1
        for mid in sorted(set(enqueued) - set(landed)):
            c.flag("message {}".format(mid), "{}: generated but never landed".format(enqueued[mid]))
        for mid in sorted(set(landed) - set(enqueued)):
            c.flag("message {}".format(mid), "landed but never generated")
        for mid in sorted(m for m, k in landed.items() if k > 1):
            c.flag("message {}".format(mid), "landed {} times".format(landed[mid]))

    # 7
    def recovery(self, c: CheckResult) -> None:
        manifests = []
        batches: Dict[str, List[Tuple[int, int, int]]] = collections.defaultdict(list)
        spoiled: Dict[str, List[Tuple[int, int]]] = collections.defaultdict(list)
        for e in self.log.events:
            kind = e.get("kind")
            if e["type"] == "store" and kind == PayloadKind.SYNC_MANIFEST.value:
                manifests.append((e["participant_id"], e["body"]))
            elif e["type"] == "store" and kind == PayloadKind.TRACKER_SAMPLES.value:
                b = e["body"]
                batches[e["participant_id"]].append((b["window_start"], b["window_end"], len(b["samples"])))
            elif e["type"] == "quarantine" and kind == PayloadKind.TRACKER_SAMPLES.value:
                b = e["body"]
                window = (b.get("window_start"), b.get("window_end"))
                spoiled[e["participant_id"]].append(window)  # type: ignore
        bluetooth = any(f.kind == FaultKind.BLUETOOTH_OFF for f in self.scenario.faults)
        if not manifests and not bluetooth:
            c.applicable = False
            c.note = "no Bluetooth outage and no buffered tracker data in this run"
            return

        windows: Dict[str, List[Tuple[int, int]]] = collections.defaultdict(list)
        for pid, m in manifests:
            lo, hi = m["window_start"], m["window_end"]
            windows[pid].append((lo, hi))
            if any(w[0] is None or (w[0] < hi and w[1] > lo) for w in spoiled.get(pid, ())):
                continue
            got = sum(k for s, e, k in batches.get(pid, ()) if s >= lo and e <= hi)
            if got != m["sample_count"]:
                c.flag(
                    "participant {}: recovery {}".format(pid, iso_utc(lo)),
                    "{} of {} buffered samples stored".format(got, m["sample_count"]),
                )
        for n, r in self.rows:
            if r["proximal_outcome"] == NA:
                continue
            lo, hi = _utc(r["outcome_window_start_at"]), _utc(r["outcome_window_end_at"])
            if lo is None or hi is None:
                continue
            overlap = any(s < hi and e > lo for s, e in windows.get(r["participant_id"], ()))
            if overlap and not _has_code(
                self.codes[n], "proximal_outcome", MissingnessCode.SYNC_PENDING_RECOVERED.value
            ):
                c.flag(at(n, "proximal_outcome"), "outcome from recovered data not marked")


def _bare_timestamp(value: str) -> bool:
    if not re.match(r"^\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}", value):
        return False
    try:
        return dateparser.isoparse(value).tzinfo is None
    except ValueError:
        return False


_CHECKS = (
    ("1", "Proximal outcome present or coded for every row", ["outcome_present_or_coded"]),
    ("2", "Randomization agent recorded and consistent", ["agent_consistent"]),
    ("3", "Probability and treatment recorded at every decision point", ["probability_and_treatment"]),
    ("4", "Context recorded regardless of treatment, fresh and coarsened", ["context"]),
    ("5", "Time stamps in UTC with local offsets", ["utc_stamps"]),
    ("5-travel", "Offsets follow the participant's itinerary", ["travel_offsets"]),
    ("6", "Reasons, no blanks, coded missingness, balanced handshake", ["reasons_blanks_codes", "handshake"]),
    ("7", "Buffered tracker data recovered after Bluetooth restoration", ["recovery"]),
)


def _structure(frame: Optional[pd.DataFrame], error: Optional[str]) -> CheckResult:
    c = CheckResult("0", "Export and event log readable, columns complete")
    if error is not None:
        c.flag("input", error)
        return c
    for column in COLUMNS:
        if column not in frame.columns:  # type: ignore
            c.flag("column {}".format(column), "missing column")
    return c


def run_audit(export: Union[str, pd.DataFrame], event_log: Union[str, EventLog]) -> AuditReport:
    """Run every check; unreadable inputs give a failing structure check, not an exception."""
    frame, error = None, None
    try:
        frame = export if isinstance(export, pd.DataFrame) else read_cells(export)
        if not isinstance(event_log, EventLog):
            event_log = read_event_log(event_log)
        event_log.scenario()
    except (ExportFormatError, EventLogError, ValidationError, OSError) as e:
        error = str(e)
    structure = _structure(frame, error)
    checks = [structure]
    if structure.violations:
        for check_id, title, _ in _CHECKS:
            checks.append(CheckResult(check_id, title, applicable=False, note="input not usable"))
        return AuditReport(checks)

    audit = _Audit(frame, event_log)  # type: ignore
    for check_id, title, methods in _CHECKS:
        c = CheckResult(check_id, title)
        if check_id == "5-travel" and not audit.scenario.has_travel():
            c.applicable = False
            c.note = "no travel in this run"
        else:
            for m in methods:
                getattr(audit, m)(c)
        checks.append(c)
    report = AuditReport(checks)
    logger.info(
        "Audit: {PASS} passed, {FAIL} failed, {NOT_APPLICABLE} not applicable".format(**report.summary())
    )
    return report


# ---- seeded corruption ---------------------------------------------------


def _eligible(frame: pd.DataFrame, predicate) -> List[int]:
    return [i for i, r in enumerate(frame.to_dict("records")) if predicate(r)]


def _pick(frame: pd.DataFrame, predicate, rng: np.random.Generator, primitive: str) -> int:
    candidates = _eligible(frame, predicate)
    if not candidates:
        raise ValueError("no row is eligible for {}".format(primitive))
    return int(candidates[rng.integers(len(candidates))])


def _local_iso(utc: int, offset_minutes: int) -> str:
    return iso_utc(utc + offset_minutes * 60)[:-1]


def _no_code(r: Dict[str, str], field_name: str) -> bool:
    return not _has_code(_codes(r["missingness_codes"]), field_name)


def _set(frame: pd.DataFrame, i: int, column: str, value: str) -> str:
    frame.iloc[i, frame.columns.get_loc(column)] = value
    return at(i + 1, column)


def _blank_field(frame, rng, bound):
    i = _pick(frame, lambda r: r["stress"] != NA, rng, "blank_field")
    return [_set(frame, i, "stress", "")]


def _drop_probability(frame, rng, bound):
    i = _pick(frame, lambda r: True, rng, "drop_probability")
    return [_set(frame, i, "probability", NA)]


def _bare_local_timestamp(frame, rng, bound):
    column = "scheduled_local_at"
    values = [
        _local_iso(parse_iso_utc(v), int(o))
        for v, o in zip(frame["scheduled_at"], frame["scheduled_at" + OFFSET_SUFFIX])
    ]
    frame.insert(frame.columns.get_loc("scheduled_at" + OFFSET_SUFFIX) + 1, column, values)
    return ["column {}".format(column)]


def _raw_coordinates(frame, rng, bound):
    i = _pick(frame, lambda r: True, rng, "raw_coordinates")
    lat, lon = 39.9 + rng.random() / 10, -75.2 + rng.random() / 10
    return [_set(frame, i, "location_category", "{:.6f},{:.6f}".format(lat, lon))]


def _strip_reasons(frame, rng, bound):
    i = _pick(
        frame,
        lambda r: r["available"] == "false" and r["availability_reasons"] not in (NA, EMPTY_LIST),
        rng,
        "strip_reasons",
    )
    return [_set(frame, i, "availability_reasons", EMPTY_LIST)]


def _treatment_on_unavailable(frame, rng, bound):
    i = _pick(
        frame,
        lambda r: r["available"] == "false" and r["treatment"] == NA,
        rng,
        "treatment_on_unavailable",
    )
    return [_set(frame, i, "treatment", "1")]


def _outcome_uncoded(frame, rng, bound):
    i = _pick(
        frame,
        lambda r: r["proximal_outcome"] != NA and _no_code(r, "proximal_outcome"),
        rng,
        "outcome_uncoded",
    )
    return [_set(frame, i, "proximal_outcome", NA)]


def _agent_mismatch(frame, rng, bound):
    i = _pick(frame, lambda r: True, rng, "agent_mismatch")
    flipped = {AgentKind.PHONE.value: AgentKind.SERVER.value, AgentKind.SERVER.value: AgentKind.PHONE.value}
    return [_set(frame, i, "agent", flipped[frame["agent"].iloc[i]])]


def _drop_offset(frame, rng, bound):
    column = "randomized_at" + OFFSET_SUFFIX
    i = _pick(frame, lambda r: r["randomized_at"] != NA, rng, "drop_offset")
    return [_set(frame, i, column, NA)]


def _non_utc_stamp(frame, rng, bound):
    i = _pick(frame, lambda r: r["randomized_at"] != NA, rng, "non_utc_stamp")
    utc = parse_iso_utc(frame["randomized_at"].iloc[i])
    off = int(frame["randomized_at" + OFFSET_SUFFIX].iloc[i])
    sign = "-" if off < 0 else "+"
    value = "{}{}{:02d}:{:02d}".format(_local_iso(utc, off), sign, abs(off) // 60, abs(off) % 60)
    return [_set(frame, i, "randomized_at", value)]


def _stale_context(frame, rng, bound):
    i = _pick(
        frame,
        lambda r: r["context_staleness_seconds"] != NA and r["content_id"] not in (NA, GENERIC_CONTENT),
        rng,
        "stale_context",
    )
    return [_set(frame, i, "context_staleness_seconds", str(bound + 1))]


CORRUPTIONS = collections.OrderedDict(
    [
        ("blank_field", _blank_field),
        ("drop_probability", _drop_probability),
        ("bare_local_timestamp", _bare_local_timestamp),
        ("raw_coordinates", _raw_coordinates),
        ("strip_reasons", _strip_reasons),
        ("treatment_on_unavailable", _treatment_on_unavailable),
        ("outcome_uncoded", _outcome_uncoded),
        ("agent_mismatch", _agent_mismatch),
        ("drop_offset", _drop_offset),
        ("non_utc_stamp", _non_utc_stamp),
        ("stale_context", _stale_context),
    ]
)


def corrupt(
    frame: pd.DataFrame, primitive: str, seed: int = 0, freshness_bound_s: int = 2 * 3600
) -> Tuple[pd.DataFrame, List[str]]:
    """A corrupted copy of an exported frame and the locators the audit must flag."""
    if primitive not in CORRUPTIONS:
        raise ValidationError("unknown corruption {!r}".format(primitive), "primitive")
    out = frame.copy()
    rng = np.random.default_rng(seed)
    expected = CORRUPTIONS[primitive](out, rng, freshness_bound_s)
    logger.debug("{}: corrupted {}".format(primitive, ", ".join(expected)))
    return out, expected


def write_cells(frame: pd.DataFrame, path: str) -> str:
    frame.to_csv(path, index=False, lineterminator="\n")
    return path
