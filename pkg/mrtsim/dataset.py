"""CSV and JSON-lines exports of the analysis rows, and reading them back.

Column order is fixed by ``COLUMNS``. Instants are UTC ISO-8601 strings
("...Z"), each followed by a ``<name>_tz_offset_minutes`` column. Lists are
``|``-joined in CSV (``NONE`` when empty); absent values are ``NA`` in CSV and
``null`` in JSON-lines.
"""

import collections
import logging
import os
from decimal import Decimal, InvalidOperation
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from .exceptions import ExportFormatError, ValidationError
from .jsonc import as_canonical_json_string, loads
from .model import NO_RESPONSE
from .pipeline import AnalysisRow, MissingnessCode, OutcomeSource
from .timekeeper import Stamp, iso_utc, parse_iso_utc

logger = logging.getLogger(__name__)

NA = "NA"
EMPTY_LIST = "NONE"
OFFSET_SUFFIX = "_tz_offset_minutes"

# name: (type, unit, description)
_FIELDS: "collections.OrderedDict[str, Tuple[str, str, str]]" = collections.OrderedDict(
    [
        ("participant_id", ("str", "", "Participant identifier")),
        ("component_id", ("str", "", "Intervention component")),
        ("global_index", ("int", "", "Decision-point index within participant and component, 0-based")),
        ("day_index", ("int", "day", "Study day, 0-based, local calendar")),
        ("slot_index", ("int", "", "Slot within the day, 0-based")),
        ("scheduled_local_time", ("str", "HH:MM", "Protocol wall-clock time of the slot")),
        ("day_of_week", ("str", "", "MON..SUN of the local study day")),
        ("weekend", ("bool", "", "Saturday or Sunday")),
        ("scheduled_at", ("stamp", "UTC", "Correctly localized scheduled instant")),
        ("agent", ("str", "", "PHONE or SERVER randomization agent")),
        ("available", ("bool", "", "Available for randomization")),
        ("availability_reasons", ("list", "", "Reasons for unavailability, NONE when available")),
        ("probability", ("decimal", "", "Randomization probability, decimal string")),
        ("treatment", ("int", "", "1 treated, 0 not treated; NA when unavailable")),
        ("randomized_at", ("stamp", "UTC", "Instant the agent randomized")),
        ("delivered_at", ("stamp", "UTC", "Instant the treatment reached the participant")),
        ("content_id", ("str", "", "Delivered content, 'generic' when context was stale")),
        ("context_staleness_seconds", ("int", "s", "Age of the tailoring context at content selection")),
        ("delivery_delay_seconds", ("int", "s", "delivered_at - randomized_at")),
        ("timing_skew_seconds", ("int", "s", "randomized_at - scheduled_at")),
        ("engagement", ("str", "", "THUMBS_UP, THUMBS_DOWN, SNOOZE_SET or NO_RESPONSE")),
        ("outcome_window_start_at", ("stamp", "UTC", "Start of the proximal outcome window")),
        ("outcome_window_end_at", ("stamp", "UTC", "End (exclusive) of the proximal outcome window")),
        ("proximal_outcome", ("int", "steps", "Tracker steps over the outcome window, per variant")),
        ("outcome_source", ("source", "", "Where proximal_outcome came from")),
        ("redundant_outcome", ("int", "steps", "Phone step counts over the same window")),
        ("location_category", ("str", "", "HOME, WORK, OTHER or UNKNOWN")),
        ("weather", ("str", "", "Weather tag; modal tag of the day for daily components")),
        ("stress", ("score", "1-5", "Latest daily stress answer recorded before randomization")),
        ("typicality", ("score", "1-5", "Latest daily typicality answer recorded before randomization")),
        ("recent_treatment_count", ("int", "", "Deliveries of this component in the prior 24 h")),
        ("travel_excluded", ("bool", "", "Excluded under the EXCLUDE_TRAVEL policy")),
        ("missingness_codes", ("list", "", "field:CODE entries explaining absent values")),
    ]
)

STAMP_FIELDS = tuple(k for k, v in _FIELDS.items() if v[0] == "stamp")


def _columns() -> List[str]:
    cols = []
    for name, (typ, _, _) in _FIELDS.items():
        cols.append(name)
        if typ == "stamp":
            cols.append(name + OFFSET_SUFFIX)
    return cols


COLUMNS = tuple(_columns())


def dataset_dictionary() -> Dict[str, Any]:
    columns = []
    for name in COLUMNS:
        if name.endswith(OFFSET_SUFFIX):
            base = name[: -len(OFFSET_SUFFIX)]
            columns.append(
                {
                    "name": name,
                    "type": "int",
                    "unit": "min",
                    "description": "Local UTC offset in force at {}".format(base),
                }
            )
            continue
        typ, unit, description = _FIELDS[name]
        columns.append({"name": name, "type": typ, "unit": unit, "description": description})
    return {
        "columns": columns,
        "missingness_codes": [c.value for c in MissingnessCode],
        "outcome_sources": [s.value for s in OutcomeSource],
        "na": {"csv": NA, "jsonl": None},
        "empty_list": EMPTY_LIST,
    }


def _flat(row: AnalysisRow) -> Dict[str, Any]:
    d: Dict[str, Any] = {}
    for name, (typ, _, _) in _FIELDS.items():
        value = getattr(row, name)
        if typ == "stamp":
            d[name] = iso_utc(value.utc) if value is not None else None
            d[name + OFFSET_SUFFIX] = value.tz_offset_minutes if value is not None else None
        elif typ == "source":
            d[name] = value.value
        elif typ == "decimal":
            d[name] = str(value)
        elif typ == "list":
            d[name] = list(value) if value is not None else None
        else:
            d[name] = value
    return d


def cell_text(value: Any) -> Optional[str]:
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return "|".join(value) if value else EMPTY_LIST
    return str(value)


def to_frame(rows: Sequence[AnalysisRow]) -> pd.DataFrame:
    records = [{k: cell_text(v) for k, v in _flat(r).items()} for r in rows]
    return pd.DataFrame.from_records(records, columns=list(COLUMNS))


def to_csv_bytes(rows: Sequence[AnalysisRow]) -> bytes:
    frame = to_frame(rows)
    return frame.to_csv(index=False, na_rep=NA, lineterminator="\n").encode("utf-8")


def to_jsonl_bytes(rows: Sequence[AnalysisRow]) -> bytes:
    lines = []
    for r in rows:
        d = _flat(r)
        # canonical JSON: keys sorted
        lines.append(as_canonical_json_string(d))
    return "".join(line + "\n" for line in lines).encode("utf-8")


def export(rows: Sequence[AnalysisRow], fmt: str, path: str) -> str:
    """Write rows sorted by (participant, component, global_index); returns the path."""
    rows = sorted(rows, key=lambda r: r.key)
    if fmt == "csv":
        data = to_csv_bytes(rows)
    elif fmt == "jsonl":
        data = to_jsonl_bytes(rows)
    else:
        raise ValidationError("unknown export format {!r}".format(fmt), "format")
    with open(path, "wb") as f:
        f.write(data)
    logger.info("Exported {} rows to {}".format(len(rows), path))
    return path


def write_dictionary(directory: str, name: str = "dataset_dictionary.json") -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(as_canonical_json_string(dataset_dictionary()) + "\n")
    return path


class _Parser(object):
    """Typed parsing of one exported row; errors name row and column."""

    def __init__(self, n: int, csv: bool):
        self.n = n
        self.csv = csv

    def fail(self, column: str, message: str):
        raise ExportFormatError("row {}: {}: {}".format(self.n, column, message))

    def absent(self, value: Any) -> bool:
        return value is None or (self.csv and value == NA)

    def integer(self, column: str, value: Any) -> Optional[int]:
        if self.absent(value):
            return None
        if isinstance(value, bool):
            self.fail(column, "expected an integer")
        try:
            return int(value)
        except (TypeError, ValueError):
            self.fail(column, "expected an integer, got {!r}".format(value))
        return None

    def boolean(self, column: str, value: Any) -> bool:
        if isinstance(value, bool):
            return value
        if value in ("true", "false"):
            return value == "true"
        self.fail(column, "expected true/false, got {!r}".format(value))
        return False

    def text(self, column: str, value: Any) -> Optional[str]:
        if self.absent(value):
            return None
        if not isinstance(value, str) or value == "":
            self.fail(column, "expected a non-empty string")
        return value

    def stamp(self, column: str, value: Any, offset: Any) -> Optional[Stamp]:
        if self.absent(value):
            if not self.absent(offset):
                self.fail(column + OFFSET_SUFFIX, "offset without an instant")
            return None
        off = self.integer(column + OFFSET_SUFFIX, offset)
        if off is None:
            self.fail(column + OFFSET_SUFFIX, "missing offset")
        if not isinstance(value, str) or not value.endswith("Z"):
            self.fail(column, "not a UTC instant: {!r}".format(value))
        try:
            return Stamp(parse_iso_utc(value), off)  # type: ignore
        except ValidationError as e:
            self.fail(column, str(e))
        return None

    def listing(self, column: str, value: Any) -> Optional[Tuple[str, ...]]:
        if self.absent(value):
            return None
        if isinstance(value, list):
            return tuple(value)
        if value == EMPTY_LIST:
            return ()
        return tuple(value.split("|"))

    def score(self, column: str, value: Any) -> Any:
        if self.absent(value):
            return None
        if value == NO_RESPONSE:
            return value
        return self.integer(column, value)


def _row_from(d: Dict[str, Any], n: int, csv: bool) -> AnalysisRow:
    p = _Parser(n, csv)
    kwargs: Dict[str, Any] = {}
    for name, (typ, _, _) in _FIELDS.items():
        value = d.get(name)
        if typ == "stamp":
            kwargs[name] = p.stamp(name, value, d.get(name + OFFSET_SUFFIX))
        elif typ == "int":
            kwargs[name] = p.integer(name, value)
        elif typ == "bool":
            kwargs[name] = p.boolean(name, value)
        elif typ == "decimal":
            try:
                kwargs[name] = Decimal(value)
            except (InvalidOperation, TypeError, ValueError):
                p.fail(name, "expected a decimal string, got {!r}".format(value))
        elif typ == "source":
            try:
                kwargs[name] = OutcomeSource(value)
            except ValueError:
                p.fail(name, "unknown outcome source {!r}".format(value))
        elif typ == "list":
            kwargs[name] = p.listing(name, value)
        elif typ == "score":
            kwargs[name] = p.score(name, value)
        else:
            kwargs[name] = p.text(name, value)
    for name in ("participant_id", "component_id", "global_index", "scheduled_at", "agent", "probability"):
        if kwargs[name] is None:
            p.fail(name, "required value missing")
    kwargs["missingness_codes"] = kwargs["missingness_codes"] or ()
    return AnalysisRow(**kwargs)


def read_export(path: str) -> List[AnalysisRow]:
    """Parse a CSV or JSON-lines export back into rows."""
    if path.endswith(".jsonl"):
        rows = []
        with open(path, "r", encoding="utf-8") as f:
            for n, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    d = loads(line)
                except ValueError as e:
                    raise ExportFormatError("row {}: invalid JSON: {}".format(n, e)) from None
                if not isinstance(d, dict) or set(d) != set(COLUMNS):
                    raise ExportFormatError("row {}: columns differ from the dataset dictionary".format(n))
                rows.append(_row_from(d, n, csv=False))
        return rows
    frame = read_raw_csv(path)
    return [_row_from(rec, n, csv=True) for n, rec in enumerate(frame.to_dict("records"), 1)]


def read_raw_csv(path: str) -> pd.DataFrame:
    """Every cell as the literal string written, no NA inference."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ExportFormatError("unreadable CSV: {}".format(e)) from None
    if list(frame.columns) != list(COLUMNS):
        missing = [c for c in COLUMNS if c not in frame.columns]
        extra = [c for c in frame.columns if c not in COLUMNS]
        raise ExportFormatError(
            "columns differ from the dataset dictionary (missing: {}; unexpected: {})".format(
                ", ".join(missing) or "-", ", ".join(extra) or "-"
            )
        )
    return frame
