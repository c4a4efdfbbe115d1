"""JSON-lines event log of a simulation run.

The first line is a header carrying the schema version and the full scenario;
every following line is one event in processing order. Lines are canonical
JSON, so a run is byte-for-byte reproducible and hashable.
"""

import gzip
import hashlib
import logging
from typing import Any, Dict, Iterator, List, Optional, Union

from .exceptions import EventLogError
from .jsonc import as_canonical_json_string, loads
from .timekeeper import iso_utc

logger = logging.getLogger(__name__)

EVENT_LOG_SCHEMA_VERSION = 1


class EventLog(object):

    header: Dict[str, Any]
    events: List[Dict[str, Any]]

    def __init__(self, scenario: Dict[str, Any]):
        self.header = {
            "type": "header",
            "schema_version": EVENT_LOG_SCHEMA_VERSION,
            "scenario": scenario,
        }
        self.events = []

    def __len__(self):
        return len(self.events)

    def append(
        self,
        type: str,
        utc: int,
        participant_id: str = None,
        tz_offset_minutes: int = 0,
        **fields
    ) -> Dict[str, Any]:
        event = {
            "seq": len(self.events),
            "type": type,
            "utc": utc,
            "at": iso_utc(utc),
            "tz_offset_minutes": tz_offset_minutes,
            "participant_id": participant_id,
        }
        event.update(fields)
        self.events.append(event)
        return event

    def of_type(self, *types: str) -> Iterator[Dict[str, Any]]:
        for e in self.events:
            if e["type"] in types:
                yield e

    def stored(self, kind: str) -> Iterator[Dict[str, Any]]:
        """Payloads of one kind as the server stored them."""
        for e in self.events:
            if e["type"] == "store" and e["kind"] == kind:
                yield e

    def scenario(self):
        from .scenario import ScenarioConfig

        return ScenarioConfig.from_dict(self.header["scenario"])

    def iter_lines(self) -> Iterator[str]:
        yield as_canonical_json_string(self.header)
        for e in self.events:
            yield as_canonical_json_string(e)

    def to_bytes(self) -> bytes:
        return "".join(line + "\n" for line in self.iter_lines()).encode("utf-8")

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def write(self, path: str) -> str:
        data = self.to_bytes()
        if path.endswith(".gz"):
            with open(path, "wb") as f:
                with gzip.GzipFile(fileobj=f, mode="w", mtime=0) as fgz:
                    fgz.write(data)
        else:
            with open(path, "wb") as f:
                f.write(data)
        logger.info("Wrote {} events to {}".format(len(self.events), path))
        return hashlib.sha256(data).hexdigest()


def parse_event_log(data: Union[bytes, str]) -> EventLog:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise EventLogError("event log is not UTF-8: {}".format(e)) from None
    log: Optional[EventLog] = None
    for n, line in enumerate(data.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = loads(line)
        except ValueError as e:
            raise EventLogError("line {}: invalid JSON: {}".format(n, e)) from None
        if not isinstance(obj, dict) or "type" not in obj:
            raise EventLogError("line {}: not an event object".format(n))
        if log is None:
            if obj["type"] != "header":
                raise EventLogError("line {}: event log must start with a header".format(n))
            if obj.get("schema_version") != EVENT_LOG_SCHEMA_VERSION:
                raise EventLogError(
                    "line {}: unsupported schema_version {!r}".format(n, obj.get("schema_version"))
                )
            log = EventLog(obj["scenario"])
            continue
        for key in ("seq", "utc", "at"):
            if key not in obj:
                raise EventLogError("line {}: event lacks {!r}".format(n, key))
        log.events.append(obj)
    if log is None:
        raise EventLogError("empty event log")
    return log


def read_event_log(path: str) -> EventLog:
    if path.endswith(".gz"):
        with gzip.open(path, "rb") as f:
            data = f.read()
    else:
        with open(path, "rb") as f:
            data = f.read()
    return parse_event_log(data)
