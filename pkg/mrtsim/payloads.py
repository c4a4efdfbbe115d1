import abc
import enum
from typing import Any, Dict, List, Tuple

from .exceptions import MalformedPayload


class PayloadKind(str, enum.Enum):
    RANDOMIZATION = "randomization"
    ENGAGEMENT = "engagement"
    CONTEXT = "context"
    TRACKER_SAMPLES = "tracker_samples"
    PHONE_FIT_SAMPLES = "phone_fit_samples"
    DAILY_SURVEY = "daily_survey"
    SYNC_MANIFEST = "sync_manifest"


_REQUIRED: Dict[PayloadKind, Tuple[str, ...]] = {
    PayloadKind.RANDOMIZATION: (
        "participant_id",
        "component_id",
        "global_index",
        "probability",
        "outcome",
        "availability",
    ),
    PayloadKind.ENGAGEMENT: ("participant_id", "component_id", "global_index", "kind", "at"),
    PayloadKind.CONTEXT: (
        "participant_id",
        "component_id",
        "global_index",
        "purpose",
        "snapshot",
    ),
    PayloadKind.TRACKER_SAMPLES: ("samples",),
    PayloadKind.PHONE_FIT_SAMPLES: ("samples",),
    PayloadKind.DAILY_SURVEY: ("participant_id", "day_index", "responses", "recorded_at"),
    PayloadKind.SYNC_MANIFEST: ("window_start", "window_end", "sample_count"),
}

_SAMPLE_KEYS = ("start", "end", "steps")


def validate_payload(kind: str, body: Any) -> PayloadKind:
    """Raise MalformedPayload unless body is a well-formed payload of that kind."""
    try:
        k = PayloadKind(kind)
    except ValueError:
        raise MalformedPayload("Unknown payload kind {!r}".format(kind)) from None
    if not isinstance(body, dict):
        raise MalformedPayload(
            "Payload body is not an object: {}".format(type(body).__name__)
        )
    missing = [f for f in _REQUIRED[k] if f not in body]
    if missing:
        raise MalformedPayload(
            "Payload {} is missing field(s): {}".format(k.value, ", ".join(missing))
        )
    if k in (PayloadKind.TRACKER_SAMPLES, PayloadKind.PHONE_FIT_SAMPLES):
        samples = body["samples"]
        if not isinstance(samples, list):
            raise MalformedPayload("samples is not a list")
        for i, s in enumerate(samples):
            if not isinstance(s, dict) or any(f not in s for f in _SAMPLE_KEYS):
                raise MalformedPayload("sample #{} is malformed".format(i))
            if not isinstance(s["steps"], int) or s["steps"] < 0 or s["end"] <= s["start"]:
                raise MalformedPayload("sample #{} has invalid values".format(i))
    return k


class AbstractPayloadProcessor(metaclass=abc.ABCMeta):
    @abc.abstractmethod
    def process_one_payload(self, kind: str, body: Dict[str, Any], stored_at: int) -> None:
        pass

    @abc.abstractmethod
    def return_all_data(self):
        pass


class PayloadListProcessor(AbstractPayloadProcessor):
    """Collects the payloads of one kind, giving subclasses a hook per item."""

    kind: PayloadKind
    data: List

    def __init__(self, kind: PayloadKind):
        self.kind = kind
        self.data = []

    def process_one_payload(self, kind: str, body: Dict[str, Any], stored_at: int) -> None:
        if kind != self.kind.value:
            return
        for entry in self.mangle_payload(body, stored_at):
            unit = self.process_item(entry)
            if unit is not None:
                # allows killing bad entries
                self.data.append(unit)

    def return_all_data(self):
        return self.data

    @staticmethod
    def process_item(entry):
        return entry

    @staticmethod
    def mangle_payload(body: Dict[str, Any], stored_at: int) -> List[Any]:
        return [dict(body, stored_at=stored_at)]


class SampleListProcessor(PayloadListProcessor):
    """Flattens sample batches, each sample tagged with its server arrival instant."""

    @staticmethod
    def mangle_payload(body: Dict[str, Any], stored_at: int) -> List[Any]:
        return [dict(s, stored_at=stored_at) for s in body["samples"]]
