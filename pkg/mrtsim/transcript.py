# Derived from https://raw.githubusercontent.com/requests/toolbelt/22f424a6d336fb37a416926a6524aa3604bab64d/requests_toolbelt/utils/dump.py
# Copyright 2014 Ian Cordasco, Cory Benfield
# Licensed under the Apache License, Version 2.0
# Reworked to record simulated phone-server exchanges.

import gzip
import os
from typing import Any, Callable, Dict, List, Optional

from .jsonc import as_canonical_json_string, loads

MASKED = "<<masked>>"


class FieldFilter(object):
    """Stack of masks applied to every (key, value) pair before it is written."""

    stack: List[Callable[[str, Any], Any]]

    def __init__(self):
        self.stack = []

    def mask_by_name(self, field_name: str, show_first_chars: int = None):
        def fn(name, value, field_name=field_name):
            if name.lower() != field_name.lower() or value is None:
                return value
            if show_first_chars is None:
                return MASKED
            return "<<masked value={}...>>".format(str(value)[0:show_first_chars])

        self.stack.append(fn)

        return self

    def mask_coordinates(self):
        # raw GPS never reaches a file, only its presence
        def fn(name, value):
            if name == "coordinates" and value is not None:
                return "<<masked coordinates>>"
            return value

        self.stack.append(fn)

        return self

    def apply(self, obj: Any) -> Any:
        if isinstance(obj, dict):
            out = {}
            for k, v in obj.items():
                for mask in self.stack:
                    v = mask(k, v)
                out[k] = self.apply(v)
            return out
        if isinstance(obj, list):
            return [self.apply(v) for v in obj]
        return obj


class TranscriptLogger(object):
    """Length-prefixed canonical-JSON frames of every envelope and ack exchanged.

    Frame layout: ``<byte length>\\n<json>\\n``.
    """

    path: str
    name: str
    field_filter: Optional[FieldFilter]

    bytearr: bytearray
    counter: int

    def __init__(self, path: str, name: str = "transcript"):
        self.path = path
        self.name = name
        self.field_filter = FieldFilter().mask_coordinates()
        self.reset()

    def reset(self):
        self.bytearr = bytearray()
        self.counter = 0

    def with_field_filter(self, field_filter: FieldFilter):
        self.field_filter = field_filter
        return self

    def _frame(self, record: Dict[str, Any]) -> None:
        self.counter += 1
        if self.field_filter is not None:
            record = self.field_filter.apply(record)
        data = as_canonical_json_string(record).encode("utf-8")
        self.bytearr.extend(str(len(data)).encode("ascii") + b"\n" + data + b"\n")

    def dump_envelope(self, direction: str, envelope: Dict[str, Any], at: int) -> None:
        self._frame({"type": "envelope", "direction": direction, "at": at, "envelope": envelope})

    def dump_ack(self, ack: Dict[str, Any], at: int, lost: bool = False) -> None:
        self._frame({"type": "ack", "at": at, "lost": lost, "ack": ack})

    def dump_failed(self, message_id: str, reason: str, at: int) -> None:
        self._frame({"type": "failed", "at": at, "message_id": message_id, "reason": reason})

    def to_file(self) -> str:
        filename = self.name + ".frames"
        with open(os.path.join(self.path, filename), "wb") as f:
            f.write(self.bytearr)
        self.reset()
        return filename

    def to_gz_file(self) -> str:
        filename = self.name + ".frames.gz"
        # mtime=0 keeps the gzip header, hence the file, reproducible
        with open(os.path.join(self.path, filename), "wb") as f:
            with gzip.GzipFile(fileobj=f, mode="w", mtime=0) as fgz:
                fgz.write(self.bytearr)
        self.reset()
        return filename


def read_frames(data: bytes) -> List[Dict[str, Any]]:
    frames = []
    pos = 0
    while pos < len(data):
        nl = data.index(b"\n", pos)
        length = int(data[pos:nl])
        body = data[nl + 1 : nl + 1 + length]
        frames.append(loads(body.decode("utf-8")))
        pos = nl + 1 + length + 1
    return frames
