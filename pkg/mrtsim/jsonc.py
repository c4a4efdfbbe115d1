"""Canonical JSON for the event log, the transcript and the reports.

Keys sorted, no insignificant whitespace, UTF-8 kept as-is and floats in the
shortest ES6 form, so the same value always encodes to the same bytes.
Reworked from the cyberphone/json-canonicalization serializer
(Copyright 2006-2019 WebPKI.org, Apache-2.0 License).
"""

import enum
import json
from decimal import Decimal
from json.encoder import encode_basestring  # type: ignore
from typing import Any, List


def es6_number(value: float) -> str:
    fvalue = float(value)
    # takes "-0" as well
    if fvalue == 0:
        return "0"
    text = repr(fvalue)
    if "n" in text:  # inf, nan
        raise ValueError("Invalid JSON number: " + text)

    sign = ""
    if text.startswith("-"):
        sign = "-"
        text = text[1:]

    exp = 0
    if "e" in text:
        text, exp_str = text.split("e")
        exp = int(exp_str)

    first, _, last = text.partition(".")
    if last == "0":
        last = ""

    if 0 < exp < 21:
        # integers up to 21 digits are written in full
        digits = first + last
        return sign + digits + "0" * (exp - len(last))
    if -7 < exp < 0:
        # 0.000001 is the lower limit for the plain notation
        return sign + "0." + "0" * (-exp - 1) + first + last
    if exp != 0:
        return sign + first + ("." + last if last else "") + "e" + (
            "+" if exp > 0 else "-"
        ) + str(abs(exp))
    return sign + first + ("." + last if last else "")


def _encode(o: Any, out: List[str]) -> None:
    if o is None:
        out.append("null")
    elif o is True:
        out.append("true")
    elif o is False:
        out.append("false")
    elif isinstance(o, enum.Enum):
        _encode(o.value, out)
    elif isinstance(o, str):
        out.append(encode_basestring(o))
    elif isinstance(o, int):
        out.append(str(o))
    elif isinstance(o, float):
        out.append(es6_number(o))
    elif isinstance(o, Decimal):
        # probabilities travel as decimal strings, never as floats
        out.append(encode_basestring(str(o)))
    elif isinstance(o, dict):
        out.append("{")
        first = True
        for key in sorted(o.keys()):
            if not isinstance(key, str):
                raise TypeError("Keys must be strings, got {!r}".format(key))
            if not first:
                out.append(",")
            first = False
            out.append(encode_basestring(key))
            out.append(":")
            _encode(o[key], out)
        out.append("}")
    elif isinstance(o, (list, tuple)):
        out.append("[")
        for i, item in enumerate(o):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(o, (set, frozenset)):
        _encode(sorted(o, key=str), out)
    elif hasattr(o, "item"):
        # numpy scalars
        _encode(o.item(), out)
    else:
        raise TypeError(
            "Object of type {} is not JSON serializable".format(type(o).__name__)
        )


def as_canonical_json_string(d: Any) -> str:
    out: List[str] = []
    _encode(d, out)
    return "".join(out)


def loads(s: str) -> Any:
    return json.loads(s)
