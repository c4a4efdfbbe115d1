"""Seeded, counter-based random streams.

One independent Philox stream per (purpose, participant, component): draws
made for one participant never shift the draws of another, and the phone and
server agents consume identical randomization sequences.
"""

import hashlib
from typing import Dict, Tuple

import numpy as np

RANDOMIZATION = "randomization"
BEHAVIOR = "behavior"
CONTEXT = "context"
USER = "user"
PUSH = "push"
SENSOR = "sensor"
SURVEY = "survey"
IDS = "ids"
FAULTS = "faults"


def _word(label: str) -> int:
    # stable across interpreter runs (unlike hash())
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:4], "big")


def stream(seed: int, purpose: str, participant_id: str = "", component_id: str = ""):
    ss = np.random.SeedSequence(
        entropy=seed & (2 ** 64 - 1),
        spawn_key=(_word(purpose), _word(participant_id), _word(component_id)),
    )
    return np.random.Generator(np.random.Philox(ss))


class StreamBank(object):
    """Lazily creates and caches the streams of one simulation run."""

    seed: int
    _streams: Dict[Tuple[str, str, str], np.random.Generator]

    def __init__(self, seed: int):
        self.seed = seed
        self._streams = {}

    def get(
        self, purpose: str, participant_id: str = "", component_id: str = ""
    ) -> np.random.Generator:
        key = (purpose, participant_id, component_id)
        if key not in self._streams:
            self._streams[key] = stream(self.seed, purpose, participant_id, component_id)
        return self._streams[key]
