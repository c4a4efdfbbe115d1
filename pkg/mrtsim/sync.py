"""At-least-once phone-to-server transfer with handshakes and server-side dedup.

The phone appends every payload to a persisted outbox before any send
attempt and discards an entry only once the server acknowledged its
message_id. The server stores the first sighting of a message_id, acks
repeats without storing them again, and quarantines malformed bodies.
"""

import logging
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

from .exceptions import MalformedPayload
from .model import Connection
from .payloads import validate_payload
from .transcript import TranscriptLogger

logger = logging.getLogger(__name__)

_NAMESPACE = uuid.UUID("6f1c7c52-6d1b-4f0e-9a57-3c1e2d9b8a41")


class SyncStrategy(object):

    # with multiplier 30 and exponent 2: 30, 60, 120, 240 ... seconds
    backoff_mul = 30.0
    backoff_exp = 2
    backoff_cap_s = 3600

    # Cadence of routine upload attempts while online
    sync_interval_s = 15 * 60

    # Write-ahead persistence of outbox entries; off only to demonstrate data loss
    persist_before_send = True

    def backoff_multiplier(self, multiplier: float):
        self.backoff_mul = multiplier
        return self

    def backoff_exponent(self, exponent: int):
        self.backoff_exp = exponent
        return self

    def backoff_cap(self, cap_s: int):
        self.backoff_cap_s = cap_s
        return self

    def sync_interval(self, interval_s: int):
        self.sync_interval_s = interval_s
        return self

    def persist_on_enqueue(self, enabled: bool):
        self.persist_before_send = enabled
        return self

    def backoff_delay(self, failures: int) -> int:
        # need to explicitly skip failures=0, as otherwise x^0 = 1
        if failures <= 0:
            return 0
        return int(min(self.backoff_cap_s, self.backoff_mul * self.backoff_exp ** (failures - 1)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "backoff_multiplier": self.backoff_mul,
            "backoff_exponent": self.backoff_exp,
            "backoff_cap": self.backoff_cap_s,
            "sync_interval": self.sync_interval_s,
            "persist_on_enqueue": self.persist_before_send,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SyncStrategy":
        s = cls()
        if "backoff_multiplier" in d:
            s.backoff_multiplier(d["backoff_multiplier"])
        if "backoff_exponent" in d:
            s.backoff_exponent(d["backoff_exponent"])
        if "backoff_cap" in d:
            s.backoff_cap(d["backoff_cap"])
        if "sync_interval" in d:
            s.sync_interval(d["sync_interval"])
        if "persist_on_enqueue" in d:
            s.persist_on_enqueue(d["persist_on_enqueue"])
        return s


@dataclass(frozen=True)
class SyncEnvelope:
    message_id: str
    participant_id: str
    kind: str
    body: Any
    client_sent_at: Optional[int] = None
    attempt: int = 0

    def resent(self, now: int) -> "SyncEnvelope":
        return replace(self, client_sent_at=now, attempt=self.attempt + 1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "message_id": self.message_id,
            "participant_id": self.participant_id,
            "kind": self.kind,
            "body": self.body,
            "client_sent_at": self.client_sent_at,
            "attempt": self.attempt,
        }


@dataclass
class OutboxEntry:
    envelope: SyncEnvelope
    persisted: bool = False


class PersistentStore(object):
    """Phone flash storage: survives app kills and power cycles."""

    entries: "OrderedDict[str, SyncEnvelope]"
    counter: int

    def __init__(self):
        self.entries = OrderedDict()
        self.counter = 0

    def put(self, envelope: SyncEnvelope) -> None:
        self.entries[envelope.message_id] = envelope

    def delete(self, message_id: str) -> None:
        self.entries.pop(message_id, None)


class Outbox(object):

    participant_id: str
    strategy: SyncStrategy
    store: PersistentStore
    entries: List[OutboxEntry]
    failures: int
    next_attempt_at: Optional[int]

    def __init__(
        self,
        participant_id: str,
        strategy: SyncStrategy = None,
        seed: int = 0,
        store: PersistentStore = None,
    ):
        self.participant_id = participant_id
        self.strategy = strategy or SyncStrategy()
        self.seed = seed
        self.store = store or PersistentStore()
        self.entries = []
        self.failures = 0
        self.next_attempt_at = None
        self.restart()

    def __len__(self):
        return len(self.entries)

    def _next_message_id(self) -> str:
        # deterministic per (seed, participant, counter); the counter is persisted
        self.store.counter += 1
        return str(
            uuid.uuid5(
                _NAMESPACE,
                "{}:{}:{}".format(self.seed, self.participant_id, self.store.counter),
            )
        )

    def enqueue(self, kind: str, body: Any) -> SyncEnvelope:
        envelope = SyncEnvelope(self._next_message_id(), self.participant_id, kind, body)
        entry = OutboxEntry(envelope)
        if self.strategy.persist_before_send:
            self.store.put(envelope)
            entry.persisted = True
        self.entries.append(entry)
        return envelope

    def pending(self) -> List[SyncEnvelope]:
        return [e.envelope for e in self.entries]

    def message_ids(self) -> List[str]:
        return [e.envelope.message_id for e in self.entries]

    def update(self, envelope: SyncEnvelope) -> None:
        for e in self.entries:
            if e.envelope.message_id == envelope.message_id:
                e.envelope = envelope
                if e.persisted:
                    self.store.put(envelope)
                return

    def remove(self, message_id: str) -> None:
        self.entries = [e for e in self.entries if e.envelope.message_id != message_id]
        self.store.delete(message_id)

    def kill(self) -> int:
        """App process dies: memory is gone. Returns the number of entries lost."""
        lost = len([e for e in self.entries if not e.persisted])
        self.entries = []
        self.next_attempt_at = None
        return lost

    def restart(self) -> None:
        self.entries = [OutboxEntry(env, True) for env in self.store.entries.values()]

    def record_failure(self, now: int) -> int:
        self.failures += 1
        delay = self.strategy.backoff_delay(self.failures)
        self.next_attempt_at = now + delay
        logger.debug(
            "{}: sync try #{} failed, next attempt in {} seconds".format(
                self.participant_id, self.failures, delay
            )
        )
        return delay

    def record_success(self) -> None:
        self.failures = 0
        self.next_attempt_at = None


@dataclass(frozen=True)
class Ack:
    message_id: str
    ok: bool
    stored: bool
    reason: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "message_id": self.message_id,
            "ok": self.ok,
            "stored": self.stored,
            "reason": self.reason,
        }


@dataclass
class StoredPayload:
    envelope: SyncEnvelope
    stored_at: int


@dataclass
class QuarantineRow:
    envelope: SyncEnvelope
    reason: str
    quarantined_at: int


class ServerStore(object):
    """Server-side ingest: idempotent by message_id."""

    stored: "OrderedDict[str, StoredPayload]"
    quarantine: "OrderedDict[str, QuarantineRow]"
    duplicates: int
    listeners: List[Callable[[str, Any, int], None]]

    def __init__(self):
        self.stored = OrderedDict()
        self.quarantine = OrderedDict()
        self.duplicates = 0
        self.listeners = []

    def on_event(self, listener: Callable[[str, Any, int], None]) -> None:
        self.listeners.append(listener)

    def _emit(self, what: str, obj: Any, now: int) -> None:
        for listener in self.listeners:
            listener(what, obj, now)

    def server_ingest(self, envelope: SyncEnvelope, now: int) -> Ack:
        mid = envelope.message_id
        if mid in self.stored:
            self.duplicates += 1
            self._emit("duplicate", envelope, now)
            return Ack(mid, ok=True, stored=False)
        if mid in self.quarantine:
            return Ack(mid, ok=False, stored=False, reason=self.quarantine[mid].reason)
        try:
            validate_payload(envelope.kind, envelope.body)
        except MalformedPayload as e:
            row = QuarantineRow(envelope, str(e), now)
            self.quarantine[mid] = row
            logger.warning("Quarantined {} from {}: {}".format(mid, envelope.participant_id, e))
            self._emit("quarantine", row, now)
            return Ack(mid, ok=False, stored=False, reason=str(e))
        self.stored[mid] = StoredPayload(envelope, now)
        self._emit("store", self.stored[mid], now)
        return Ack(mid, ok=True, stored=True)


@dataclass
class SendReport:
    sent: int = 0
    removed: int = 0
    acks_lost: int = 0
    nacked: int = 0
    acks: List[Ack] = field(default_factory=list)


def attempt_send(
    outbox: Outbox,
    network_state: Optional[Connection],
    server: ServerStore,
    now: int,
    ack_lost: Callable[[SyncEnvelope], bool] = None,
    transcript: TranscriptLogger = None,
    corrupt: Callable[[SyncEnvelope], SyncEnvelope] = None,
) -> SendReport:
    report = SendReport()
    if network_state == Connection.CAPTIVE_PORTAL:
        # requests land on the portal login page: no usable ack, nothing stored
        for env in outbox.pending():
            env = env.resent(now)
            outbox.update(env)
            report.sent += 1
            if transcript is not None:
                transcript.dump_envelope("phone->portal", env.to_dict(), now)
                transcript.dump_failed(env.message_id, "captive portal", now)
        if report.sent:
            outbox.record_failure(now)
        return report
    if network_state != Connection.ONLINE:
        if len(outbox):
            outbox.record_failure(now)
        return report

    any_failure = False
    for env in outbox.pending():
        env = env.resent(now)
        outbox.update(env)
        report.sent += 1
        wire = corrupt(env) if corrupt is not None else env
        if transcript is not None:
            transcript.dump_envelope("phone->server", wire.to_dict(), now)
        ack = server.server_ingest(wire, now)
        report.acks.append(ack)
        if ack_lost is not None and ack_lost(env):
            report.acks_lost += 1
            any_failure = True
            if transcript is not None:
                transcript.dump_ack(ack.to_dict(), now, lost=True)
            continue
        if transcript is not None:
            transcript.dump_ack(ack.to_dict(), now)
        if not ack.ok:
            # the server holds it in quarantine: the phone copy can go
            report.nacked += 1
        outbox.remove(env.message_id)
        report.removed += 1

    if any_failure:
        outbox.record_failure(now)
    else:
        outbox.record_success()
    return report


def ledger_balance(
    generated: Dict[str, Any], server: ServerStore, outboxes: Dict[str, Outbox]
) -> Tuple[List[str], List[str]]:
    """(missing, unexpected) message ids: generated but nowhere / stored but never generated."""
    in_flight = set()
    for ob in outboxes.values():
        in_flight.update(ob.message_ids())
    landed = set(server.stored) | set(server.quarantine)
    missing = sorted(m for m in generated if m not in landed and m not in in_flight)
    unexpected = sorted(m for m in landed if m not in generated)
    return missing, unexpected
