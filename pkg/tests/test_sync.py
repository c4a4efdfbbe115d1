import numpy as np
import pytest

from mrtsim.model import Connection
from mrtsim.sync import (
    Outbox,
    PersistentStore,
    ServerStore,
    SyncEnvelope,
    SyncStrategy,
    attempt_send,
    ledger_balance,
)
from mrtsim.transcript import TranscriptLogger, read_frames

SAMPLES = {"samples": [{"start": 0, "end": 60, "steps": 3}]}


def test_backoff_delays():
    s = SyncStrategy()
    assert [s.backoff_delay(n) for n in range(6)] == [0, 30, 60, 120, 240, 480]
    assert s.backoff_cap(100).backoff_delay(10) == 100
    assert SyncStrategy.from_dict(s.to_dict()).to_dict() == s.to_dict()


def test_message_ids_are_deterministic_and_unique():
    a, b = Outbox("P001", seed=4), Outbox("P001", seed=4)
    ids_a = [a.enqueue("tracker_samples", SAMPLES).message_id for _ in range(5)]
    ids_b = [b.enqueue("tracker_samples", SAMPLES).message_id for _ in range(5)]
    assert ids_a == ids_b
    assert len(set(ids_a)) == 5
    assert Outbox("P002", seed=4).enqueue("tracker_samples", SAMPLES).message_id not in ids_a


def test_offline_keeps_entries_and_backs_off():
    ob, server = Outbox("P001"), ServerStore()
    ob.enqueue("tracker_samples", SAMPLES)
    report = attempt_send(ob, Connection.OFFLINE, server, 1000)
    assert report.sent == 0
    assert len(ob) == 1
    assert ob.next_attempt_at == 1030
    attempt_send(ob, None, server, 1030)
    assert ob.next_attempt_at == 1090


def test_captive_portal_stores_nothing():
    ob, server = Outbox("P001"), ServerStore()
    ob.enqueue("tracker_samples", SAMPLES)
    t = TranscriptLogger("/nonexistent")
    report = attempt_send(ob, Connection.CAPTIVE_PORTAL, server, 50, transcript=t)
    assert report.sent == 1
    assert not server.stored
    assert ob.pending()[0].attempt == 1
    assert [f["type"] for f in read_frames(bytes(t.bytearr))] == ["envelope", "failed"]


def test_lost_ack_resend_is_deduplicated():
    ob, server = Outbox("P001"), ServerStore()
    env = ob.enqueue("tracker_samples", SAMPLES)
    report = attempt_send(ob, Connection.ONLINE, server, 10, ack_lost=lambda e: True)
    assert report.acks_lost == 1
    assert len(ob) == 1
    report = attempt_send(ob, Connection.ONLINE, server, 40)
    assert report.removed == 1
    assert server.duplicates == 1
    assert list(server.stored) == [env.message_id]
    assert len(ob) == 0
    assert ob.failures == 0


def test_malformed_payload_is_quarantined_and_acked():
    ob, server = Outbox("P001"), ServerStore()
    seen = []
    server.on_event(lambda what, obj, now: seen.append(what))
    env = ob.enqueue("tracker_samples", {"samples": [{"start": 5}]})
    report = attempt_send(ob, Connection.ONLINE, server, 10)
    assert report.nacked == 1
    assert env.message_id in server.quarantine
    assert not server.stored
    assert seen == ["quarantine"]
    assert len(ob) == 0
    ack = server.server_ingest(env, 20)
    assert not ack.ok


def test_corrupted_wire_copy_only_affects_server():
    ob, server = Outbox("P001"), ServerStore()
    env = ob.enqueue("tracker_samples", SAMPLES)

    def garble(e):
        return SyncEnvelope(e.message_id, e.participant_id, e.kind, "garbage", e.client_sent_at)

    attempt_send(ob, Connection.ONLINE, server, 10, corrupt=garble)
    assert server.quarantine[env.message_id].envelope.body == "garbage"


def test_kill_loses_only_unpersisted_entries():
    store = PersistentStore()
    ob = Outbox("P001", store=store)
    ob.enqueue("tracker_samples", SAMPLES)
    assert ob.kill() == 0
    ob.restart()
    assert len(ob) == 1

    volatile = Outbox("P002", SyncStrategy().persist_on_enqueue(False))
    volatile.enqueue("tracker_samples", SAMPLES)
    assert volatile.kill() == 1
    volatile.restart()
    assert len(volatile) == 0


def _random_schedule(seed, rounds):
    """Random connectivity, ack losses and app kills; then a clean drain."""
    rng = np.random.default_rng(seed)
    store = PersistentStore()
    ob, server = Outbox("P001", seed=seed, store=store), ServerStore()
    generated = []
    states = [Connection.ONLINE, Connection.OFFLINE, Connection.CAPTIVE_PORTAL, None]
    for r in range(rounds):
        for _ in range(rng.integers(0, 4)):
            generated.append(ob.enqueue("tracker_samples", SAMPLES).message_id)
        state = states[rng.integers(0, len(states))]
        loss = rng.random()
        attempt_send(ob, state, server, r * 60, ack_lost=lambda e: rng.random() < loss)
        if rng.random() < 0.1:
            ob.kill()
            ob.restart()
    assert ledger_balance(dict.fromkeys(generated), server, {"P001": ob}) == ([], [])
    attempt_send(ob, Connection.ONLINE, server, rounds * 60)
    return generated, ob, server


@pytest.mark.parametrize("seed", range(5))
def test_exactly_once_after_drain(seed):
    generated, ob, server = _random_schedule(seed, 10)
    assert len(ob) == 0
    assert sorted(server.stored) == sorted(generated)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(50))
def test_exactly_once_many_schedules(seed):
    generated, ob, server = _random_schedule(1000 + seed, 10)
    assert len(ob) == 0
    assert sorted(server.stored) == sorted(generated)
    assert ledger_balance(dict.fromkeys(generated), server, {"P001": ob}) == ([], [])
