import datetime
from dataclasses import replace
from decimal import Decimal

import numpy as np
import pytest
from scipy import stats

from mrtsim.agents import (
    DEVICE_OFF,
    GENERIC_CONTENT,
    UNDELIVERED_TREATMENT,
    AgentKind,
    EngagementKind,
    LognormalPushChannel,
    Outcome,
    PushChannelInterface,
    RandomizationRecord,
    RecordTable,
    UserAction,
    engage,
    missed_record,
    phone_agent_step,
    prefetch,
    randomize,
    server_agent_prepare,
    server_agent_step,
    tailor_content,
)
from mrtsim.availability import AvailabilityResult, Reason
from mrtsim.exceptions import ValidationError
from mrtsim.model import (
    Connection,
    ContextSnapshot,
    DecisionPoint,
    LocationCategory,
    Weather,
    heartsteps_trial,
)
from mrtsim.pipeline import build_variant
from mrtsim.sim import run
from mrtsim.timekeeper import Stamp

from .conftest import T0

P = Decimal("0.6")
AVAILABLE = AvailabilityResult(True, frozenset(), T0)
WALKING = AvailabilityResult(False, frozenset([Reason.RECENTLY_WALKING]), T0)
CLOCK = Stamp(T0, -240, "EDT")


def dp(index=0):
    return DecisionPoint("P001", "suggestions", index, index // 5, index % 5, datetime.time(8, 0))


def snap(captured_at=T0 - 60):
    return ContextSnapshot(
        captured_at=captured_at,
        location_category=LocationCategory.WORK,
        weather=Weather.RAIN,
        recent_activity=False,
        connection=Connection.ONLINE,
    )


class NeverArrives(object):
    def deliver(self, sent_at):
        return None


def test_treat_frequency_within_binomial_interval():
    rng = np.random.default_rng(2015)
    n = 2000
    treated = sum(
        randomize(dp(i), AVAILABLE, P, rng, CLOCK).outcome == Outcome.TREAT for i in range(n)
    )
    lo, hi = stats.binom.interval(0.99, n, float(P))
    assert lo <= treated <= hi


def test_unavailable_points_draw_nothing():
    a, b = np.random.default_rng(1), np.random.default_rng(1)
    plain = [randomize(dp(i), AVAILABLE, P, a, CLOCK).outcome for i in range(20)]
    interleaved = []
    for i in range(20):
        record = randomize(dp(i), WALKING, P, b, CLOCK)
        assert record.outcome == Outcome.NOT_RANDOMIZED
        assert record.probability == P
        interleaved.append(randomize(dp(i), AVAILABLE, P, b, CLOCK).outcome)
    assert plain == interleaved


def test_record_invariants():
    with pytest.raises(ValidationError):
        RandomizationRecord("P001", "s", 0, P, Outcome.TREAT, WALKING, CLOCK, None, AgentKind.PHONE)
    with pytest.raises(ValidationError):
        RandomizationRecord(
            "P001", "s", 0, P, Outcome.NO_TREAT, AVAILABLE, CLOCK, CLOCK, AgentKind.PHONE
        )
    with pytest.raises(ValidationError):
        RandomizationRecord(
            "P001",
            "s",
            0,
            P,
            Outcome.TREAT,
            AVAILABLE,
            CLOCK,
            Stamp(T0 - 1, -240),
            AgentKind.PHONE,
        )


def test_record_dict_round_trip():
    record = RandomizationRecord(
        "P001", "suggestions", 3, P, Outcome.TREAT, AVAILABLE, CLOCK, CLOCK, AgentKind.SERVER,
        content_id="suggestions:break:work:rain", scheduled_at=CLOCK, context_staleness=60,
    )
    assert RandomizationRecord.from_dict(record.to_dict()) == record


def test_tailoring_uses_fresh_context_only():
    content, staleness = tailor_content(dp(0), snap(), T0, 7200)
    assert content == "suggestions:walk:work:rain"
    assert staleness == 60
    content, staleness = tailor_content(dp(1), snap(T0 - 7201), T0, 7200)
    assert content == GENERIC_CONTENT
    assert staleness == 7201
    assert tailor_content(dp(1), None, T0, 7200) == (GENERIC_CONTENT, None)


def _first_treating_rng():
    seed = 0
    while randomize(dp(), AVAILABLE, P, np.random.default_rng(seed)).outcome != Outcome.TREAT:
        seed += 1
    return seed


def test_phone_delivers_online():
    seed = _first_treating_rng()
    record, delivery = phone_agent_step(
        dp(), CLOCK, Connection.ONLINE, None, snap(), AVAILABLE, P,
        np.random.default_rng(seed), 7200,
    )
    assert record.outcome == Outcome.TREAT
    assert record.delivered_at == CLOCK
    assert delivery.channel == "LOCAL"
    assert record.agent == AgentKind.PHONE


def test_phone_uses_cache_offline_and_otherwise_records_undelivered():
    seed = _first_treating_rng()
    cache = prefetch(dp(), T0, snap(T0 - 1900), T0 - 1800, Connection.ONLINE, 7200)
    record, delivery = phone_agent_step(
        dp(), CLOCK, Connection.OFFLINE, cache, snap(), AVAILABLE, P,
        np.random.default_rng(seed), 7200,
    )
    assert delivery.channel == "CACHE"
    assert record.content_id == cache.content_id
    assert record.context_staleness == 100

    record, delivery = phone_agent_step(
        dp(), CLOCK, Connection.OFFLINE, None, snap(), AVAILABLE, P,
        np.random.default_rng(seed), 7200,
    )
    assert delivery is None
    assert record.outcome == Outcome.TREAT
    assert record.delivered_at is None
    assert record.data_note == UNDELIVERED_TREATMENT


def test_prefetch_needs_connection_and_lead_time():
    assert prefetch(dp(), T0, snap(), T0 - 60, Connection.OFFLINE, 7200) is None
    with pytest.raises(ValidationError):
        prefetch(dp(), T0, snap(), T0, Connection.ONLINE, 7200)


def test_server_push_delay_and_drop():
    seed = _first_treating_rng()
    channel = LognormalPushChannel(np.random.default_rng(5), drop_probability=0.0)
    record = server_agent_step(
        dp(), AVAILABLE, P, np.random.default_rng(seed), channel, CLOCK, snap(), 7200
    )
    assert record.agent == AgentKind.SERVER
    assert record.delivered_at.utc >= CLOCK.utc
    assert isinstance(NeverArrives(), PushChannelInterface)
    record = server_agent_step(
        dp(), AVAILABLE, P, np.random.default_rng(seed), NeverArrives(), CLOCK, snap(), 7200
    )
    assert record.delivered_at is None
    assert record.data_note == UNDELIVERED_TREATMENT


def test_disabled_push_channel_still_consumes_draws():
    a = LognormalPushChannel(np.random.default_rng(9), enabled=False)
    b = np.random.default_rng(9)
    assert a.sample_delay() == (0, False)
    b.random()
    b.standard_normal()
    assert a.rng.random() == b.random()


def test_missed_record():
    record = missed_record(dp(), P, AgentKind.PHONE, T0, CLOCK)
    assert record.outcome == Outcome.NOT_RANDOMIZED
    assert record.availability.reasons == frozenset([Reason.NO_CONNECTION])
    assert record.data_note == DEVICE_OFF


def test_record_table_is_prebuilt():
    trial = heartsteps_trial(participant_count=2, study_days=3)
    table = server_agent_prepare(trial)
    assert len(table) == 2 * 3 * 6
    record = randomize(dp(0), WALKING, P, np.random.default_rng(0), CLOCK, AgentKind.SERVER)
    table.fill(record)
    assert table.get(record.key) == record
    with pytest.raises(ValidationError):
        table.fill(record)
    assert len(table.unfilled()) == 35
    with pytest.raises(KeyError):
        RecordTable([]).fill(record)


def test_engagement_first_action_within_timeout():
    seed = _first_treating_rng()
    record, _ = phone_agent_step(
        dp(), CLOCK, Connection.ONLINE, None, snap(), AVAILABLE, P,
        np.random.default_rng(seed), 7200,
    )
    actions = [
        UserAction(T0 - 5, EngagementKind.THUMBS_DOWN),
        UserAction(T0 + 120, EngagementKind.SNOOZE_SET, snooze_seconds=3600),
        UserAction(T0 + 300, EngagementKind.THUMBS_UP),
    ]
    event = engage(record, actions)
    assert event.kind == EngagementKind.SNOOZE_SET
    assert event.snooze.expires_at == T0 + 120 + 3600

    late = [UserAction(T0 + 1800, EngagementKind.THUMBS_UP)]
    event = engage(record, late)
    assert event.kind == EngagementKind.NO_RESPONSE
    assert event.at == T0 + 1800


def test_engagement_pending_before_timeout():
    seed = _first_treating_rng()
    record, _ = phone_agent_step(
        dp(), CLOCK, Connection.ONLINE, None, snap(), AVAILABLE, P,
        np.random.default_rng(seed), 7200,
    )
    delivered = record.delivered_at.utc
    actions = [UserAction(delivered + 600, EngagementKind.THUMBS_UP)]
    assert engage(record, actions, clock=delivered + 300) is None
    assert engage(record, [], clock=delivered + 1799) is None

    event = engage(record, actions, clock=delivered + 600)
    assert event.kind == EngagementKind.THUMBS_UP
    assert event.at == delivered + 600

    event = engage(record, [], clock=delivered + 1800)
    assert event.kind == EngagementKind.NO_RESPONSE
    assert event.at == delivered + 1800


def test_engagement_needs_delivery():
    record = randomize(dp(), WALKING, P, np.random.default_rng(0), CLOCK)
    with pytest.raises(ValidationError):
        engage(record, [])


def test_phone_and_server_agents_agree_on_a_clean_network(small_scenario, zero_rows):
    server_log, _ = run(replace(small_scenario, agent=AgentKind.SERVER))
    server_rows = {r.key: r for r in build_variant(server_log, "zero")}
    assert set(server_rows) == {r.key for r in zero_rows}
    for row in zero_rows:
        other = server_rows[row.key]
        assert other.agent == "SERVER"
        assert (other.treatment, other.probability, other.available) == (
            row.treatment,
            row.probability,
            row.available,
        )
