import datetime
from decimal import Decimal

import pytest

from mrtsim.exceptions import UnknownComponent, ValidationError
from mrtsim.model import (
    NO_RESPONSE,
    ComponentSpec,
    ContextSnapshot,
    DailyObservation,
    LocationCategory,
    ProximalWindow,
    TrialConfig,
    Weather,
    build_schedule,
    clean_daily,
    count_decision_points,
    evenly_spaced_slots,
    heartsteps_trial,
    parse_probability,
)


def test_default_trial_counts():
    trial = heartsteps_trial()
    assert count_decision_points(trial, "suggestions") == 7770
    assert count_decision_points(trial, "planning") == 1554
    assert count_decision_points(trial, "suggestions", per_participant=True) == 210
    assert count_decision_points(trial, "planning", per_participant=True) == 42
    assert len(build_schedule(trial)) == 9324


def test_count_restricted_to_participants():
    trial = heartsteps_trial()
    assert count_decision_points(trial, "suggestions", participant_ids=["P001", "P002"]) == 420
    assert count_decision_points(trial, "suggestions", participant_ids=["P999"]) == 0


def test_unknown_component():
    with pytest.raises(UnknownComponent):
        count_decision_points(heartsteps_trial(), "walking")


def test_schedule_global_index_is_day_major():
    trial = heartsteps_trial(participant_count=1, study_days=3)
    points = [p for p in build_schedule(trial) if p.component_id == "suggestions"]
    assert [p.global_index for p in points] == list(range(15))
    assert points[7].day_index == 1
    assert points[7].slot_index == 2
    assert points[7].scheduled_local_time == datetime.time(14, 0)
    assert len({p.key for p in build_schedule(trial)}) == 18


def test_evenly_spaced_slots():
    start, end = datetime.time(8, 0), datetime.time(20, 0)
    assert evenly_spaced_slots(5, start, end) == tuple(
        datetime.time(h, 0) for h in (8, 11, 14, 17, 20)
    )
    assert evenly_spaced_slots(1, start, end) == (datetime.time(20, 0),)


def test_planning_slot_time_is_explicit():
    assert heartsteps_trial().slot_times("planning") == (datetime.time(21, 0),)


@pytest.mark.parametrize("value", ["1.5", -0.1, "abc", True, "NaN"])
def test_bad_probability(value):
    with pytest.raises(ValidationError):
        parse_probability(value)


def test_probability_keeps_decimal_text():
    assert parse_probability(0.6) == Decimal("0.6")
    assert str(parse_probability("0.60")) == "0.60"


def test_component_validation():
    with pytest.raises(ValidationError):
        ComponentSpec("x", 0, Decimal("0.5"), ProximalWindow.post_window(30))
    with pytest.raises(ValidationError):
        ComponentSpec(
            "x",
            2,
            Decimal("0.5"),
            ProximalWindow.post_window(30),
            slot_times=(datetime.time(9, 0),),
        )
    with pytest.raises(ValidationError):
        ProximalWindow.post_window(0)


def test_trial_round_trips_through_dict():
    trial = heartsteps_trial(participant_count=3, study_days=5)
    assert TrialConfig.from_dict(trial.to_dict()) == trial


def test_trial_from_dict_reports_field_path():
    d = heartsteps_trial().to_dict()
    d["components"][1]["randomization_probability"] = "2"
    with pytest.raises(ValidationError) as info:
        TrialConfig.from_dict(d)
    assert info.value.field == "trial.components[1].randomization_probability"

    d = heartsteps_trial().to_dict()
    del d["study_days"]
    with pytest.raises(ValidationError) as info:
        TrialConfig.from_dict(d)
    assert info.value.field == "trial.study_days"


def test_duplicate_component_ids():
    c = ComponentSpec("a", 1, Decimal("0.5"), ProximalWindow.next_day_total())
    with pytest.raises(ValidationError):
        TrialConfig(participant_count=1, study_days=1, components=(c, c))


def test_unknown_location_requires_failed_capture():
    with pytest.raises(ValidationError):
        ContextSnapshot(
            captured_at=0,
            location_category=LocationCategory.UNKNOWN,
            weather=Weather.SUNNY,
            recent_activity=False,
            connection=None,
            coordinates=(42.28, -83.74),
        )
    failed = ContextSnapshot.failed(100)
    assert failed.capture_failed
    assert failed.location_category == LocationCategory.UNKNOWN
    assert failed.aged(400).staleness == 300


def test_clean_daily_keeps_last_recorded():
    obs = [
        DailyObservation("P001", 0, "stress", 2, 100),
        DailyObservation("P001", 0, "stress", 4, 200),
        DailyObservation("P001", 1, "stress", NO_RESPONSE, 300),
        DailyObservation("P001", 0, "typicality", 3, 150),
    ]
    cleaned = clean_daily(obs)
    assert len(cleaned) == 3
    by_key = {(o.day_index, o.measure_id): o.value for o in cleaned}
    assert by_key[(0, "stress")] == 4
    assert by_key[(1, "stress")] == NO_RESPONSE


@pytest.mark.parametrize("count,first,last", [(37, "P001", "P037"), (1200, "P0001", "P1200")])
def test_participant_ids_sort_numerically(count, first, last):
    ids = heartsteps_trial(participant_count=count, study_days=1).participant_ids()
    assert ids[0] == first
    assert ids[-1] == last
    assert sorted(ids) == ids
