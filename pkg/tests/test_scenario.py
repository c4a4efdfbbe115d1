import json

import pytest

from mrtsim.exceptions import UnknownComponent, ValidationError
from mrtsim.scenario import (
    EffectConfig,
    FaultKind,
    FaultSpec,
    RegionLayout,
    ScenarioConfig,
    haversine_m,
    load_scenario,
    loads_scenario,
    random_fault_schedule,
)

from .conftest import T0

DAY = 86400

BAD_PROBABILITY = """{
  "schema_version": 1,
  "trial": {
    "participant_count": 2,
    "study_days": 3,
    "components": [
      {
        "id": "suggestions",
        "decision_points_per_day": 5,
        "randomization_probability": 1.7,
        "proximal_window": {"kind": "POST_WINDOW_MINUTES", "minutes": 30}
      }
    ]
  }
}
"""


def test_default_scenario_round_trips():
    scenario = ScenarioConfig.heartsteps_default(seed=5)
    d = scenario.to_dict()
    assert ScenarioConfig.from_dict(json.loads(json.dumps(d))) == scenario
    assert d["schema_version"] == 1


def test_round_trip_keeps_faults():
    scenario = ScenarioConfig.heartsteps_default(participant_count=3, study_days=5)
    faults = random_fault_schedule(3, scenario, 12)
    with_faults = ScenarioConfig(
        trial=scenario.trial, effects=scenario.effects, faults=faults, seed=1
    )
    assert ScenarioConfig.from_dict(with_faults.to_dict()).faults == faults


def test_error_carries_path_and_line():
    with pytest.raises(ValidationError) as info:
        loads_scenario(BAD_PROBABILITY)
    assert info.value.field == "trial.components[0].randomization_probability"
    assert info.value.line == 10
    assert str(info.value).startswith("line 10: trial.components[0].randomization_probability")


def test_error_line_follows_the_whole_path():
    scenario = ScenarioConfig.heartsteps_default(participant_count=3, study_days=5)
    faults = random_fault_schedule(3, scenario, 4)
    d = ScenarioConfig(trial=scenario.trial, effects=scenario.effects, faults=faults).to_dict()
    d["faults"][1]["kind"] = "SOLAR_FLARE"
    text = json.dumps(d, indent=2)
    lines = text.splitlines()
    expected = next(i for i, line in enumerate(lines, 1) if "SOLAR_FLARE" in line)
    assert sum('"kind"' in line for line in lines[: expected - 1]) > 1
    with pytest.raises(ValidationError) as info:
        loads_scenario(text)
    assert info.value.field == "faults[1].kind"
    assert info.value.line == expected


def test_invalid_json_reports_line():
    with pytest.raises(ValidationError) as info:
        loads_scenario('{\n  "schema_version": 1,\n  "trial": ,\n}')
    assert info.value.line == 3


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"schema_version": 2}, "schema_version"),
        ({"colour": "red"}, "colour"),
        ({"agent": "WATCH"}, "agent"),
        ({"seed": -1}, "seed"),
        ({"wear_window_s": 0}, "wear_window_s"),
        ({"behavior": {"driving_probability": 2}}, "behavior.driving_probability"),
        ({"effects": {"suggestions": {"delta": -3}}}, "effects.suggestions.delta"),
        ({"effects": {"suggestions": {"gamma": 1}}}, "effects.suggestions.gamma"),
        ({"faults": [{"kind": "METEOR", "start": "2015-08-03T12:00:00Z"}]}, "faults[0].kind"),
        ({"faults": [{"kind": "GPS_OFF", "start": "2015-08-03T12:00:00"}]}, "faults[0].start"),
        (
            {"faults": [{"kind": "GPS_OFF", "participants": ["P999"], "start": {"day": 0}, "duration_minutes": 5}]},
            "faults[0].participants",
        ),
    ],
)
def test_invalid_fields(patch, field):
    d = ScenarioConfig.heartsteps_default(participant_count=2, study_days=3).to_dict()
    d.update(patch)
    with pytest.raises(ValidationError) as info:
        loads_scenario(json.dumps(d, indent=2))
    assert info.value.field == field


def test_effects_must_name_known_components():
    with pytest.raises(UnknownComponent):
        ScenarioConfig(
            trial=ScenarioConfig.heartsteps_default().trial,
            effects={"walking": EffectConfig(delta=1.0)},
        )


def test_local_fault_instants_resolve_in_home_time():
    d = ScenarioConfig.heartsteps_default(participant_count=2, study_days=3).to_dict()
    d["faults"] = [{"kind": "CONNECTIVITY_LOSS", "start": {"day": 1, "time": "09:00"}, "duration_minutes": 90}]
    fault = loads_scenario(json.dumps(d)).faults[0]
    assert fault.start == T0 + DAY + 3600
    assert fault.end == fault.start + 90 * 60
    assert fault.participants == ()
    assert fault.applies_to("P002")


def test_fault_windows():
    with pytest.raises(ValidationError):
        FaultSpec(FaultKind.GPS_OFF, (), T0)
    with pytest.raises(ValidationError):
        FaultSpec(FaultKind.GPS_OFF, (), T0, T0)
    with pytest.raises(ValidationError):
        FaultSpec(FaultKind.TIMEZONE_TRAVEL, (), T0, T0 + DAY)
    assert FaultSpec(FaultKind.APP_SWIPE_KILL, (), T0).end == T0 + 60
    dropout = FaultSpec(FaultKind.DROPOUT, ("P001",), T0)
    assert dropout.active_at(T0 + 100 * DAY)
    assert not dropout.active_at(T0 - 1)


def test_itinerary_follows_travel_and_phone_setting():
    base = ScenarioConfig.heartsteps_default(participant_count=2, study_days=7)
    trip = FaultSpec(
        FaultKind.TIMEZONE_TRAVEL, ("P001",), T0 + DAY, T0 + 3 * DAY,
        tz_offset_minutes=60, tz_name="CET", phone_updates=False,
    )
    scenario = ScenarioConfig(trial=base.trial, effects=base.effects, faults=(trip,))
    assert scenario.has_travel()
    assert scenario.itinerary_for("P001").segment_at(T0 + 2 * DAY).tz_offset_minutes == 60
    assert scenario.itinerary_for("P001", phone=True).segment_at(T0 + 2 * DAY).tz_offset_minutes == -240
    assert not scenario.itinerary_for("P002").has_travel()


def test_dropout_at_takes_earliest():
    base = ScenarioConfig.heartsteps_default(participant_count=2, study_days=7)
    faults = (
        FaultSpec(FaultKind.DROPOUT, ("P001",), T0 + 3 * DAY),
        FaultSpec(FaultKind.DROPOUT, (), T0 + 2 * DAY),
    )
    scenario = ScenarioConfig(trial=base.trial, faults=faults)
    assert scenario.dropout_at("P001") == T0 + 2 * DAY
    assert scenario.dropout_at("P002") == T0 + 2 * DAY


def test_random_fault_schedule_is_seeded():
    scenario = ScenarioConfig.heartsteps_default(participant_count=4, study_days=7)
    a = random_fault_schedule(9, scenario, 30)
    assert a == random_fault_schedule(9, scenario, 30)
    assert a != random_fault_schedule(10, scenario, 30)
    assert len(a) == 30
    assert all(len(f.participants) == 1 for f in a)
    assert all(f.end is None for f in a if f.kind == FaultKind.DROPOUT)


def test_effect_modifiers():
    e = EffectConfig(delta=30.0, weekend_delta=10.0, decay_to_day=10, break_delta=20.0)
    assert e.effect_for(0, False, "walk") == 30.0
    assert e.effect_for(0, False, "break") == 20.0
    assert e.effect_for(0, True, "walk") == 10.0
    assert e.effect_for(5, False, "walk") == 15.0
    assert e.effect_for(12, False, "walk") == 0.0


def test_regions():
    layout = RegionLayout()
    home, work = layout.home(0), layout.work(0)
    assert home.contains(home.lat, home.lon)
    assert not home.contains(work.lat, work.lon)
    assert haversine_m(0.0, 0.0, 0.0, 1.0) == pytest.approx(111195, rel=1e-3)


def test_load_scenario_from_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(ScenarioConfig.heartsteps_default(seed=2).to_dict()))
    assert load_scenario(str(path)).seed == 2
