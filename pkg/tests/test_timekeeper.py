import datetime

import pytest

from mrtsim.exceptions import ItineraryError, ValidationError
from mrtsim.model import TimezonePolicy, build_schedule, heartsteps_trial
from mrtsim.timekeeper import (
    Segment,
    Stamp,
    TravelItinerary,
    iso_utc,
    local_seconds_of,
    local_to_utc,
    localize_schedule,
    parse_iso_utc,
    stamp,
)

from .conftest import T0

SPRING_FORWARD = 1425798000  # 2015-03-08T07:00:00Z
FALL_BACK = 1446357600  # 2015-11-01T06:00:00Z
DAY = 86400


def test_iso_round_trip():
    assert iso_utc(T0) == "2015-08-03T12:00:00Z"
    assert parse_iso_utc("2015-08-03T12:00:00Z") == T0
    assert parse_iso_utc("2015-08-03T08:00:00-04:00") == T0


@pytest.mark.parametrize("text", ["2015-08-03T12:00:00", "yesterday"])
def test_bare_or_garbled_instants_rejected(text):
    with pytest.raises(ValidationError):
        parse_iso_utc(text)


def test_stamp_offset_bounds():
    Stamp(T0, 840)
    with pytest.raises(ValidationError):
        Stamp(T0, 841)
    assert Stamp(T0, -240).local_datetime() == datetime.datetime(2015, 8, 3, 8, 0)


def test_itinerary_validation():
    with pytest.raises(ItineraryError):
        TravelItinerary([])
    with pytest.raises(ItineraryError):
        TravelItinerary([Segment(10, 0), Segment(5, 60)])
    with pytest.raises(ItineraryError):
        TravelItinerary.fixed(-240).segment_at(-1)


def test_with_segment_resumes_previous_offset():
    it = TravelItinerary.fixed(-240, "EDT").with_segment(T0, T0 + DAY, -600, "HST", travel=True)
    assert stamp(T0 - 1, it).tz_offset_minutes == -240
    assert stamp(T0, it).tz_name == "HST"
    assert stamp(T0 + DAY, it).tz_offset_minutes == -240
    assert it.has_travel()
    assert it.travel_overlaps(T0 - 10, T0 + 10)
    assert not it.travel_overlaps(T0 + DAY, T0 + 2 * DAY)
    assert TravelItinerary.from_list(it.to_list()) == it


def test_spring_forward_rolls_nonexistent_time():
    it = TravelItinerary([Segment(0, -300, "EST"), Segment(SPRING_FORWARD, -240, "EDT")])
    local = local_seconds_of(datetime.date(2015, 3, 8), datetime.time(2, 30))
    assert local_to_utc(local, it) == (SPRING_FORWARD, True)


def test_fall_back_takes_first_occurrence():
    it = TravelItinerary([Segment(0, -240, "EDT"), Segment(FALL_BACK, -300, "EST")])
    local = local_seconds_of(datetime.date(2015, 11, 1), datetime.time(1, 30))
    utc, rolled = local_to_utc(local, it)
    assert iso_utc(utc) == "2015-11-01T05:30:00Z"
    assert not rolled


def _travel_itinerary():
    # 08:00 EDT on day 1 to 08:00 EDT on day 4, spent in Hawaii
    return TravelItinerary.fixed(-240, "EDT").with_segment(
        T0 + DAY, T0 + 4 * DAY, -600, "HST", travel=True
    )


def test_travel_keeps_five_points_per_local_day_in_order():
    trial = heartsteps_trial(participant_count=1, study_days=7)
    schedule = [dp for dp in build_schedule(trial) if dp.component_id == "suggestions"]
    points = localize_schedule(schedule, _travel_itinerary(), trial.start_date)
    per_day = {}
    for p in points:
        per_day.setdefault(p.dp.day_index, []).append(p)
    assert all(len(v) == 5 for v in per_day.values())
    fires = [p.fire.utc for p in points]
    assert fires == sorted(fires)
    assert len(set(fires)) == len(fires)
    # local wall clock of each fire matches its slot
    for p in points:
        assert p.fire.local_datetime().time() == p.dp.scheduled_local_time
    assert per_day[2][0].fire.tz_name == "HST"
    assert not any(p.excluded for p in points)


def test_exclude_travel_policy_marks_travel_days():
    trial = heartsteps_trial(participant_count=1, study_days=7)
    schedule = [dp for dp in build_schedule(trial) if dp.component_id == "suggestions"]
    points = localize_schedule(
        schedule, _travel_itinerary(), trial.start_date, TimezonePolicy.EXCLUDE_TRAVEL
    )
    assert len(points) == 35
    excluded_days = {p.dp.day_index for p in points if p.excluded}
    assert excluded_days == {1, 2, 3, 4}
    assert all(p.exclusion_reason == "TRAVEL" for p in points if p.excluded)


def test_localize_with_per_participant_itineraries():
    trial = heartsteps_trial(participant_count=2, study_days=1)
    schedule = build_schedule(trial)
    its = {"P001": TravelItinerary.fixed(-240, "EDT"), "P002": TravelItinerary.fixed(60, "CET")}
    points = localize_schedule(schedule, its, trial.start_date)
    first = {p.dp.participant_id: p.fire for p in points if p.dp.global_index == 0 and p.dp.component_id == "suggestions"}
    assert iso_utc(first["P001"].utc) == "2015-08-03T12:00:00Z"
    assert iso_utc(first["P002"].utc) == "2015-08-03T07:00:00Z"
