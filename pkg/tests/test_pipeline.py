import warnings
from fractions import Fraction

import pytest

from mrtsim.model import (
    NO_RESPONSE,
    ContextSnapshot,
    DailyObservation,
    LocationCategory,
    Weather,
    heartsteps_trial,
)
from mrtsim.pipeline import (
    MissingnessCode,
    OutcomeSource,
    SampleSeries,
    build_variant,
    codes_for,
    coarsen_location,
    compute_next_day_total,
    compute_proximal_window,
    differing_rows,
    impute_from_redundant,
    merge_daily,
    prorated_total,
    round_half_up,
    unavailability_trend,
    window_outcome,
    zero_impute,
)
from mrtsim.scenario import RegionLayout
from mrtsim.timekeeper import TravelItinerary

from .conftest import T0, make_row

NULLABLE = (
    "treatment",
    "randomized_at",
    "delivered_at",
    "content_id",
    "context_staleness_seconds",
    "delivery_delay_seconds",
    "timing_skew_seconds",
    "engagement",
    "outcome_window_start_at",
    "outcome_window_end_at",
    "proximal_outcome",
    "redundant_outcome",
    "stress",
    "typicality",
)

GAP = "proximal_outcome:SENSOR_GAP_AMBIGUOUS"


def test_round_half_up():
    assert round_half_up(2.5) == 3
    assert round_half_up(Fraction(7, 2)) == 4
    assert round_half_up(-0.5) == 0
    assert round_half_up(1.49) == 1


def test_prorated_total_counts_overlap_fraction():
    total = prorated_total([0, 60], [60, 120], [60, 30], 30, 90)
    assert total == 45
    assert prorated_total([0], [60], [7], 0, 20) == Fraction(7, 3)


def test_series_sorted_and_covered():
    s = SampleSeries([120, 0], [180, 60], [5, 10])
    assert list(s.starts) == [0, 120]
    assert s.covers(50, 130)
    assert not s.covers(60, 120)
    assert s.total(0, 180) == 15


def test_silent_gap_between_samples_is_zero():
    s = SampleSeries([0, 7200], [60, 7260], [5, 5])
    assert window_outcome(s, 1800, 3600, 14400) == (0, None)
    assert window_outcome(s, 1800, 3600, 1000) == (None, MissingnessCode.SENSOR_GAP_AMBIGUOUS)
    # no later sample: the tracker may simply be off
    assert window_outcome(s, 8000, 9000, 14400) == (None, MissingnessCode.SENSOR_GAP_AMBIGUOUS)
    assert window_outcome(SampleSeries(), 0, 60, 14400) == (
        None,
        MissingnessCode.SENSOR_GAP_AMBIGUOUS,
    )


def test_proximal_and_next_day_windows():
    s = SampleSeries([0, 60], [60, 120], [10, 20])
    assert compute_proximal_window(s, 0, window_s=120) == (30, None)
    trial = heartsteps_trial(participant_count=1, study_days=3)
    it = TravelItinerary.fixed(-240, "EDT")
    assert compute_next_day_total(s, trial, 2, it) == (None, MissingnessCode.END_OF_STUDY)


def _gap_row(**changes):
    return make_row(outcome=None, missingness_codes=(GAP,), **changes)


def test_zero_impute_only_fills_ambiguous_gaps():
    rows = [_gap_row(), make_row(outcome=None, missingness_codes=("proximal_outcome:DROPPED_OUT",))]
    out = zero_impute(rows)
    assert out[0].proximal_outcome == 0
    assert out[0].outcome_source == OutcomeSource.TRACKER_ZERO_IMPUTED
    assert out[0].has_code("proximal_outcome", MissingnessCode.SENSOR_GAP_AMBIGUOUS)
    assert out[1].proximal_outcome is None


def test_redundant_imputation_uses_phone_coverage():
    row = _gap_row()
    lo = row.outcome_window_start_at.utc
    phone = {"P001": SampleSeries([lo], [lo + 600], [85])}
    out = impute_from_redundant([row], phone)[0]
    assert out.proximal_outcome == 85
    assert out.outcome_source == OutcomeSource.REDUNDANT_IMPUTED


def test_redundant_without_coverage_equals_zero_variant():
    rows = [_gap_row(global_index=i) for i in range(3)] + [make_row(global_index=3)]
    assert zero_impute(impute_from_redundant(rows, {})) == zero_impute(rows)
    assert zero_impute(impute_from_redundant(rows, {"P001": SampleSeries()})) == zero_impute(rows)


def test_merge_daily_uses_strictly_earlier_observations():
    row = make_row()
    obs = [
        DailyObservation("P001", 0, "stress", 4, T0 - 100),
        DailyObservation("P001", 1, "stress", 5, T0),
        DailyObservation("P001", 0, "typicality", NO_RESPONSE, T0 - 50),
    ]
    merged = merge_daily([row], obs)[0]
    assert merged.stress == 4
    assert merged.typicality == NO_RESPONSE
    assert "typicality:NO_RESPONSE" in merged.missingness_codes
    none = merge_daily([row], [])[0]
    assert none.stress is None
    assert codes_for(none.missingness_codes, "stress") == ["NO_PRIOR"]


def test_coarsen_location():
    layout = RegionLayout()
    home, work = layout.home(0), layout.work(0)

    def snap(coords, failed=False):
        return ContextSnapshot(0, LocationCategory.OTHER, Weather.SUNNY, False, None, coordinates=coords, capture_failed=failed)

    assert coarsen_location(snap((home.lat, home.lon)), home, work).value == "HOME"
    assert coarsen_location(snap((work.lat, work.lon)), home, work).value == "WORK"
    assert coarsen_location(snap((0.0, 0.0)), home, work).value == "OTHER"
    assert coarsen_location(snap(None), home, work).value == "UNKNOWN"
    assert coarsen_location(None, home, work).value == "UNKNOWN"


def test_unavailability_trend():
    rows = [
        make_row(global_index=0),
        make_row(global_index=1, treatment=None),
        make_row(global_index=5),
        make_row(global_index=0, component_id="planning", treatment=None),
    ]
    trend = unavailability_trend(rows, "suggestions")
    assert list(trend["decision_points"]) == [2, 1]
    assert list(trend["unavailable"]) == [0.5, 0.0]
    assert list(trend["RECENTLY_WALKING"]) == [0.5, 0.0]
    assert unavailability_trend([], "suggestions").empty


def test_unavailability_trend_mixed_reasons_without_warnings():
    rows = [
        make_row(global_index=0),
        make_row(global_index=1, treatment=None),
        make_row(global_index=2, treatment=None, availability_reasons=("DRIVING",)),
    ]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        trend = unavailability_trend(rows)
    assert list(trend["decision_points"]) == [3]
    assert trend["unavailable"][0] == pytest.approx(2 / 3)
    assert trend["DRIVING"][0] == pytest.approx(1 / 3)
    assert trend["RECENTLY_WALKING"][0] == pytest.approx(1 / 3)


def test_unknown_variant(small_log):
    with pytest.raises(ValueError):
        build_variant(small_log, "median")


def test_one_row_per_scheduled_point(small_log, zero_rows):
    assert len(zero_rows) == 4 * 7 * 6
    assert len({r.key for r in zero_rows}) == len(zero_rows)
    assert [r.key for r in zero_rows] == sorted(r.key for r in zero_rows)


def test_raw_rows_code_every_absent_field(small_log, faulted_run):
    for log in (small_log, faulted_run[0]):
        for r in build_variant(log, "raw"):
            assert r.outcome_source != OutcomeSource.TRACKER_ZERO_IMPUTED
            for name in NULLABLE:
                if getattr(r, name) is None:
                    assert codes_for(r.missingness_codes, name), (r.key, name)
            assert r.available == (r.treatment is not None)
            assert r.available == (r.availability_reasons == ())


def test_variants_differ_only_where_imputed(zero_rows, redundant_rows):
    assert [r.key for r in zero_rows] == [r.key for r in redundant_rows]
    for key in differing_rows(zero_rows, redundant_rows):
        z = next(r for r in zero_rows if r.key == key)
        d = next(r for r in redundant_rows if r.key == key)
        assert z.outcome_source == OutcomeSource.TRACKER_ZERO_IMPUTED
        assert d.outcome_source == OutcomeSource.REDUNDANT_IMPUTED
    for z, d in zip(zero_rows, redundant_rows):
        if z.outcome_source == OutcomeSource.TRACKER:
            assert d == z


def test_probability_recorded_on_every_row(zero_rows):
    for r in zero_rows:
        assert str(r.probability) == ("0.6" if r.component_id == "suggestions" else "0.5")
