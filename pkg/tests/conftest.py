from decimal import Decimal

import pytest

from mrtsim.pipeline import AnalysisRow, OutcomeSource, build_variant
from mrtsim.scenario import ScenarioConfig
from mrtsim.sim import run
from mrtsim.timekeeper import Stamp

# 2015-08-03T12:00:00Z, a Monday
T0 = 1438603200


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo and full-catalog runs")


@pytest.fixture(scope="session")
def small_scenario():
    return ScenarioConfig.heartsteps_default(seed=11, participant_count=4, study_days=7)


@pytest.fixture(scope="session")
def small_run(small_scenario):
    return run(small_scenario)


@pytest.fixture(scope="session")
def small_log(small_run):
    return small_run[0]


@pytest.fixture(scope="session")
def small_ledger(small_run):
    return small_run[1]


@pytest.fixture(scope="session")
def zero_rows(small_log):
    return build_variant(small_log, "zero")


@pytest.fixture(scope="session")
def redundant_rows(small_log):
    return build_variant(small_log, "redundant")


def make_row(
    participant_id="P001",
    global_index=0,
    treatment=1,
    outcome=100,
    probability="0.6",
    component_id="suggestions",
    **changes
):
    """A hand-built analysis row; unavailable when treatment is None."""
    at = Stamp(T0 + global_index * 3600, -240, "EDT")
    fields = dict(
        participant_id=participant_id,
        component_id=component_id,
        global_index=global_index,
        day_index=global_index // 5,
        slot_index=global_index % 5,
        scheduled_local_time="08:00",
        day_of_week="MON",
        weekend=False,
        scheduled_at=at,
        agent="PHONE",
        available=treatment is not None,
        availability_reasons=() if treatment is not None else ("RECENTLY_WALKING",),
        probability=Decimal(probability),
        treatment=treatment,
        randomized_at=at,
        delivered_at=at if treatment == 1 else None,
        content_id="suggestions:walk:home" if treatment == 1 else None,
        context_staleness_seconds=0 if treatment == 1 else None,
        delivery_delay_seconds=0 if treatment == 1 else None,
        timing_skew_seconds=0,
        engagement="THUMBS_UP" if treatment == 1 else None,
        outcome_window_start_at=at,
        outcome_window_end_at=Stamp(at.utc + 1800, -240, "EDT"),
        proximal_outcome=outcome,
        outcome_source=OutcomeSource.TRACKER if outcome is not None else OutcomeSource.NONE,
        redundant_outcome=outcome,
        location_category="HOME",
        weather="SUNNY",
        stress=3,
        typicality=3,
        recent_treatment_count=0,
        travel_excluded=False,
        missingness_codes=(),
    )
    fields.update(changes)
    return AnalysisRow(**fields)


DAY = 86400


def local(day, hour, minute=0):
    """UTC instant of a home (EDT) wall time on a study day."""
    return T0 + day * DAY + (hour - 8) * 3600 + minute * 60


@pytest.fixture(scope="session")
def faulted_scenario():
    from mrtsim.scenario import FaultKind, FaultSpec

    base = ScenarioConfig.heartsteps_default(seed=23, participant_count=4, study_days=7)
    faults = (
        FaultSpec(FaultKind.CONNECTIVITY_LOSS, ("P001",), local(1, 9), local(1, 14)),
        FaultSpec(FaultKind.ACK_LOSS, ("P002",), local(2, 0), local(4, 0), probability=0.5),
        FaultSpec(FaultKind.PAYLOAD_CORRUPTION, ("P002",), local(5, 10), local(5, 12)),
        FaultSpec(FaultKind.PHONE_POWER_OFF, ("P003",), local(2, 10), local(2, 12)),
        FaultSpec(FaultKind.DROPOUT, ("P003",), local(6, 0)),
        FaultSpec(FaultKind.BLUETOOTH_OFF, ("P004",), local(3, 8), local(4, 8)),
    )
    return ScenarioConfig(trial=base.trial, effects=base.effects, faults=faults, seed=23)


@pytest.fixture(scope="session")
def faulted_run(faulted_scenario):
    return run(faulted_scenario)


@pytest.fixture(scope="session")
def faulted_rows(faulted_run):
    return build_variant(faulted_run[0], "zero")
