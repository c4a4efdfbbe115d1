import hashlib

import pytest

from mrtsim.audit import CORRUPTIONS, Status, corrupt, read_cells, run_audit, write_cells
from mrtsim.dataset import export
from mrtsim.exceptions import ValidationError


@pytest.fixture(scope="module")
def clean_csv(tmp_path_factory, zero_rows):
    return export(zero_rows, "csv", str(tmp_path_factory.mktemp("clean") / "dataset.csv"))


@pytest.fixture(scope="module")
def clean_frame(clean_csv):
    return read_cells(clean_csv)


def sha(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def test_clean_export_passes(clean_csv, small_log):
    report = run_audit(clean_csv, small_log)
    assert report.passed, report.to_text()
    assert report.status("0") == Status.PASS
    assert report.status("1") == Status.PASS
    assert report.status("6") == Status.PASS
    assert report.status("5-travel") == Status.NOT_APPLICABLE
    assert report.status("7") == Status.NOT_APPLICABLE
    assert report.summary()["violations"] == 0


def test_jsonl_export_passes(tmp_path, zero_rows, small_log):
    path = export(zero_rows, "jsonl", str(tmp_path / "dataset.jsonl"))
    assert run_audit(path, small_log).passed


def test_faulted_run_passes(tmp_path, faulted_run, faulted_rows):
    path = export(faulted_rows, "csv", str(tmp_path / "dataset.csv"))
    report = run_audit(path, faulted_run[0])
    assert report.passed, report.to_text()
    assert report.status("7") == Status.PASS


def test_audit_only_reads(tmp_path, zero_rows, small_log):
    path = export(zero_rows, "csv", str(tmp_path / "dataset.csv"))
    log_path = str(tmp_path / "events.jsonl")
    small_log.write(log_path)
    before = sha(path), sha(log_path)
    run_audit(path, log_path)
    assert (sha(path), sha(log_path)) == before


def test_audit_leaves_frame_untouched(clean_frame, small_log):
    copy = clean_frame.copy()
    run_audit(clean_frame, small_log)
    assert clean_frame.equals(copy)


@pytest.mark.parametrize("primitive", list(CORRUPTIONS))
def test_corruption_is_flagged_exactly(primitive, clean_frame, small_scenario, small_log):
    corrupted, expected = corrupt(
        clean_frame, primitive, seed=7, freshness_bound_s=small_scenario.freshness_bound_s
    )
    assert expected
    report = run_audit(corrupted, small_log)
    assert not report.passed
    assert report.locators() == set(expected), report.to_text()


@pytest.mark.parametrize("primitive", list(CORRUPTIONS))
def test_corruption_survives_csv(primitive, tmp_path, clean_frame, small_scenario, small_log):
    corrupted, expected = corrupt(
        clean_frame, primitive, seed=3, freshness_bound_s=small_scenario.freshness_bound_s
    )
    path = write_cells(corrupted, str(tmp_path / "bad.csv"))
    assert set(expected) <= run_audit(path, small_log).locators()


def test_corrupt_copies(clean_frame):
    copy = clean_frame.copy()
    corrupt(clean_frame, "drop_probability")
    assert clean_frame.equals(copy)
    with pytest.raises(ValidationError):
        corrupt(clean_frame, "shuffle")


def test_missing_column_fails_structure(clean_frame, small_log):
    report = run_audit(clean_frame.drop(columns=["probability"]), small_log)
    assert report.status("0") == Status.FAIL
    assert "column probability" in report.locators()
    assert all(report.status(c.check_id) == Status.NOT_APPLICABLE for c in report.checks[1:])


def test_unreadable_inputs_fail_structure(tmp_path, clean_csv):
    missing = str(tmp_path / "nope.jsonl")
    report = run_audit(clean_csv, missing)
    assert not report.passed
    assert report.check("0").violations[0].locator == "input"


def test_missing_row_is_located(clean_frame, small_log):
    report = run_audit(clean_frame.iloc[1:].reset_index(drop=True), small_log)
    first = clean_frame.iloc[0]
    locator = "decision point {}/{}/{}".format(
        first["participant_id"], first["component_id"], first["global_index"]
    )
    assert locator in {v.locator for v in report.check("3").violations}


def test_report_renders(clean_csv, small_log):
    report = run_audit(clean_csv, small_log)
    d = report.to_dict()
    assert d["passed"] is True
    assert [c["id"] for c in d["checks"]] == ["0", "1", "2", "3", "4", "5", "5-travel", "6", "7"]
    assert "0 failed" in report.to_text()
