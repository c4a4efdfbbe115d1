import json

import pandas as pd
import pytest

from mrtsim.dataset import (
    COLUMNS,
    OFFSET_SUFFIX,
    STAMP_FIELDS,
    dataset_dictionary,
    export,
    read_export,
    read_raw_csv,
    to_csv_bytes,
    to_frame,
    to_jsonl_bytes,
    write_dictionary,
)
from mrtsim.exceptions import ExportFormatError, ValidationError
from mrtsim.pipeline import MissingnessCode

from .conftest import make_row


def test_every_stamp_has_an_offset_column():
    for name in STAMP_FIELDS:
        i = COLUMNS.index(name)
        assert COLUMNS[i + 1] == name + OFFSET_SUFFIX
    assert COLUMNS[:3] == ("participant_id", "component_id", "global_index")


def test_dictionary_documents_every_column(tmp_path):
    d = dataset_dictionary()
    assert [c["name"] for c in d["columns"]] == list(COLUMNS)
    assert set(d["missingness_codes"]) == {c.value for c in MissingnessCode}
    with open(write_dictionary(str(tmp_path)), encoding="utf-8") as f:
        assert json.load(f) == d


def test_cells():
    frame = to_frame([make_row(), make_row(global_index=1, treatment=None, outcome=None)])
    first, second = frame.iloc[0], frame.iloc[1]
    assert first["probability"] == "0.6"
    assert first["availability_reasons"] == "NONE"
    assert first["scheduled_at"] == "2015-08-03T12:00:00Z"
    assert first["scheduled_at_tz_offset_minutes"] == "-240"
    assert first["weekend"] == "false"
    assert second["availability_reasons"] == "RECENTLY_WALKING"
    assert pd.isna(second["treatment"])
    csv = to_csv_bytes([make_row(global_index=1, treatment=None)]).decode("utf-8")
    header, line = csv.splitlines()
    cells = dict(zip(header.split(","), line.split(",")))
    assert cells["treatment"] == "NA"
    assert cells["delivered_at_tz_offset_minutes"] == "NA"


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_export_reads_back_to_the_same_bytes(tmp_path, zero_rows, fmt):
    first = export(zero_rows, fmt, str(tmp_path / ("a." + fmt)))
    rows = read_export(first)
    assert [r.key for r in rows] == [r.key for r in zero_rows]
    second = export(rows, fmt, str(tmp_path / ("b." + fmt)))
    with open(first, "rb") as f1, open(second, "rb") as f2:
        assert f1.read() == f2.read()


def test_jsonl_lines_are_canonical(zero_rows):
    line = to_jsonl_bytes(zero_rows[:1]).decode("utf-8").splitlines()[0]
    d = json.loads(line)
    assert list(d) == sorted(d)
    assert set(d) == set(COLUMNS)


def test_export_sorts_rows(tmp_path):
    path = export([make_row(global_index=2), make_row(global_index=1)], "csv", str(tmp_path / "d.csv"))
    assert list(read_raw_csv(path)["global_index"]) == ["1", "2"]


def test_unknown_format(tmp_path):
    with pytest.raises(ValidationError):
        export([make_row()], "xlsx", str(tmp_path / "d.xlsx"))


def test_missing_column_is_reported(tmp_path):
    frame = to_frame([make_row()]).drop(columns=["weather"])
    path = tmp_path / "d.csv"
    frame.to_csv(path, index=False, na_rep="NA")
    with pytest.raises(ExportFormatError) as info:
        read_export(str(path))
    assert "weather" in str(info.value)


def test_bad_cell_names_row_and_column(tmp_path):
    frame = to_frame([make_row(), make_row(global_index=1)])
    frame.loc[1, "global_index"] = "seven"
    path = tmp_path / "d.csv"
    frame.to_csv(path, index=False, na_rep="NA")
    with pytest.raises(ExportFormatError) as info:
        read_export(str(path))
    assert str(info.value).startswith("row 2: global_index")


def test_local_timestamp_is_rejected(tmp_path):
    frame = to_frame([make_row()])
    frame.loc[0, "randomized_at"] = "2015-08-03T08:00:00"
    path = tmp_path / "d.csv"
    frame.to_csv(path, index=False, na_rep="NA")
    with pytest.raises(ExportFormatError) as info:
        read_export(str(path))
    assert "randomized_at" in str(info.value)
