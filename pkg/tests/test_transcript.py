import gzip
import os

from mrtsim.transcript import MASKED, FieldFilter, TranscriptLogger, read_frames


def test_frames_round_trip(tmp_path):
    t = TranscriptLogger(str(tmp_path), "run")
    t.dump_envelope("phone->server", {"message_id": "m1", "body": {"x": 1}}, 100)
    t.dump_ack({"message_id": "m1", "ok": True}, 101, lost=True)
    t.dump_failed("m2", "captive portal", 102)
    assert t.counter == 3
    name = t.to_file()
    with open(os.path.join(str(tmp_path), name), "rb") as f:
        frames = read_frames(f.read())
    assert [fr["type"] for fr in frames] == ["envelope", "ack", "failed"]
    assert frames[1]["lost"] is True
    assert t.counter == 0


def test_gzip_output_is_reproducible(tmp_path):
    digests = []
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        t = TranscriptLogger(str(tmp_path / sub), "run")
        t.dump_failed("m", "offline", 5)
        with open(os.path.join(str(tmp_path / sub), t.to_gz_file()), "rb") as f:
            data = f.read()
        digests.append(data)
        assert read_frames(gzip.decompress(data))[0]["message_id"] == "m"
    assert digests[0] == digests[1]


def test_masks():
    ff = FieldFilter().mask_coordinates().mask_by_name("Participant_ID", show_first_chars=2)
    out = ff.apply(
        {"participant_id": "P001", "snapshot": {"coordinates": [42.1, -83.7], "weather": "RAIN"}}
    )
    assert out["participant_id"] == "<<masked value=P0...>>"
    assert out["snapshot"]["coordinates"] == "<<masked coordinates>>"
    assert out["snapshot"]["weather"] == "RAIN"
    assert FieldFilter().mask_by_name("token").apply({"token": "abc"}) == {"token": MASKED}


def test_filter_applies_to_written_frames():
    t = TranscriptLogger("/nonexistent").with_field_filter(FieldFilter().mask_coordinates())
    t.dump_envelope("phone->server", {"body": {"snapshot": {"coordinates": [1.0, 2.0]}}}, 0)
    frame = read_frames(bytes(t.bytearr))[0]
    assert frame["envelope"]["body"]["snapshot"]["coordinates"] == "<<masked coordinates>>"
