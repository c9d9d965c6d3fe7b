"""Session lifecycle, encryption, CSV round-trip, and replay tests."""

import math
import threading

import numpy as np
import pytest

from heart2mind import signal_store as ss
from heart2mind.errors import (AuthenticationError, ConfigError, ContractError,
                               NotFoundError, ParseError, StateError)
from heart2mind.signal_store import (CardiacRecord, Profile, SessionStore,
                                     csv_to_records, decrypt_profile,
                                     encrypt_profile, load_key, records_to_csv,
                                     replay)

KEY = bytes(range(32))


@pytest.fixture
def store(tmp_path):
    return SessionStore(tmp_path, key=KEY)


def minute_records(minutes, start=0, rri=812.0):
    # one record per second
    return [CardiacRecord(start + i * 1000, rri_ms=rri, hr_bpm=60000.0 / rri)
            for i in range(int(minutes * 60))]


class TestKeyLoading:
    def test_missing_env_is_config_error(self):
        with pytest.raises(ConfigError):
            load_key(env={})

    def test_bad_hex_rejected(self):
        with pytest.raises(ConfigError):
            load_key(env={ss.KEY_ENV_VAR: "zz" * 32})

    def test_wrong_length_rejected(self):
        with pytest.raises(ConfigError):
            load_key(env={ss.KEY_ENV_VAR: "ab" * 16})

    def test_valid_key_parses(self):
        assert load_key(env={ss.KEY_ENV_VAR: "ab" * 32}) == bytes.fromhex("ab" * 32)


class TestProfileEncryption:
    def test_round_trip(self):
        p = Profile("alex", 34, "female")
        assert decrypt_profile(encrypt_profile(p, KEY), KEY) == p

    def test_wrong_key_raises_authentication_error(self):
        blob = encrypt_profile(Profile("alex", 34, "female"), KEY)
        with pytest.raises(AuthenticationError):
            decrypt_profile(blob, bytes(32))

    def test_tampered_ciphertext_rejected(self):
        blob = bytearray(encrypt_profile(Profile("alex", 34, "female"), KEY))
        blob[-1] ^= 0xFF
        with pytest.raises(AuthenticationError):
            decrypt_profile(bytes(blob), KEY)

    def test_plaintext_never_on_disk(self, tmp_path):
        store = SessionStore(tmp_path, key=KEY)
        sid = store.open_session(Profile("very-secret-name", 41, "other"), "H10-like")
        all_bytes = b"".join(p.read_bytes() for p in tmp_path.rglob("*") if p.is_file())
        assert b"very-secret-name" not in all_bytes
        assert store.profile_for(sid).name == "very-secret-name"

    def test_invalid_profile_fields(self):
        with pytest.raises(ContractError):
            Profile("", 30, "female")
        with pytest.raises(ContractError):
            Profile("a", -1, "female")
        with pytest.raises(ContractError):
            Profile("a", 30, "unknown")


class TestSessionLifecycle:
    def test_open_returns_recording_session(self, store):
        sid = store.open_session(Profile("a", 34, "female"), "H10-like")
        assert store.session_info(sid)["state"] == "RECORDING"

    def test_two_opens_two_ids(self, store):
        p = Profile("a", 34, "female")
        assert store.open_session(p, "H9-like") != store.open_session(p, "H9-like")

    def test_bad_device_kind(self, store):
        with pytest.raises(ContractError):
            store.open_session(Profile("a", 30, "male"), "H11-like")

    def test_ingest_in_range(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H9-like")
        ack = store.ingest_record(sid, CardiacRecord(1000, rri_ms=812.0))
        assert ack.accepted and ack.flags == []

    def test_ingest_non_monotonic_flag(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H9-like")
        store.ingest_record(sid, CardiacRecord(1000, rri_ms=812.0))
        ack = store.ingest_record(sid, CardiacRecord(900, rri_ms=815.0))
        assert ack.accepted and "non-monotonic-timestamp" in ack.flags

    def test_ingest_implausible_rri_flag(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H9-like")
        ack = store.ingest_record(sid, CardiacRecord(2000, rri_ms=6000.0))
        assert ack.accepted and "implausible-rri" in ack.flags
        # record stored, not dropped
        assert len(store.get_session(sid).records) == 1

    def test_ingest_unknown_session(self, store):
        with pytest.raises(NotFoundError):
            store.ingest_record("nope", CardiacRecord(0, rri_ms=800.0))

    def test_ingest_after_close_is_state_error(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H9-like")
        store.ingest_record(sid, CardiacRecord(0, rri_ms=800.0))
        store.close_session(sid)
        with pytest.raises(StateError):
            store.ingest_record(sid, CardiacRecord(1000, rri_ms=800.0))

    def test_close_long_session_no_short_flag(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H10-like")
        for r in minute_records(90)[::30]:  # sparse but spans 90 minutes
            store.ingest_record(sid, r)
        summary = store.close_session(sid)
        assert summary["duration_min"] == pytest.approx(89.5, abs=1.0)
        assert "short-session" not in summary["flags"]

    def test_close_short_session_flagged(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H10-like")
        for r in minute_records(40)[::30]:
            store.ingest_record(sid, r)
        assert "short-session" in store.close_session(sid)["flags"]

    def test_double_close_rejected(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H9-like")
        store.close_session(sid)
        with pytest.raises(StateError):
            store.close_session(sid)

    def test_concurrent_ingest_to_same_session_is_serialized(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "synthetic")
        errors = []

        def worker(offset):
            try:
                for i in range(20):
                    store.ingest_record(sid, CardiacRecord(offset + i, rri_ms=800.0))
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(t * 1000,)) for t in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert len(store.get_session(sid).records) == 80


class TestCsv:
    def test_export_line_count_and_header(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H9-like")
        store.ingest_record(sid, CardiacRecord(0, rri_ms=812.0, hr_bpm=73.9))
        store.ingest_record(sid, CardiacRecord(1000, rri_ms=801.5, hr_bpm=74.9))
        store.close_session(sid)
        data = store.export_csv(sid).decode()
        lines = data.split("\n")
        assert lines[0] == "timestamp_ms,rri_ms,hr_bpm,ecg_uv"
        assert len(lines) == 4 and lines[3] == ""  # header + 2 rows + trailing LF

    def test_null_ecg_is_empty_last_field(self):
        data = records_to_csv([CardiacRecord(5, rri_ms=812.0)]).decode()
        row = data.split("\n")[1]
        assert row == "5,812.0,,"
        assert not row.endswith(" ")

    def test_round_trip_identity(self):
        records = [CardiacRecord(0, 812.0, 73.89123456789, None),
                   CardiacRecord(7, None, None, -12.5),
                   CardiacRecord(1000, 4000.0, None, 0.1)]
        assert csv_to_records(records_to_csv(records)) == records

    def test_export_requires_closed_session(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H9-like")
        with pytest.raises(StateError):
            store.export_csv(sid)

    def test_missing_header_rejected(self):
        with pytest.raises(ParseError):
            csv_to_records("nope\n1,2,3,4\n")

    def test_corrupt_row_names_line(self):
        data = records_to_csv([CardiacRecord(i, rri_ms=800.0) for i in range(20)])
        lines = data.decode().split("\n")
        lines[17] = "oops"
        with pytest.raises(ParseError) as err:
            csv_to_records("\n".join(lines))
        assert err.value.line == 18  # 1-based: header is line 1

    def test_store_round_trip_field_level(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H10-like")
        rng = np.random.default_rng(0)
        original = [CardiacRecord(i * 1000, rri_ms=float(rng.uniform(600, 1100)),
                                  hr_bpm=float(rng.uniform(50, 95)),
                                  ecg_uv=float(rng.normal()) if i % 2 else None)
                    for i in range(50)]
        for r in original:
            store.ingest_record(sid, r)
        store.close_session(sid)
        assert csv_to_records(store.export_csv(sid)) == original


class TestReplay:
    def test_delays_scaled_by_speed(self):
        csv = records_to_csv([CardiacRecord(0, rri_ms=800.0),
                              CardiacRecord(1000, rri_ms=810.0)])
        sleeps = []
        out = list(replay(csv, 2.0, sleep=sleeps.append))
        assert len(out) == 2
        assert sleeps == [0.5]

    def test_infinite_speed_emits_immediately_in_order(self):
        records = [CardiacRecord(i * 500, rri_ms=800.0 + i) for i in range(10)]
        sleeps = []
        out = list(replay(records_to_csv(records), math.inf, sleep=sleeps.append))
        assert out == records
        assert sleeps == []

    def test_corrupt_row_reports_line_number(self):
        csv = records_to_csv([CardiacRecord(i, rri_ms=800.0) for i in range(20)]).decode()
        lines = csv.split("\n")
        lines[17] = "16999,morse-code,,"
        with pytest.raises(ParseError) as err:
            list(replay("\n".join(lines), math.inf))
        assert err.value.line == 18

    def test_order_preserved_at_any_speed(self):
        records = [CardiacRecord(i * 100, rri_ms=800.0) for i in range(25)]
        for speed in (0.5, 3.0, math.inf):
            out = list(replay(records_to_csv(records), speed, sleep=lambda s: None))
            assert [r.timestamp_ms for r in out] == [r.timestamp_ms for r in records]

    def test_nonpositive_speed_rejected(self):
        with pytest.raises(ContractError):
            list(replay("timestamp_ms,rri_ms,hr_bpm,ecg_uv\n", 0.0))


class TestCleanRri:
    def test_implausible_records_dropped_from_model_input(self, store):
        sid = store.open_session(Profile("a", 30, "male"), "H10-like")
        store.ingest_record(sid, CardiacRecord(0, rri_ms=800.0))
        store.ingest_record(sid, CardiacRecord(1000, rri_ms=6000.0))
        store.ingest_record(sid, CardiacRecord(2000, rri_ms=820.0))
        store.ingest_record(sid, CardiacRecord(3000, rri_ms=None, hr_bpm=70.0))
        assert store.clean_rri(sid) == [800.0, 820.0]
