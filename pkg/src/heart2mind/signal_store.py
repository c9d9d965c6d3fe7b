"""Cardiac session capture, encrypted profiles, CSV export, and replay.

Stand-in for the BLE device layer: sessions ingest timestamped records
(RRI/HR, optionally ECG microvolts), flag anomalies without dropping
anything, and persist to append-only per-session files plus a small
index. Profiles are stored only as AES-GCM ciphertext; the 256-bit key
comes from the HEART2MIND_KEY environment variable (64 hex chars).
"""

from __future__ import annotations

import io
import json
import math
import os
import threading
import time
import uuid
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import (AuthenticationError, ConfigError, ContractError,
                     NotFoundError, ParseError, StateError)

KEY_ENV_VAR = "HEART2MIND_KEY"
CSV_HEADER = "timestamp_ms,rri_ms,hr_bpm,ecg_uv"
RRI_PLAUSIBLE = (200.0, 4000.0)
SHORT_SESSION_MIN = 70.0
DEVICE_KINDS = ("H9-like", "H10-like", "synthetic")
SEXES = ("female", "male", "other", "undisclosed")


@dataclass
class Profile:
    name: str
    age: int
    sex: str

    def __post_init__(self):
        if not self.name:
            raise ContractError("profile name required")
        if self.age < 0:
            raise ContractError("age must be non-negative")
        if self.sex not in SEXES:
            raise ContractError(f"sex must be one of {SEXES}")


@dataclass
class CardiacRecord:
    timestamp_ms: int
    rri_ms: float | None = None
    hr_bpm: float | None = None
    ecg_uv: float | None = None


@dataclass
class Ack:
    accepted: bool
    flags: list[str]


@dataclass
class RriSession:
    session_id: str
    device_kind: str
    records: list[CardiacRecord]
    encrypted_profile: bytes
    label: str | None
    state: str                     # RECORDING | CLOSED


def load_key(env: dict | None = None) -> bytes:
    env = env if env is not None else os.environ
    raw = env.get(KEY_ENV_VAR, "")
    if not raw:
        raise ConfigError(f"{KEY_ENV_VAR} not set; expected 64 hex characters")
    try:
        key = bytes.fromhex(raw)
    except ValueError:
        raise ConfigError(f"{KEY_ENV_VAR} is not valid hex") from None
    if len(key) != 32:
        raise ConfigError(f"{KEY_ENV_VAR} must encode 32 bytes, got {len(key)}")
    return key


def encrypt_profile(profile: Profile, key: bytes) -> bytes:
    nonce = os.urandom(12)
    blob = json.dumps(asdict(profile), sort_keys=True).encode()
    return nonce + AESGCM(key).encrypt(nonce, blob, None)


def decrypt_profile(ciphertext: bytes, key: bytes) -> Profile:
    try:
        blob = AESGCM(key).decrypt(ciphertext[:12], ciphertext[12:], None)
    except InvalidTag:
        raise AuthenticationError("profile ciphertext failed authentication") from None
    return Profile(**json.loads(blob.decode()))


def record_flags(record: CardiacRecord, last_timestamp: int | None) -> list[str]:
    flags = []
    if last_timestamp is not None and record.timestamp_ms < last_timestamp:
        flags.append("non-monotonic-timestamp")
    if record.rri_ms is not None and not RRI_PLAUSIBLE[0] <= record.rri_ms <= RRI_PLAUSIBLE[1]:
        flags.append("implausible-rri")
    return flags


# -- CSV wire format -----------------------------------------------------------------

def _field(value) -> str:
    # repr of a float is the shortest string that round-trips exactly
    return "" if value is None else repr(float(value))


def records_to_csv(records: Iterable[CardiacRecord]) -> bytes:
    lines = [CSV_HEADER]
    for r in records:
        lines.append(",".join([str(r.timestamp_ms), _field(r.rri_ms),
                               _field(r.hr_bpm), _field(r.ecg_uv)]))
    return ("\n".join(lines) + "\n").encode()


def _parse_csv_line(line: str, line_no: int) -> CardiacRecord:
    parts = line.split(",")
    if len(parts) != 4:
        raise ParseError(f"expected 4 fields, got {len(parts)}", line=line_no)
    try:
        ts = int(parts[0])
        optional = [float(p) if p != "" else None for p in parts[1:]]
    except ValueError as exc:
        raise ParseError(str(exc), line=line_no) from None
    return CardiacRecord(ts, *optional)


def csv_to_records(data: bytes | str) -> list[CardiacRecord]:
    text = data.decode() if isinstance(data, bytes) else data
    lines = text.split("\n")
    if not lines or lines[0].strip() != CSV_HEADER:
        raise ParseError(f"missing header '{CSV_HEADER}'", line=1)
    records = []
    for line_no, line in enumerate(lines[1:], start=2):
        if line == "":
            continue
        records.append(_parse_csv_line(line, line_no))
    return records


def replay(csv_source, speed_factor: float, *,
           sleep=time.sleep) -> Iterator[CardiacRecord]:
    """Yield records with inter-record delay Δtimestamp / speed_factor.

    ``speed_factor=math.inf`` emits everything immediately (batch mode).
    Accepts a path, bytes, str, or a file-like object.
    """
    if speed_factor <= 0:
        raise ContractError("speed_factor must be positive")
    if isinstance(csv_source, (str, Path)) and Path(csv_source).exists():
        text = Path(csv_source).read_text()
    elif isinstance(csv_source, bytes):
        text = csv_source.decode()
    elif isinstance(csv_source, io.IOBase):
        text = csv_source.read()
        if isinstance(text, bytes):
            text = text.decode()
    else:
        text = str(csv_source)
    records = csv_to_records(text)
    prev_ts = None
    for record in records:
        if prev_ts is not None and not math.isinf(speed_factor):
            delta_s = max(0, record.timestamp_ms - prev_ts) / 1000.0 / speed_factor
            if delta_s > 0:
                sleep(delta_s)
        prev_ts = record.timestamp_ms
        yield record


# -- persistent store -----------------------------------------------------------------

class SessionStore:
    """Append-only per-session files under a data directory plus an index.

    Ingest calls within one session are serialized; sessions are
    independent; closed sessions may be read concurrently.
    """

    def __init__(self, data_dir, key: bytes | None = None):
        self.data_dir = Path(data_dir)
        (self.data_dir / "sessions").mkdir(parents=True, exist_ok=True)
        self.key = key if key is not None else load_key()
        self._index_lock = threading.Lock()
        self._session_locks: dict[str, threading.Lock] = {}
        self._index_path = self.data_dir / "index.json"
        if not self._index_path.exists():
            self._write_index({})

    # index helpers
    def _read_index(self) -> dict:
        return json.loads(self._index_path.read_text())

    def _write_index(self, index: dict) -> None:
        tmp = self._index_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(index, indent=2, sort_keys=True))
        tmp.replace(self._index_path)

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._index_lock:
            return self._session_locks.setdefault(session_id, threading.Lock())

    def _entry(self, session_id: str) -> dict:
        index = self._read_index()
        if session_id not in index:
            raise NotFoundError(f"unknown session '{session_id}'")
        return index[session_id]

    def _records_path(self, session_id: str) -> Path:
        return self.data_dir / "sessions" / f"{session_id}.ndjson"

    def _profile_path(self, session_id: str) -> Path:
        return self.data_dir / "sessions" / f"{session_id}.profile.bin"

    # operations
    def open_session(self, profile: Profile, device_kind: str,
                     label: str | None = None) -> str:
        if device_kind not in DEVICE_KINDS:
            raise ContractError(f"device_kind must be one of {DEVICE_KINDS}")
        if label is not None and label not in ("control", "treatment"):
            raise ContractError("label must be control or treatment when given")
        encrypted = encrypt_profile(profile, self.key)
        with self._index_lock:
            index = self._read_index()
            for _ in range(3):
                session_id = uuid.uuid4().hex[:12]
                if session_id not in index:
                    break
            else:
                raise StateError("could not allocate a fresh session id")
            index[session_id] = {"device_kind": device_kind, "state": "RECORDING",
                                 "label": label, "n_records": 0,
                                 "first_ts": None, "last_ts": None,
                                 "flag_counts": {}, "created": time.time()}
            self._write_index(index)
        self._profile_path(session_id).write_bytes(encrypted)
        self._records_path(session_id).touch()
        return session_id

    def ingest_record(self, session_id: str, record: CardiacRecord) -> Ack:
        with self._lock_for(session_id):
            entry = self._entry(session_id)
            if entry["state"] != "RECORDING":
                raise StateError(f"session '{session_id}' is not recording")
            flags = record_flags(record, entry["last_ts"])
            with open(self._records_path(session_id), "a") as fh:
                fh.write(json.dumps({**asdict(record), "flags": flags}) + "\n")
            entry["n_records"] += 1
            entry["last_ts"] = record.timestamp_ms if entry["last_ts"] is None \
                else max(entry["last_ts"], record.timestamp_ms)
            if entry["first_ts"] is None:
                entry["first_ts"] = record.timestamp_ms
            for f in flags:
                entry["flag_counts"][f] = entry["flag_counts"].get(f, 0) + 1
            with self._index_lock:
                index = self._read_index()
                index[session_id] = entry
                self._write_index(index)
        return Ack(accepted=True, flags=flags)

    def close_session(self, session_id: str) -> dict:
        with self._lock_for(session_id):
            entry = self._entry(session_id)
            if entry["state"] != "RECORDING":
                raise StateError(f"session '{session_id}' already closed")
            duration_min = 0.0
            if entry["first_ts"] is not None and entry["last_ts"] is not None:
                duration_min = (entry["last_ts"] - entry["first_ts"]) / 60000.0
            flags = dict(entry["flag_counts"])
            summary_flags = sorted(flags)
            if duration_min < SHORT_SESSION_MIN:
                summary_flags.append("short-session")
            entry["state"] = "CLOSED"
            entry["duration_min"] = duration_min
            entry["summary_flags"] = summary_flags
            with self._index_lock:
                index = self._read_index()
                index[session_id] = entry
                self._write_index(index)
            return {"duration_min": duration_min, "n_records": entry["n_records"],
                    "flags": summary_flags}

    def get_session(self, session_id: str) -> RriSession:
        entry = self._entry(session_id)
        records, _ = self._load_records(session_id)
        return RriSession(session_id=session_id, device_kind=entry["device_kind"],
                          records=records,
                          encrypted_profile=self._profile_path(session_id).read_bytes(),
                          label=entry["label"], state=entry["state"])

    def _load_records(self, session_id: str) -> tuple[list[CardiacRecord], list[list[str]]]:
        records, flags = [], []
        path = self._records_path(session_id)
        if not path.exists():
            raise NotFoundError(f"records for session '{session_id}' missing")
        for line in path.read_text().splitlines():
            doc = json.loads(line)
            flags.append(doc.pop("flags", []))
            records.append(CardiacRecord(**doc))
        return records, flags

    def record_flags_for(self, session_id: str) -> list[list[str]]:
        return self._load_records(session_id)[1]

    def profile_for(self, session_id: str) -> Profile:
        self._entry(session_id)
        return decrypt_profile(self._profile_path(session_id).read_bytes(), self.key)

    def export_csv(self, session_id: str) -> bytes:
        entry = self._entry(session_id)
        if entry["state"] != "CLOSED":
            raise StateError("export requires a closed session")
        records, _ = self._load_records(session_id)
        return records_to_csv(records)

    def session_info(self, session_id: str) -> dict:
        entry = self._entry(session_id)
        return {"session_id": session_id, **entry}

    def list_sessions(self) -> list[dict]:
        index = self._read_index()
        return [{"session_id": sid, **entry} for sid, entry in sorted(index.items())]

    def clean_rri(self, session_id: str) -> list[float]:
        """RRI values with implausible records dropped (windowing input)."""
        records, flags = self._load_records(session_id)
        return [r.rri_ms for r, fl in zip(records, flags)
                if r.rri_ms is not None and "implausible-rri" not in fl]
