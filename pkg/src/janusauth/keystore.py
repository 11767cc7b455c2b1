"""Long-term keys, session keys and the replay cache, with a line-oriented
text persistence format.

Record lines::

    LT <class_id> <app_type> <key_hex> <epoch_iso8601> <lifetime_days> [<peer_mmsi>|-]
    SK <mmsi> <key_hex> <created_iso8601> <packets_used>
    RP <class_id> <app_type> <timestamp> <window_index>

Times are POSIX seconds (UTC) in memory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .bitcodec import bits_to_mmsi, mmsi_to_bits, unpack_timestamp_block, TIMESTAMP_WINDOW_MS
from .cipher import RC5_16_255_255, rc5_decrypt_block, rc5_decrypt_many

DEFAULT_LIFETIME_DAYS = 60
SESSION_RENEWAL_PACKETS = 10_000
MAX_KEYS_PER_CLASS = 64


class KeystoreError(Exception):
    pass


class KeyNotFound(KeystoreError, KeyError):
    pass


class KeyExpired(KeystoreError):
    pass


class DuplicateKey(KeystoreError):
    pass


def iso(t: float) -> str:
    return datetime.fromtimestamp(t, timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def parse_iso(text: str) -> float:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()


@dataclass
class LongTermKeyRecord:
    class_user_id: int
    application_type: int
    key: bytes
    epoch: float
    lifetime_days: int = DEFAULT_LIFETIME_DAYS
    peer_mmsi: int | None = None

    def expired(self, now: float) -> bool:
        return now - self.epoch > self.lifetime_days * 86_400

    @property
    def slot(self) -> tuple[int, int]:
        return self.class_user_id, self.application_type


@dataclass
class SessionKeyRecord:
    peer_mmsi: int
    key: bytes
    created: float
    packets_used: int = 0

    @property
    def renewal_due(self) -> bool:
        return self.packets_used > SESSION_RENEWAL_PACKETS


class Ephemerals:
    """Challenge/response inputs to the session-key derivation.

    After :meth:`wipe` every accessor returns None.
    """

    __slots__ = ("_values",)

    def __init__(self):
        self._values: dict[str, int] = {}

    def set(self, **values: int):
        self._values.update(values)

    def __getattr__(self, name):
        if name in ("t_a", "cd_a", "t_b", "cd_b"):
            return self._values.get(name)
        raise AttributeError(name)

    def wipe(self):
        self._values.clear()

    def __bool__(self):
        return bool(self._values)


def delete_ephemeral(ephemerals: Ephemerals):
    ephemerals.wipe()


@dataclass
class Match:
    record: LongTermKeyRecord
    timestamp: int
    clock_descriptor: int


def trial_decrypt_all(records: Iterable[LongTermKeyRecord], ciphertext: int,
                      validator: Callable[[LongTermKeyRecord, int, int], bool]) -> list[Match]:
    """Decrypt a 32-bit ADB block under every key; keep plaintexts the
    validator accepts."""
    matches = []
    for rec in records:
        ts, cd = unpack_timestamp_block(rc5_decrypt_block(RC5_16_255_255, rec.key, ciphertext))
        if ts < TIMESTAMP_WINDOW_MS and validator(rec, ts, cd):
            matches.append(Match(rec, ts, cd))
    return matches


def trial_match_counts(keys: Iterable[bytes], ciphertexts, accept: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Bulk variant of trial_decrypt_all: per-ciphertext count of keys whose
    decrypted timestamp satisfies `accept` (vectorised over timestamps)."""
    ct = np.asarray(ciphertexts, dtype=np.uint64)
    counts = np.zeros(len(ct), dtype=np.int64)
    for key in keys:
        ts = rc5_decrypt_many(RC5_16_255_255, key, ct) >> np.uint64(3)
        counts += (ts < TIMESTAMP_WINDOW_MS) & accept(ts.astype(np.int64))
    return counts


@dataclass
class KeyStore:
    longterm: dict[tuple[int, int], LongTermKeyRecord] = field(default_factory=dict)
    sessions: dict[int, SessionKeyRecord] = field(default_factory=dict)
    # (class_id, app_type) -> {timestamp: window_index}
    replay: dict[tuple[int, int], dict[int, int]] = field(default_factory=dict)

    # long-term keys

    def add_longterm(self, record: LongTermKeyRecord, *, replace: bool = False):
        if not 0 <= record.class_user_id < 256 or not 0 <= record.application_type < MAX_KEYS_PER_CLASS:
            raise KeystoreError(f"slot {record.slot} out of range")
        if not 1 <= len(record.key) <= 255:
            raise KeystoreError("long-term key must be 1..255 bytes")
        if record.slot in self.longterm and not replace:
            raise DuplicateKey(f"slot {record.slot} already holds a key")
        self.longterm[record.slot] = record
        if replace:
            self.replay.pop(record.slot, None)

    def lookup_longterm(self, class_user_id: int, application_type: int,
                        now: float | None = None) -> tuple[LongTermKeyRecord, bool]:
        """Return (record, expired). Expiry is only reported here; callers
        that authenticate must refuse expired keys."""
        try:
            rec = self.longterm[class_user_id, application_type]
        except KeyError:
            raise KeyNotFound(f"no long-term key for class {class_user_id} type {application_type}") from None
        return rec, (now is not None and rec.expired(now))

    def require_longterm(self, class_user_id: int, application_type: int, now: float) -> LongTermKeyRecord:
        rec, expired = self.lookup_longterm(class_user_id, application_type, now)
        if expired:
            raise KeyExpired(f"long-term key {rec.slot} expired")
        return rec

    def lookup_by_mmsi(self, mmsi: int) -> LongTermKeyRecord:
        for rec in self.longterm.values():
            if rec.peer_mmsi == mmsi:
                return rec
        raise KeyNotFound(f"no long-term key bound to MMSI {mmsi:09d}")

    # replay cache

    def seen(self, slot: tuple[int, int], timestamp: int) -> bool:
        return timestamp in self.replay.get(slot, ())

    def remember(self, slot: tuple[int, int], timestamp: int, window: int):
        self.replay.setdefault(slot, {})[timestamp] = window

    # session keys

    def record_session(self, peer: int, key: bytes, created: float) -> SessionKeyRecord:
        if len(key) != 32:
            raise KeystoreError("session keys are 32 bytes")
        rec = self.sessions[peer] = SessionKeyRecord(peer, bytes(key), created)
        return rec

    def lookup_session(self, peer: int) -> SessionKeyRecord:
        try:
            return self.sessions[peer]
        except KeyError:
            raise KeyNotFound(f"no session with MMSI {peer:09d}") from None

    # persistence

    def dumps(self) -> str:
        lines = []
        for rec in self.longterm.values():
            peer = "-" if rec.peer_mmsi is None else bits_to_mmsi(rec.peer_mmsi)
            lines.append(f"LT {rec.class_user_id} {rec.application_type} {rec.key.hex()} "
                         f"{iso(rec.epoch)} {rec.lifetime_days} {peer}")
        for s in self.sessions.values():
            lines.append(f"SK {bits_to_mmsi(s.peer_mmsi)} {s.key.hex()} {iso(s.created)} {s.packets_used}")
        for (cid, app), entries in self.replay.items():
            for ts, win in sorted(entries.items()):
                lines.append(f"RP {cid} {app} {ts} {win}")
        return "".join(line + "\n" for line in lines)

    @classmethod
    def loads(cls, text: str) -> KeyStore:
        store = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                kind = parts[0]
                if kind == "LT":
                    peer = None if len(parts) < 7 or parts[6] == "-" else mmsi_to_bits(parts[6])
                    store.add_longterm(LongTermKeyRecord(
                        int(parts[1]), int(parts[2]), bytes.fromhex(parts[3]),
                        parse_iso(parts[4]), int(parts[5]), peer))
                elif kind == "SK":
                    rec = store.record_session(mmsi_to_bits(parts[1]), bytes.fromhex(parts[2]), parse_iso(parts[3]))
                    rec.packets_used = int(parts[4])
                elif kind == "RP":
                    store.remember((int(parts[1]), int(parts[2])), int(parts[3]), int(parts[4]))
                else:
                    raise KeystoreError(f"unknown record type {kind!r}")
            except (IndexError, ValueError) as exc:
                raise KeystoreError(f"line {lineno}: {exc}") from exc
        return store

    def save(self, path: str | os.PathLike):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | os.PathLike) -> KeyStore:
        p = Path(path)
        return cls.loads(p.read_text()) if p.exists() else cls()
