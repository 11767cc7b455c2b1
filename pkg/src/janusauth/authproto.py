"""Three-step mutual authentication over JANUS baseline packets, session-key
establishment and long-term key renewal by wrapping.

Timestamp conventions (all on the local clock, quantized to 1 ms):

* T_A  - A's clock when the challenge's leading edge leaves A.
* T_B  - B's clock when that leading edge reached B: decode time minus the
  processing delay and the packet's transmission time.
* T_A2 - A's clock at response decode, minus its processing delay, the
  response's transmission time and B's turnaround (one transmission time
  plus one processing delay), so (T_A, T_B, T_A2) follow the two-way
  ranging model with no processing terms.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable

from . import bitcodec as bc
from .cipher import (LONGTERM_KEY_BYTES, RC5_16_255_255, CipherError, cbc_decrypt_many, cbc_encrypt,
                     derive_session_key, pad_method2, rc5_decrypt_block, rc5_encrypt_block, unpad_method2)
from .keystore import (Ephemerals, KeyExpired, KeyNotFound, KeyStore, LongTermKeyRecord,
                       delete_ephemeral, trial_decrypt_all)
from .ranging import RangingEstimate, estimate_distance

log = logging.getLogger(__name__)

MS = 1000.0


class Role(enum.Enum):
    INITIATOR = "A"
    RESPONDER = "B"


class State(enum.Enum):
    IDLE = "idle"
    CHALLENGED = "challenged"
    RESPONDED = "responded"
    ESTABLISHED = "established"
    RENEWING = "renewing"
    FAILED = "failed"


class KeyRole(enum.Enum):
    LONGTERM = "K_n"
    SESSION = "K_AB"
    BY_MMSI = "by-MMSI"


class ProtocolError(Exception):
    pass


class NoSession(ProtocolError):
    pass


class RenewalRejected(ProtocolError):
    pass


class RenewalUnconfirmed(ProtocolError):
    pass


@dataclass
class AuthConfig:
    max_range_m: float = 10_000.0
    sound_speed_mps: float = 1500.0
    processing_delay_s: float = 0.0
    challenge_interval_s: float = 300.0
    rollover_offset_s: float = 30.0
    bit_rate_bps: float = 80.0
    # fixed validity window, overriding the computed one when set
    window_s: float | None = None
    # tolerance on the round-trip bound (quantization plus current bias)
    rtt_slack_s: float = 0.01

    def tx_duration(self, bits: int = bc.BASELINE_BITS) -> float:
        return bits / self.bit_rate_bps

    @property
    def one_way_max_s(self) -> float:
        return self.max_range_m / self.sound_speed_mps

    def window(self, cd_a: int, cd_b: int, seconds_since_epoch: float) -> float:
        """Validity window W in seconds."""
        if self.window_s is not None:
            return self.window_s
        drift = (bc.drift_bound(cd_a) + bc.drift_bound(cd_b)) * max(0.0, seconds_since_epoch)
        return 2 * self.one_way_max_s + 2 * self.processing_delay_s + drift


def challenge_timing_ok(t_a, t_b, window_s: float, config: AuthConfig):
    """Responder test on the one-way delay estimate T_B - T_A.

    Accepts a band of width W centred on half the maximum flight time.
    Works elementwise on numpy arrays.
    """
    half = bc.TIMESTAMP_WINDOW_MS // 2
    e = (t_b - t_a + half) % bc.TIMESTAMP_WINDOW_MS - half
    return abs(e - config.one_way_max_s * MS / 2) <= window_s * MS / 2


def response_timing_ok(t_a: int, t_b: int, t_a2: int, window_s: float, config: AuthConfig) -> bool:
    """Initiator test: bounded round trip and near-symmetric legs."""
    rtt = bc.timestamp_diff_ms(t_a2, t_a)
    out = bc.timestamp_diff_ms(t_b, t_a)
    back = bc.timestamp_diff_ms(t_a2, t_b)
    slack = config.rtt_slack_s * MS
    rtt_max = (2 * config.one_way_max_s + 2 * config.processing_delay_s) * MS
    return -slack <= rtt <= rtt_max + slack and abs(out - back) <= window_s * MS


def next_challenge_time(previous: float, config: AuthConfig) -> float:
    """Schedule the next challenge; the first one after a 6-day window
    rollover is deferred by the rollover offset."""
    t = previous + config.challenge_interval_s
    if bc.window_index(t) != bc.window_index(previous):
        t += config.rollover_offset_s
    return t


def sync_clock_if_coarser(local_cd: int, t_local: float, t_peer: float, cd_peer: int,
                          round_trip: float) -> float | None:
    """Clock step for the device with the coarser clock, or None.

    `t_peer` is the peer's stamp and `t_local` the local stamp of the
    instant half a round trip later.
    """
    if local_cd >= cd_peer:
        return None
    return (t_peer + round_trip / 2) - t_local


@dataclass(frozen=True)
class Diagnostic:
    kind: str
    session_id: int
    reason: str


@dataclass
class AuthResult:
    peer_mmsi: int
    session_key: bytes
    t_a: int
    t_b: int
    t_a2: int
    cd_peer: int
    ranging: RangingEstimate


_ids = itertools.count(1)


@dataclass
class AuthSession:
    role: Role
    own_mmsi: int
    own_cd: int
    config: AuthConfig = field(default_factory=AuthConfig)
    peer_mmsi: int | None = None
    on_event: Callable[[Diagnostic], None] | None = None

    state: State = field(default=State.IDLE, init=False)
    slot: tuple[int, int] | None = field(default=None, init=False)
    ephemerals: Ephemerals = field(default_factory=Ephemerals, init=False)
    t_a2: int | None = field(default=None, init=False)
    diagnostics: list[Diagnostic] = field(default_factory=list, init=False)
    session_id: int = field(default_factory=lambda: next(_ids), init=False)
    _key: bytes | None = field(default=None, init=False, repr=False)
    _pending_key: bytes | None = field(default=None, init=False, repr=False)

    @property
    def session_key(self) -> bytes | None:
        if self.state in (State.ESTABLISHED, State.RENEWING):
            return self._key
        return None

    def _event(self, kind: str, reason: str):
        d = Diagnostic(kind, self.session_id, reason)
        self.diagnostics.append(d)
        log.debug("session %d %s: %s", self.session_id, kind, reason)
        if self.on_event:
            self.on_event(d)

    def _drop(self, reason: str):
        self._event("drop", reason)
        return None

    def _set_state(self, state: State):
        if state is not self.state:
            self._event("state", f"{self.state.value}->{state.value}")
            self.state = state

    def _auth_packet(self, rec: LongTermKeyRecord, block: int, syn: int, ack: int) -> bc.BaselinePacket:
        adb = bc.AuthAdb(rc5_encrypt_block(RC5_16_255_255, rec.key, block), syn, ack).to_adb()
        return bc.BaselinePacket(class_user_id=rec.class_user_id,
                                 application_type=rec.application_type, adb=adb)

    # step 1

    def make_challenge(self, now: float, keystore: KeyStore,
                       slot: tuple[int, int] | None = None) -> bc.BaselinePacket:
        if self.state not in (State.IDLE, State.CHALLENGED, State.FAILED):
            raise ProtocolError(f"cannot challenge from state {self.state.value}")
        if slot is not None:
            rec = keystore.longterm.get(slot)
            if rec is None:
                raise KeyNotFound(f"no long-term key in slot {slot}")
        elif self.peer_mmsi is not None:
            rec = keystore.lookup_by_mmsi(self.peer_mmsi)
        else:
            raise ProtocolError("challenge needs a peer MMSI or a key slot")
        if rec.expired(now):
            raise KeyExpired(f"long-term key {rec.slot} expired")
        t_a = bc.timestamp_from_posix(now)
        # own challenges enter the replay cache so reflected copies are refused
        keystore.remember(rec.slot, t_a, bc.window_index(now))
        self.slot = rec.slot
        self.ephemerals.wipe()
        self.ephemerals.set(t_a=t_a, cd_a=self.own_cd)
        self._set_state(State.CHALLENGED)
        return self._auth_packet(rec, bc.pack_timestamp_block(t_a, self.own_cd), 1, 0)

    # step 2

    def handle_challenge(self, packet: bc.BaselinePacket, now: float,
                         keystore: KeyStore) -> bc.BaselinePacket | None:
        auth = packet.auth
        if (auth.syn, auth.ack) != (1, 0):
            return self._drop("not a challenge")
        cfg = self.config
        t_b = bc.timestamp_from_posix(now - cfg.processing_delay_s - cfg.tx_duration())

        def valid(rec: LongTermKeyRecord, ts: int, cd: int) -> bool:
            if rec.expired(now) or keystore.seen(rec.slot, ts):
                return False
            w = cfg.window(cd, self.own_cd, now - rec.epoch)
            return bool(challenge_timing_ok(ts, t_b, w, cfg))

        slot = (packet.class_user_id, packet.application_type)
        records = [keystore.longterm[slot]] if slot in keystore.longterm else list(keystore.longterm.values())
        matches = trial_decrypt_all(records, auth.encrypted_block, valid)
        if not matches:
            return self._drop("no key yields a fresh in-window timestamp")
        if len(matches) > 1:
            return self._drop(f"{len(matches)} keys match; identity ambiguous")
        m = matches[0]
        rec = m.record
        if rec.peer_mmsi is None:
            return self._drop(f"key {rec.slot} is not bound to a peer identity")

        keystore.remember(rec.slot, m.timestamp, bc.window_index(now))
        # T_B equal to T_A would look like a reflected challenge to A, so step
        # past any cached value; our own T_B is cached against reflection too
        while keystore.seen(rec.slot, t_b):
            t_b = (t_b + 1) % bc.TIMESTAMP_WINDOW_MS
        keystore.remember(rec.slot, t_b, bc.window_index(now))
        self.peer_mmsi = rec.peer_mmsi
        self.slot = rec.slot
        self.ephemerals.set(t_a=m.timestamp, cd_a=m.clock_descriptor, t_b=t_b, cd_b=self.own_cd)
        key = derive_session_key(rec.peer_mmsi, m.timestamp, m.clock_descriptor,
                                 self.own_mmsi, t_b, self.own_cd, rec.key)
        keystore.record_session(rec.peer_mmsi, key, now)
        delete_ephemeral(self.ephemerals)
        self._key = key
        self._set_state(State.RESPONDED)
        return self._auth_packet(rec, bc.pack_timestamp_block(t_b, self.own_cd), 1, 1)

    # step 3

    def handle_response(self, packet: bc.BaselinePacket, now: float,
                        keystore: KeyStore) -> AuthResult | None:
        if self.state is not State.CHALLENGED:
            return self._drop(f"response while {self.state.value}")
        auth = packet.auth
        if (auth.syn, auth.ack) != (1, 1):
            return self._drop("not a response")
        if (packet.class_user_id, packet.application_type) != self.slot:
            return self._drop("response under a different key slot")
        rec = keystore.longterm[self.slot]
        t_b, cd_b = bc.unpack_timestamp_block(rc5_decrypt_block(RC5_16_255_255, rec.key, auth.encrypted_block))
        if t_b >= bc.TIMESTAMP_WINDOW_MS:
            return self._drop("illegal timestamp code point")
        if keystore.seen(rec.slot, t_b):
            return self._drop("replayed response timestamp")

        cfg = self.config
        tx = cfg.tx_duration()
        p = cfg.processing_delay_s
        t_a2 = bc.timestamp_from_posix(now - p - tx - (tx + p))
        t_a, cd_a = self.ephemerals.t_a, self.ephemerals.cd_a
        w = cfg.window(cd_a, cd_b, now - rec.epoch)
        if not response_timing_ok(t_a, t_b, t_a2, w, cfg):
            self._event("auth-failed", "response timing outside the validity window")
            self._set_state(State.FAILED)
            return None

        keystore.remember(rec.slot, t_b, bc.window_index(now))
        peer = rec.peer_mmsi if rec.peer_mmsi is not None else self.peer_mmsi
        if peer is None:
            return self._drop(f"key {rec.slot} is not bound to a peer identity")
        self.peer_mmsi = peer
        key = derive_session_key(self.own_mmsi, t_a, cd_a, peer, t_b, cd_b, rec.key)
        keystore.record_session(peer, key, now)
        self.t_a2 = t_a2
        ranging = estimate_distance(t_a / MS, t_b / MS, t_a2 / MS, cfg.sound_speed_mps)
        result = AuthResult(peer, key, t_a, t_b, t_a2, cd_b, ranging)
        delete_ephemeral(self.ephemerals)
        self._key = key
        self._set_state(State.ESTABLISHED)
        return result

    def confirm(self, keystore: KeyStore):
        """Responder side: first traffic under K_AB observed from the peer."""
        if self.state is State.RESPONDED:
            self._key = keystore.lookup_session(self.peer_mmsi).key
            self._set_state(State.ESTABLISHED)

    # key renewal

    def _session_record(self, keystore: KeyStore):
        if self.peer_mmsi is None or self.peer_mmsi not in keystore.sessions:
            raise NoSession("no session key with this peer")
        return keystore.sessions[self.peer_mmsi]

    def renew_longterm(self, new_key: bytes, keystore: KeyStore) -> list[bytes]:
        """Wrap a new long-term key under K_AB; returns wire frames."""
        if self.state is not State.ESTABLISHED:
            raise NoSession(f"renewal needs an established session, state is {self.state.value}")
        if len(new_key) != LONGTERM_KEY_BYTES:
            raise ProtocolError("renewed long-term keys are 255 bytes")
        sess = self._session_record(keystore)
        frames = wrap_longterm(new_key, self.own_mmsi, sess.key, self.slot, self.peer_mmsi)
        sess.packets_used += len(frames)
        self._pending_key = bytes(new_key)
        self._set_state(State.RENEWING)
        return frames

    def accept_renewal(self, frames: list[bytes], keystore: KeyStore, now: float) -> bc.BaselinePacket:
        """Verify wrapped K_2, store it, and return the confirmation packet."""
        self.confirm(keystore)
        if self.state is not State.ESTABLISHED:
            raise NoSession("renewal needs an established session")
        sess = self._session_record(keystore)
        new_key = unwrap_longterm(frames, sess.key, self.peer_mmsi)
        sess.packets_used += len(frames)
        rec = LongTermKeyRecord(*self.slot, new_key, now, peer_mmsi=self.peer_mmsi)
        keystore.add_longterm(rec, replace=True)
        self._event("renewed", f"stored new long-term key for {self.peer_mmsi:09d}")
        block = self.own_mmsi << 2
        return self._auth_packet(rec, block, 0, 1)

    def complete_renewal(self, packet: bc.BaselinePacket, keystore: KeyStore, now: float):
        if self.state is not State.RENEWING:
            raise ProtocolError("no renewal in progress")
        block = rc5_decrypt_block(RC5_16_255_255, self._pending_key, packet.auth.encrypted_block)
        if block & 0b11 or block >> 2 != self.peer_mmsi:
            self._pending_key = None
            self._set_state(State.ESTABLISHED)
            raise RenewalUnconfirmed("confirmation did not decrypt to the peer MMSI")
        rec = LongTermKeyRecord(*self.slot, self._pending_key, now, peer_mmsi=self.peer_mmsi)
        keystore.add_longterm(rec, replace=True)
        self._pending_key = None
        self._event("renewed", f"stored new long-term key for {self.peer_mmsi:09d}")
        self._set_state(State.ESTABLISHED)


def select_key_for_packet(syn: int, ack: int, session: AuthSession | None,
                          keystore: KeyStore) -> tuple[KeyRole, bytes | None]:
    """Which key a received packet's flags call for."""
    if syn:
        if session is None or session.slot is None:
            return KeyRole.LONGTERM, None
        return KeyRole.LONGTERM, keystore.longterm[session.slot].key
    if ack:
        if session is None or session.peer_mmsi not in keystore.sessions:
            raise NoSession("flags (0,1) need an established session key")
        return KeyRole.SESSION, keystore.sessions[session.peer_mmsi].key
    if session is None or session.peer_mmsi is None:
        return KeyRole.BY_MMSI, None
    return KeyRole.BY_MMSI, keystore.lookup_by_mmsi(session.peer_mmsi).key


# --- renewal cargo ----------------------------------------------------------------

RENEWAL_PLAIN_BITS = 8 * LONGTERM_KEY_BYTES + bc.MMSI_BITS + 8  # 2078
RENEWAL_PADDED_BITS = 2112  # 66 RC5-16 blocks, 264 bytes
RENEWAL_FRAME_BYTES = 132


def wrap_longterm(new_key: bytes, mmsi: int, session_key: bytes,
                  slot: tuple[int, int], dest_mmsi: int) -> list[bytes]:
    body = (int.from_bytes(new_key, "big") << bc.MMSI_BITS) | mmsi
    body_bits = RENEWAL_PLAIN_BITS - 8
    plain = (body << 8) | bc.crc8_bits(body, body_bits)
    padded = pad_method2(plain, RENEWAL_PLAIN_BITS, RENEWAL_PADDED_BITS)
    ct = cbc_encrypt(RC5_16_255_255, session_key, padded, RENEWAL_PADDED_BITS)
    cargo = ct.to_bytes(RENEWAL_PADDED_BITS // 8, "big")
    frames = []
    for off in range(0, len(cargo), RENEWAL_FRAME_BYTES):
        frame = bc.CargoFrame(routing_id=bc.routing_id_for(dest_mmsi), syn=0, ack=1,
                              cargo=cargo[off:off + RENEWAL_FRAME_BYTES],
                              class_user_id=slot[0], application_type=slot[1])
        frames.append(bc.encode_frame(frame))
    return frames


def unwrap_longterm(frames: list[bytes], session_key: bytes, expected_mmsi: int) -> bytes:
    try:
        cargo = b"".join(bc.decode_frame(f).cargo for f in frames)
    except bc.CodecError as exc:
        raise RenewalRejected(f"cargo frame rejected: {exc}") from exc
    if len(cargo) * 8 != RENEWAL_PADDED_BITS:
        raise RenewalRejected(f"renewal cargo is {len(cargo)} bytes")
    # CBC decryption is parallel across blocks, so use the vectorised path
    padded, = cbc_decrypt_many(RC5_16_255_255, session_key, [int.from_bytes(cargo, "big")], RENEWAL_PADDED_BITS)
    return check_renewal_plaintext(padded, expected_mmsi)


def check_renewal_plaintext(padded: int, expected_mmsi: int) -> bytes:
    """Validate decrypted renewal cargo and return K_2.

    Raises RenewalRejected on bad padding, encrypted-CRC mismatch or a
    wrapped MMSI other than `expected_mmsi`.
    """
    try:
        plain, nbits = unpad_method2(padded, RENEWAL_PADDED_BITS)
    except CipherError as exc:
        raise RenewalRejected("bad padding") from exc
    if nbits != RENEWAL_PLAIN_BITS:
        raise RenewalRejected("bad padding")
    body = plain >> 8
    if bc.crc8_bits(body, RENEWAL_PLAIN_BITS - 8) != plain & 0xFF:
        raise RenewalRejected("encrypted CRC mismatch")
    if body & ((1 << bc.MMSI_BITS) - 1) != expected_mmsi:
        raise RenewalRejected("wrapped MMSI does not match the session peer")
    return (body >> bc.MMSI_BITS).to_bytes(LONGTERM_KEY_BYTES, "big")
