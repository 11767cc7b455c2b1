"""Bit-exact codecs for JANUS baseline packets, cargo frames and the
authentication payload fields.

All buffers are MSB-first: bit 1 of a packet is the most significant bit of
its first byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

JANUS_VERSION = 3

MS_PER_DAY = 86_400_000
WINDOW_DAYS = 6
TIMESTAMP_WINDOW_MS = WINDOW_DAYS * MS_PER_DAY  # 518,400,000
TIMESTAMP_BITS = 29
CD_BITS = 3
MMSI_BITS = 30
ROUTING_BITS = 24

BASELINE_BITS = 64
HEADER_BITS = 22
UNICAST_CARGO_BYTES = 10
UNICAST_BITS = 64 + 8 * UNICAST_CARGO_BYTES  # 144

# Julian Day Number of 1970-01-01 (civil day, midnight to midnight).
_UNIX_EPOCH_JDN = 2_440_588

CRC8_POLY = 0x07  # x^8 + x^2 + x + 1


class CodecError(ValueError):
    """A field does not fit its bit allocation."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class IntegrityError(CodecError):
    """Embedded CRC does not match the recomputed one."""


class TimestampRangeError(CodecError):
    """Timestamp code point outside the 6-day window."""


def crc8_bits(value: int, nbits: int) -> int:
    """CRC-8 of the `nbits`-long bit string held in `value`, MSB first.

    Polynomial x^8+x^2+x+1, init 0, no reflection, no final XOR.
    """
    crc = 0
    for i in range(nbits - 1, -1, -1):
        top = (crc >> 7) ^ ((value >> i) & 1)
        crc = (crc << 1) & 0xFF
        if top:
            crc ^= CRC8_POLY
    return crc


def crc8(data: bytes) -> int:
    crc = 0
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 0x80:
                crc = ((crc << 1) & 0xFF) ^ CRC8_POLY
            else:
                crc = (crc << 1) & 0xFF
    return crc


def _check(name: str, value: int, bits: int) -> int:
    if not isinstance(value, int) or value < 0 or value >> bits:
        raise CodecError(f"field {name}={value!r} does not fit in {bits} bits", name)
    return value


# --- timestamps, clock descriptors, identifiers -------------------------------


def encode_timestamp(julian_day: int, ms_of_day: int) -> int:
    if not 0 <= ms_of_day < MS_PER_DAY:
        raise TimestampRangeError(f"ms_of_day {ms_of_day} outside one day", "ms_of_day")
    return (julian_day % WINDOW_DAYS) * MS_PER_DAY + ms_of_day


def decode_timestamp(value: int) -> tuple[int, int]:
    """Return (window_day, ms_of_day) for a 29-bit timestamp."""
    if not 0 <= value < TIMESTAMP_WINDOW_MS:
        raise TimestampRangeError(f"timestamp {value} is not a legal code point", "timestamp")
    return divmod(value, MS_PER_DAY)


def julian_day_number(posix_s: float) -> int:
    return math.floor(posix_s / 86_400) + _UNIX_EPOCH_JDN


def window_index(posix_s: float) -> int:
    """Counter of 6-day timestamp windows; increments at every rollover."""
    return julian_day_number(posix_s) // WINDOW_DAYS


def timestamp_from_posix(posix_s: float) -> int:
    """Quantize an absolute time (seconds since 1970, UTC) to a Timestamp29."""
    ms = math.floor(posix_s * 1000)
    days, ms_of_day = divmod(ms, MS_PER_DAY)
    return encode_timestamp(days + _UNIX_EPOCH_JDN, ms_of_day)


def timestamp_diff_ms(later: int, earlier: int) -> int:
    """Signed difference of two timestamps, unwrapped across one rollover.

    Result lies in [-W/2, W/2) with W the window length.
    """
    half = TIMESTAMP_WINDOW_MS // 2
    return (later - earlier + half) % TIMESTAMP_WINDOW_MS - half


def drift_bound(code: int) -> float:
    """Worst-case clock drift rate for a 3-bit clock descriptor."""
    _check("clock_descriptor", code, CD_BITS)
    return 10.0 ** -(4 + code)


def pack_timestamp_block(timestamp: int, cd: int) -> int:
    """32-bit plaintext: timestamp (29 bits) || clock descriptor (3 bits)."""
    _check("timestamp", timestamp, TIMESTAMP_BITS)
    _check("clock_descriptor", cd, CD_BITS)
    return (timestamp << CD_BITS) | cd


def unpack_timestamp_block(block: int) -> tuple[int, int]:
    return block >> CD_BITS, block & 0b111


def mmsi_to_bits(mmsi: str | int) -> int:
    """Convert a 9-digit MMSI to its 30-bit integer form."""
    if isinstance(mmsi, str):
        if len(mmsi) != 9 or not mmsi.isdigit():
            raise CodecError(f"MMSI {mmsi!r} is not 9 decimal digits", "mmsi")
        return int(mmsi)
    if not isinstance(mmsi, int) or not 0 <= mmsi < 10**9:
        raise CodecError(f"MMSI {mmsi!r} is not a 9-digit identifier", "mmsi")
    return mmsi


def bits_to_mmsi(bits: int) -> str:
    if not 0 <= bits < 10**9:
        raise CodecError(f"{bits} is not a 9-digit MMSI", "mmsi")
    return f"{bits:09d}"


def routing_id_for(mmsi: str | int) -> int:
    """24-bit routing identifier: the low bits of the 30-bit MMSI."""
    return mmsi_to_bits(mmsi) & ((1 << ROUTING_BITS) - 1)


# --- baseline packet -----------------------------------------------------------


def _pack_header(p) -> int:
    h = _check("version", p.version, 4)
    h = (h << 1) | _check("mobility", p.mobility, 1)
    h = (h << 1) | _check("schedule", p.schedule, 1)
    h = (h << 1) | _check("txrx", p.txrx, 1)
    h = (h << 1) | _check("forward", p.forward, 1)
    h = (h << 8) | _check("class_user_id", p.class_user_id, 8)
    h = (h << 6) | _check("application_type", p.application_type, 6)
    return h


def _unpack_header(h: int) -> dict:
    return dict(
        version=h >> 18,
        mobility=(h >> 17) & 1,
        schedule=(h >> 16) & 1,
        txrx=(h >> 15) & 1,
        forward=(h >> 14) & 1,
        class_user_id=(h >> 6) & 0xFF,
        application_type=h & 0x3F,
    )


@dataclass(frozen=True)
class BaselinePacket:
    version: int = JANUS_VERSION
    mobility: int = 0
    schedule: int = 0
    txrx: int = 1
    forward: int = 0
    class_user_id: int = 0
    application_type: int = 0
    adb: int = 0

    @property
    def crc(self) -> int:
        return encode_baseline(self)[-1]

    @property
    def auth(self) -> AuthAdb:
        return AuthAdb.from_adb(self.adb)


@dataclass(frozen=True)
class AuthAdb:
    """ADB layout for authentication packets: 32-bit cipher block, SYN, ACK."""

    encrypted_block: int
    syn: int
    ack: int

    def to_adb(self) -> int:
        _check("encrypted_block", self.encrypted_block, 32)
        return (self.encrypted_block << 2) | (_check("syn", self.syn, 1) << 1) | _check("ack", self.ack, 1)

    @classmethod
    def from_adb(cls, adb: int) -> AuthAdb:
        return cls(adb >> 2, (adb >> 1) & 1, adb & 1)


def encode_baseline(packet: BaselinePacket) -> bytes:
    body = (_pack_header(packet) << 34) | _check("adb", packet.adb, 34)
    word = (body << 8) | crc8_bits(body, 56)
    return word.to_bytes(8, "big")


def decode_baseline(buffer: bytes, *, verify: bool = True) -> BaselinePacket:
    if len(buffer) != 8:
        raise CodecError(f"baseline packet must be 8 bytes, got {len(buffer)}", "length")
    word = int.from_bytes(buffer, "big")
    body = word >> 8
    if verify and crc8_bits(body, 56) != word & 0xFF:
        raise IntegrityError("baseline packet CRC mismatch", "crc")
    return BaselinePacket(**_unpack_header(body >> 34), adb=body & ((1 << 34) - 1))


# --- cargo frames and the unicast secure packet ---------------------------------


@dataclass(frozen=True)
class CargoFrame:
    """Schedule-flagged packet: 64-bit header block followed by cargo bytes.

    ``cargo`` excludes the trailing CRC byte; ``cargo_len`` on the wire is
    ``len(cargo) + 1``.
    """

    routing_id: int
    syn: int
    ack: int
    cargo: bytes = b""
    version: int = JANUS_VERSION
    mobility: int = 0
    schedule: int = 1
    txrx: int = 1
    forward: int = 0
    class_user_id: int = 0
    application_type: int = 0

    def header_block(self) -> int:
        """Bits 1-56 as an integer (without the header CRC)."""
        if len(self.cargo) + 1 > 255:
            raise CodecError(f"cargo of {len(self.cargo)} bytes exceeds 254", "cargo_len")
        h = _pack_header(self)
        h = (h << 8) | (len(self.cargo) + 1)
        h = (h << ROUTING_BITS) | _check("routing_id", self.routing_id, ROUTING_BITS)
        h = (h << 2) | (_check("syn", self.syn, 1) << 1) | _check("ack", self.ack, 1)
        return h


def encode_frame(frame: CargoFrame) -> bytes:
    body = frame.header_block()
    head = ((body << 8) | crc8_bits(body, 56)).to_bytes(8, "big")
    return head + frame.cargo + bytes([crc8(frame.cargo)])


def decode_frame(buffer: bytes) -> CargoFrame:
    if len(buffer) < 9:
        raise CodecError("cargo frame shorter than header plus CRC", "length")
    word = int.from_bytes(buffer[:8], "big")
    body = word >> 8
    if crc8_bits(body, 56) != word & 0xFF:
        raise IntegrityError("cargo frame header CRC mismatch", "header_crc")
    cargo_len = (body >> 26) & 0xFF
    if cargo_len != len(buffer) - 8:
        raise CodecError(f"cargo length {cargo_len} disagrees with {len(buffer) - 8} bytes", "cargo_len")
    cargo, trailer = buffer[8:-1], buffer[-1]
    if crc8(cargo) != trailer:
        raise IntegrityError("cargo frame trailer CRC mismatch", "trailer_crc")
    return CargoFrame(
        routing_id=(body >> 2) & ((1 << ROUTING_BITS) - 1),
        syn=(body >> 1) & 1,
        ack=body & 1,
        cargo=cargo,
        **_unpack_header(body >> 34),
    )


@dataclass(frozen=True)
class UnicastPacket:
    routing_id: int
    encrypted_payload: int
    hmac: int = 0
    syn: int = 0
    ack: int = 1
    version: int = JANUS_VERSION
    mobility: int = 0
    schedule: int = 1
    txrx: int = 1
    forward: int = 0
    class_user_id: int = 0
    application_type: int = 0
    cargo_len: int = field(default=UNICAST_CARGO_BYTES, init=False)

    def to_frame(self) -> CargoFrame:
        cargo = _check("encrypted_payload", self.encrypted_payload, 64).to_bytes(8, "big")
        cargo += bytes([_check("hmac", self.hmac, 8)])
        header = {k: getattr(self, k) for k in _HEADER_FIELDS}
        return CargoFrame(routing_id=self.routing_id, syn=self.syn, ack=self.ack, cargo=cargo, **header)

    def authenticated_bits(self) -> int:
        """Bits 1-128 (header, header CRC, ciphertext): the MAC input."""
        return int.from_bytes(encode_frame(self.to_frame())[:16], "big")


_HEADER_FIELDS = ("version", "mobility", "schedule", "txrx", "forward", "class_user_id", "application_type")


def encode_unicast(packet: UnicastPacket) -> bytes:
    if packet.schedule != 1:
        raise CodecError("unicast packets need the schedule flag set", "schedule")
    return encode_frame(packet.to_frame())


def decode_unicast(buffer: bytes) -> UnicastPacket:
    if len(buffer) != UNICAST_BITS // 8:
        raise CodecError(f"unicast packet must be 18 bytes, got {len(buffer)}", "length")
    frame = decode_frame(buffer)
    header = {k: getattr(frame, k) for k in _HEADER_FIELDS}
    return UnicastPacket(
        routing_id=frame.routing_id,
        encrypted_payload=int.from_bytes(frame.cargo[:8], "big"),
        hmac=frame.cargo[8],
        syn=frame.syn,
        ack=frame.ack,
        **header,
    )
