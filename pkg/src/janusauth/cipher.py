"""Parametric RC5, CBC with a zero starting variable, bit padding and the
key-derivation / MAC constructions built on them.

Blocks are handled as integers holding the block's bit string MSB-first.
Inside RC5 the block's bytes are loaded into the two words little-endian, as
in the reference definition of the cipher.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_MAGIC = {
    16: (0xB7E1, 0x9E37),
    32: (0xB7E15163, 0x9E3779B9),
    64: (0xB7E151628AED2A6B, 0x9E3779B97F4A7C15),
}

_NP_WORD = {16: np.uint16, 32: np.uint32, 64: np.uint64}


class CipherError(ValueError):
    pass


@dataclass(frozen=True)
class Rc5Variant:
    word_bits: int
    rounds: int
    key_bytes: int

    def __post_init__(self):
        if self.word_bits not in _MAGIC:
            raise CipherError(f"unsupported RC5 word size {self.word_bits}")
        if not 0 <= self.rounds <= 255 or not 0 <= self.key_bytes <= 255:
            raise CipherError("rounds and key_bytes must lie in 0..255")

    @property
    def block_bits(self) -> int:
        return 2 * self.word_bits

    @property
    def name(self) -> str:
        return f"RC5-{self.word_bits}/{self.rounds}/{self.key_bytes}"


RC5_16_255_255 = Rc5Variant(16, 255, 255)  # 32-bit block, fits the ADB
RC5_32_255_255 = Rc5Variant(32, 255, 255)  # 64-bit block, unicast payload
RC5_64_255_255 = Rc5Variant(64, 255, 255)  # 128-bit block, session-key derivation

LONGTERM_KEY_BYTES = 255
SESSION_KEY_BYTES = 32


def _rotl(x: int, n: int, w: int, mask: int) -> int:
    n &= w - 1
    return ((x << n) | (x >> (w - n))) & mask


def _rotr(x: int, n: int, w: int, mask: int) -> int:
    n &= w - 1
    return ((x >> n) | (x << (w - n))) & mask


@lru_cache(maxsize=512)
def key_schedule(variant: Rc5Variant, key: bytes) -> tuple[int, ...]:
    """Expanded key table S[0 .. 2r+1] for `key`."""
    if len(key) > variant.key_bytes:
        raise CipherError(f"{len(key)}-byte key too long for {variant.name}")
    w = variant.word_bits
    u = w // 8
    mask = (1 << w) - 1
    p, q = _MAGIC[w]

    c = max(1, -(-len(key) // u))
    padded = key.ljust(c * u, b"\0")
    L = [int.from_bytes(padded[i * u:(i + 1) * u], "little") for i in range(c)]

    t = 2 * variant.rounds + 2
    S = [(p + i * q) & mask for i in range(t)]

    a = b = i = j = 0
    for _ in range(3 * max(t, c)):
        a = S[i] = _rotl((S[i] + a + b) & mask, 3, w, mask)
        b = L[j] = _rotl((L[j] + a + b) & mask, a + b, w, mask)
        i = (i + 1) % t
        j = (j + 1) % c
    return tuple(S)


def _split(variant: Rc5Variant, block: int) -> tuple[int, int]:
    u = variant.word_bits // 8
    raw = block.to_bytes(2 * u, "big")
    return int.from_bytes(raw[:u], "little"), int.from_bytes(raw[u:], "little")


def _join(variant: Rc5Variant, a: int, b: int) -> int:
    u = variant.word_bits // 8
    return int.from_bytes(a.to_bytes(u, "little") + b.to_bytes(u, "little"), "big")


def _check_block(variant: Rc5Variant, block: int):
    if block < 0 or block >> variant.block_bits:
        raise CipherError(f"block does not fit {variant.block_bits} bits")


def rc5_encrypt_block(variant: Rc5Variant, key: bytes, block: int) -> int:
    _check_block(variant, block)
    S = key_schedule(variant, bytes(key))
    w = variant.word_bits
    mask = (1 << w) - 1
    a, b = _split(variant, block)
    a = (a + S[0]) & mask
    b = (b + S[1]) & mask
    for i in range(1, variant.rounds + 1):
        a = (_rotl(a ^ b, b, w, mask) + S[2 * i]) & mask
        b = (_rotl(b ^ a, a, w, mask) + S[2 * i + 1]) & mask
    return _join(variant, a, b)


def rc5_decrypt_block(variant: Rc5Variant, key: bytes, block: int) -> int:
    _check_block(variant, block)
    S = key_schedule(variant, bytes(key))
    w = variant.word_bits
    mask = (1 << w) - 1
    a, b = _split(variant, block)
    for i in range(variant.rounds, 0, -1):
        b = _rotr((b - S[2 * i + 1]) & mask, a, w, mask) ^ a
        a = _rotr((a - S[2 * i]) & mask, b, w, mask) ^ b
    b = (b - S[1]) & mask
    a = (a - S[0]) & mask
    return _join(variant, a, b)


# --- vectorised paths for bulk work (w <= 32, blocks fit in uint64) -------------


def _np_split(variant: Rc5Variant, blocks) -> tuple[np.ndarray, np.ndarray]:
    w = variant.word_bits
    dt = _NP_WORD[w]
    x = np.asarray(blocks, dtype=np.uint64)
    hi = (x >> np.uint64(w)).astype(dt).byteswap()
    lo = (x & np.uint64((1 << w) - 1)).astype(dt).byteswap()
    return hi, lo


def _np_join(variant: Rc5Variant, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w = variant.word_bits
    return (a.byteswap().astype(np.uint64) << np.uint64(w)) | b.byteswap().astype(np.uint64)


def _np_vector_variant(variant: Rc5Variant):
    if variant.word_bits == 64:
        raise CipherError("vectorised RC5 supports 16- and 32-bit words only")


def rc5_encrypt_many(variant: Rc5Variant, key: bytes, blocks) -> np.ndarray:
    """Encrypt an array of blocks; identical results to rc5_encrypt_block."""
    _np_vector_variant(variant)
    dt = _NP_WORD[variant.word_bits]
    S = np.array(key_schedule(variant, bytes(key)), dtype=dt)
    w = dt(variant.word_bits)
    m = dt(variant.word_bits - 1)
    a, b = _np_split(variant, blocks)
    a = a + S[0]
    b = b + S[1]
    for i in range(1, variant.rounds + 1):
        x = a ^ b
        n = b & m
        a = ((x << n) | (x >> ((w - n) & m))) + S[2 * i]
        x = b ^ a
        n = a & m
        b = ((x << n) | (x >> ((w - n) & m))) + S[2 * i + 1]
    return _np_join(variant, a, b)


def rc5_decrypt_many(variant: Rc5Variant, key: bytes, blocks) -> np.ndarray:
    _np_vector_variant(variant)
    dt = _NP_WORD[variant.word_bits]
    S = np.array(key_schedule(variant, bytes(key)), dtype=dt)
    w = dt(variant.word_bits)
    m = dt(variant.word_bits - 1)
    a, b = _np_split(variant, blocks)
    for i in range(variant.rounds, 0, -1):
        x = b - S[2 * i + 1]
        n = a & m
        b = ((x >> n) | (x << ((w - n) & m))) ^ a
        x = a - S[2 * i]
        n = b & m
        a = ((x >> n) | (x << ((w - n) & m))) ^ b
    return _np_join(variant, a - S[0], b - S[1])


# --- modes and padding ------------------------------------------------------------


def pad_method2(data: int, nbits: int, target_bits: int) -> int:
    """Append a single 1 bit then zeros up to `target_bits`."""
    if target_bits < nbits + 1:
        raise CipherError(f"cannot pad {nbits} bits to {target_bits}")
    if data >> nbits:
        raise CipherError(f"data does not fit in {nbits} bits")
    return ((data << 1) | 1) << (target_bits - nbits - 1)


def unpad_method2(data: int, nbits: int) -> tuple[int, int]:
    """Strip method-2 padding; returns (data, data_bits)."""
    if data == 0:
        raise CipherError("no padding marker present")
    zeros = (data & -data).bit_length() - 1
    return data >> (zeros + 1), nbits - zeros - 1


def _blocks(data: int, nbits: int, block_bits: int) -> list[int]:
    if nbits <= 0 or nbits % block_bits:
        raise CipherError(f"length {nbits} is not a positive multiple of {block_bits}")
    mask = (1 << block_bits) - 1
    n = nbits // block_bits
    return [(data >> (block_bits * (n - 1 - k))) & mask for k in range(n)]


def _unblocks(blocks: list[int], block_bits: int) -> int:
    out = 0
    for blk in blocks:
        out = (out << block_bits) | blk
    return out


def cbc_encrypt(variant: Rc5Variant, key: bytes, data: int, nbits: int) -> int:
    chain = 0
    out = []
    for p in _blocks(data, nbits, variant.block_bits):
        chain = rc5_encrypt_block(variant, key, p ^ chain)
        out.append(chain)
    return _unblocks(out, variant.block_bits)


def cbc_decrypt(variant: Rc5Variant, key: bytes, data: int, nbits: int) -> int:
    chain = 0
    out = []
    for c in _blocks(data, nbits, variant.block_bits):
        out.append(rc5_decrypt_block(variant, key, c) ^ chain)
        chain = c
    return _unblocks(out, variant.block_bits)


def cbc_decrypt_many(variant: Rc5Variant, key: bytes, messages, nbits: int) -> list[int]:
    """Vectorised cbc_decrypt over many equal-length ciphertexts (w <= 32)."""
    _np_vector_variant(variant)
    bb = variant.block_bits
    if nbits <= 0 or nbits % bb:
        raise CipherError(f"length {nbits} is not a positive multiple of {bb}")
    nbytes = nbits // 8
    dt = ">u4" if bb == 32 else ">u8"
    raw = b"".join(int(m).to_bytes(nbytes, "big") for m in messages)
    ct = np.frombuffer(raw, dtype=dt).astype(np.uint64).reshape(len(messages), nbits // bb)
    plain = rc5_decrypt_many(variant, key, ct.ravel()).reshape(ct.shape)
    plain[:, 1:] ^= ct[:, :-1]
    out = plain.astype(dt).tobytes()
    return [int.from_bytes(out[k * nbytes:(k + 1) * nbytes], "big") for k in range(len(messages))]


# --- protocol constructions -------------------------------------------------------

SESSION_INPUT_BITS = 124
SESSION_PADDED_BITS = 512


def session_key_input(mmsi_a: int, t_a: int, cd_a: int, mmsi_b: int, t_b: int, cd_b: int) -> int:
    """MMSI_A || T_A || CD_A || MMSI_B || T_B || CD_B as a 124-bit integer."""
    x = 0
    for value, width in ((mmsi_a, 30), (t_a, 29), (cd_a, 3), (mmsi_b, 30), (t_b, 29), (cd_b, 3)):
        if value < 0 or value >> width:
            raise CipherError(f"session-key input {value} does not fit {width} bits")
        x = (x << width) | value
    return x


def derive_session_key(mmsi_a: int, t_a: int, cd_a: int,
                       mmsi_b: int, t_b: int, cd_b: int, k_longterm: bytes) -> bytes:
    """256-bit session key from both parties' identifiers, timestamps and
    clock descriptors under the long-term key."""
    x = session_key_input(mmsi_a, t_a, cd_a, mmsi_b, t_b, cd_b)
    padded = pad_method2(x, SESSION_INPUT_BITS, SESSION_PADDED_BITS)
    ct = cbc_encrypt(RC5_64_255_255, k_longterm, padded, SESSION_PADDED_BITS)
    return (ct >> (SESSION_PADDED_BITS - 256)).to_bytes(SESSION_KEY_BYTES, "big")


def mac_padded_length(nbits: int) -> int:
    return (nbits // 32 + 1) * 32


def cbc_mac8(key: bytes, message: int, nbits: int) -> int:
    """8-bit CBC-MAC tag: RC5-16/255/255, zero IV, method-2 padding,
    leading byte of the last ciphertext block."""
    target = mac_padded_length(nbits)
    padded = pad_method2(message, nbits, target)
    chain = 0
    for p in _blocks(padded, target, 32):
        chain = rc5_encrypt_block(RC5_16_255_255, key, p ^ chain)
    return chain >> 24


def cbc_mac8_many(key: bytes, messages, nbits: int) -> np.ndarray:
    """Vectorised cbc_mac8 over many equal-length messages (Python ints)."""
    target = mac_padded_length(nbits)
    nblocks = target // 32
    cols = np.empty((nblocks, len(messages)), dtype=np.uint64)
    for idx, msg in enumerate(messages):
        padded = pad_method2(int(msg), nbits, target)
        for k in range(nblocks):
            cols[k, idx] = (padded >> (32 * (nblocks - 1 - k))) & 0xFFFFFFFF
    chain = np.zeros(len(messages), dtype=np.uint64)
    for k in range(nblocks):
        chain = rc5_encrypt_many(RC5_16_255_255, key, cols[k] ^ chain)
    return (chain >> np.uint64(24)).astype(np.uint8)
