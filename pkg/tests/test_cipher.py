import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from janusauth import cipher as cp
from oracles import RefRC5, bytes_to_bits, magic, pad_bits, ref_cbc_encrypt_bits, ref_cbc_mac8, ref_session_key

VARIANTS = [cp.RC5_16_255_255, cp.RC5_32_255_255, cp.RC5_64_255_255]


def _ref_block(variant, key, block):
    nbytes = variant.block_bits // 8
    out = RefRC5(variant.word_bits, variant.rounds, key).encrypt(block.to_bytes(nbytes, "big"))
    return int.from_bytes(out, "big")


class TestRc5:
    @pytest.mark.parametrize("w", [16, 32, 64])
    def test_magic_constants(self, w):
        assert magic(w) == cp._MAGIC[w]

    def test_published_zero_vector(self):
        v = cp.Rc5Variant(32, 12, 16)
        # frozen from the reference oracle
        assert _ref_block(v, bytes(16), 0) == 0x21A5DBEE154B8F6D
        assert cp.rc5_encrypt_block(v, bytes(16), 0) == 0x21A5DBEE154B8F6D

    @pytest.mark.parametrize("variant,expected", [
        (cp.RC5_16_255_255, 0xA793AA76),
        (cp.RC5_32_255_255, 0x091D937199A3F69A),
        (cp.RC5_64_255_255, 0x2D703C2B48844281345E6469FCD09C23),
    ])
    def test_protocol_variant_vectors(self, variant, expected):
        key = bytes(range(255))
        block = int.from_bytes(bytes(range(variant.block_bits // 8)), "big")
        assert cp.rc5_encrypt_block(variant, key, block) == expected

    @pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: v.name)
    def test_matches_reference(self, variant):
        rng = random.Random(variant.word_bits)
        for _ in range(5):
            key = rng.randbytes(rng.randint(1, 255))
            block = rng.getrandbits(variant.block_bits)
            assert cp.rc5_encrypt_block(variant, key, block) == _ref_block(variant, key, block)

    @pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: v.name)
    @settings(max_examples=30, deadline=None)
    @given(data=st.data())
    def test_roundtrip(self, variant, data):
        key = data.draw(st.binary(min_size=1, max_size=255))
        block = data.draw(st.integers(0, 2**variant.block_bits - 1))
        ct = cp.rc5_encrypt_block(variant, key, block)
        assert cp.rc5_decrypt_block(variant, key, ct) == block

    def test_key_too_long(self):
        with pytest.raises(cp.CipherError):
            cp.rc5_encrypt_block(cp.Rc5Variant(16, 12, 16), bytes(17), 0)

    def test_block_too_wide(self):
        with pytest.raises(cp.CipherError):
            cp.rc5_encrypt_block(cp.RC5_16_255_255, b"k", 2**32)

    def test_bad_variant(self):
        with pytest.raises(cp.CipherError):
            cp.Rc5Variant(24, 12, 16)

    def test_one_byte_key_change_distinct(self):
        rng = random.Random(11)
        v = cp.Rc5Variant(16, 255, 255)
        hits = 0
        for _ in range(1000):
            key = bytearray(rng.randbytes(16))
            block = rng.getrandbits(32)
            a = cp.rc5_encrypt_block(v, bytes(key), block)
            key[rng.randrange(16)] ^= rng.randint(1, 255)
            hits += a != cp.rc5_encrypt_block(v, bytes(key), block)
        assert hits >= 999

    @pytest.mark.parametrize("variant", [cp.RC5_16_255_255, cp.RC5_32_255_255], ids=lambda v: v.name)
    def test_vectorised_matches_scalar(self, variant):
        rng = np.random.default_rng(1)
        key = bytes(rng.integers(0, 256, 255, dtype=np.uint8))
        blocks = rng.integers(0, 2**variant.block_bits, 200, dtype=np.uint64)
        enc = cp.rc5_encrypt_many(variant, key, blocks)
        assert [int(x) for x in enc] == [cp.rc5_encrypt_block(variant, key, int(b)) for b in blocks]
        assert np.array_equal(cp.rc5_decrypt_many(variant, key, enc), blocks)


class TestPadding:
    def test_session_input_to_512(self):
        data = (1 << 123) | 5
        padded = cp.pad_method2(data, 124, 512)
        assert padded == (data << 388) | (1 << 387)
        assert format(padded, "0512b") == pad_bits(format(data, "0124b"), 512)

    def test_small_cases(self):
        assert cp.pad_method2(0, 0, 8) == 0b10000000
        assert cp.pad_method2(0b101, 63, 64) == (0b101 << 1) | 1

    def test_target_too_small(self):
        with pytest.raises(cp.CipherError):
            cp.pad_method2(0, 8, 8)

    @given(st.integers(0, 300), st.data())
    def test_unpad_inverse(self, nbits, data):
        value = data.draw(st.integers(0, 2**nbits - 1)) if nbits else 0
        target = data.draw(st.integers(nbits + 1, nbits + 80))
        padded = cp.pad_method2(value, nbits, target)
        assert padded.bit_length() <= target
        assert cp.unpad_method2(padded, target) == (value, nbits)


class TestCbc:
    @pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: v.name)
    def test_single_block_equals_ecb(self, variant):
        key = b"single"
        x = random.Random(2).getrandbits(variant.block_bits)
        assert cp.cbc_encrypt(variant, key, x, variant.block_bits) == cp.rc5_encrypt_block(variant, key, x)

    def test_matches_reference(self):
        rng = random.Random(5)
        key = rng.randbytes(40)
        data = rng.getrandbits(4 * 32)
        ours = cp.cbc_encrypt(cp.RC5_16_255_255, key, data, 128)
        assert format(ours, "0128b") == ref_cbc_encrypt_bits(16, 255, key, format(data, "0128b"))

    @pytest.mark.parametrize("variant", VARIANTS, ids=lambda v: v.name)
    def test_roundtrip_four_blocks(self, variant):
        rng = random.Random(variant.word_bits + 1)
        n = 4 * variant.block_bits
        for _ in range(5):
            key, data = rng.randbytes(32), rng.getrandbits(n)
            assert cp.cbc_decrypt(variant, key, cp.cbc_encrypt(variant, key, data, n), n) == data

    def test_unaligned(self):
        with pytest.raises(cp.CipherError):
            cp.cbc_encrypt(cp.RC5_16_255_255, b"k", 0, 33)

    def test_error_propagation(self):
        v, key, bb = cp.RC5_16_255_255, b"propagate", 32
        rng = random.Random(8)
        n = 4 * bb
        data = rng.getrandbits(n)
        ct = cp.cbc_encrypt(v, key, data, n)
        for j in range(3):
            i = rng.randrange(bb)
            pos = n - (j * bb + bb) + (bb - 1 - i)  # bit i (MSB-first) of block j
            bad = cp.cbc_decrypt(v, key, ct ^ (1 << pos), n)
            diff = bad ^ data
            blocks = [(diff >> (n - (k + 1) * bb)) & (2**bb - 1) for k in range(4)]
            assert blocks[j] != 0
            assert blocks[j + 1] == 1 << (bb - 1 - i)
            assert all(b == 0 for k, b in enumerate(blocks) if k not in (j, j + 1))


class TestSessionKey:
    def test_zero_vector(self):
        expected = bytes.fromhex("9d9f1739239466618b70b71260d3e09a1bf2b7572765b657d18ec6249164b0f9")
        assert ref_session_key(0, 0, 0, 0, 0, 0, bytes(255)) == expected
        assert cp.derive_session_key(0, 0, 0, 0, 0, 0, bytes(255)) == expected

    def test_random_matches_oracle(self):
        rng = random.Random(13)
        args = (rng.randrange(10**9), rng.randrange(518_400_000), rng.randrange(8),
                rng.randrange(10**9), rng.randrange(518_400_000), rng.randrange(8))
        key = rng.randbytes(255)
        assert cp.derive_session_key(*args, key) == ref_session_key(*args, key)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10**9 - 1), st.integers(0, 518_399_999), st.integers(0, 7),
           st.integers(0, 10**9 - 1), st.integers(0, 518_399_999), st.integers(0, 7))
    def test_length_and_determinism(self, ma, ta, ca, mb, tb, cb):
        k1 = cp.derive_session_key(ma, ta, ca, mb, tb, cb, b"K" * 255)
        assert len(k1) == 32
        assert k1 == cp.derive_session_key(ma, ta, ca, mb, tb, cb, b"K" * 255)

    def test_input_layout(self):
        word = cp.session_key_input(1, 2, 3, 4, 5, 6)
        bits = format(word, "0124b")
        assert bits == (format(1, "030b") + format(2, "029b") + format(3, "03b")
                        + format(4, "030b") + format(5, "029b") + format(6, "03b"))

    def test_avalanche(self):
        rng = random.Random(21)
        key = rng.randbytes(255)
        total = 0
        trials = 200
        for _ in range(trials):
            fields = [rng.randrange(10**9), rng.randrange(518_400_000), rng.randrange(8),
                      rng.randrange(10**9), rng.randrange(518_400_000), rng.randrange(8)]
            base = int.from_bytes(cp.derive_session_key(*fields, key), "big")
            word = cp.session_key_input(*fields) ^ (1 << rng.randrange(124))
            split, widths = [], (3, 29, 30, 3, 29, 30)
            for w in widths:
                split.append(word & (2**w - 1))
                word >>= w
            cb, tb, mb, ca, ta, ma = split
            flipped = int.from_bytes(cp.derive_session_key(ma, ta, ca, mb, tb, cb, key), "big")
            total += bin(base ^ flipped).count("1")
        assert total / trials / 256 >= 0.30


class TestMac:
    def test_oracle_vectors(self):
        assert ref_cbc_mac8(bytes(32), "0" * 128) == 0x71
        assert cp.cbc_mac8(bytes(32), 0, 128) == 0x71
        msg = bytes(range(16))
        assert ref_cbc_mac8(bytes(range(32)), bytes_to_bits(msg)) == 0x41
        assert cp.cbc_mac8(bytes(range(32)), int.from_bytes(msg, "big"), 128) == 0x41

    @pytest.mark.parametrize("nbits", [0, 1, 31, 32, 100])
    def test_lengths_match_oracle(self, nbits):
        value = random.Random(nbits).getrandbits(nbits) if nbits else 0
        key = b"length-key"
        expected = ref_cbc_mac8(key, format(value, f"0{nbits}b") if nbits else "")
        assert cp.cbc_mac8(key, value, nbits) == expected

    def test_padded_length(self):
        assert cp.mac_padded_length(128) == 160
        assert cp.mac_padded_length(31) == 32

    def test_many_matches_scalar(self):
        rng = random.Random(4)
        msgs = [rng.getrandbits(128) for _ in range(50)]
        key = rng.randbytes(32)
        many = cp.cbc_mac8_many(key, msgs, 128)
        assert list(many) == [cp.cbc_mac8(key, m, 128) for m in msgs]

    def test_tag_uniformity(self):
        rng = np.random.default_rng(17)
        msgs = [int(x) for x in rng.integers(0, 2**63, 100_000, dtype=np.int64)]
        tags = cp.cbc_mac8_many(b"uniform", msgs, 128)
        counts = np.bincount(tags, minlength=256)
        n, p = len(msgs), 1 / 256
        sigma = np.sqrt(n * p * (1 - p))
        # per-bucket 3 sigma, with a few excursions expected among 256 buckets
        assert np.sum(np.abs(counts - n * p) > 3 * sigma) <= 6
        assert np.all(np.abs(counts - n * p) < 5 * sigma)

    def test_wrong_key_false_accept(self):
        rng = np.random.default_rng(19)
        msgs = [int(x) for x in rng.integers(0, 2**63, 100_000, dtype=np.int64)]
        a = cp.cbc_mac8_many(b"right key", msgs, 128)
        b = cp.cbc_mac8_many(b"wrong key", msgs, 128)
        n, p = len(msgs), 1 / 256
        assert abs(np.sum(a == b) - n * p) <= 3 * np.sqrt(n * p * (1 - p))
