import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import majority, tally_mean
from sramprov.core import (NOMINAL, CaptureCondition, DumpFormatError, NoisyBand, ReadSet, StartupDump,
                           UnifiedSignature, bit_aliasing, load_dump, pack_bits, segment, segment_sizes,
                           store_dump, unify_reads, unpack_bits)


def reads_with_counts(counts, n):
    """n read matrices realising the given per-bit ones counts."""
    counts = np.asarray(counts)
    return ReadSet.from_matrices([(counts > r).astype(np.uint8) for r in range(n)])


# --- unify_reads ----------------------------------------------------------


def test_unanimous_bit():
    sig = unify_reads(reads_with_counts([[20]], 20))
    assert sig.bits[0, 0] == 1 and not sig.noisy[0, 0]


def test_tie_goes_to_zero_and_is_noisy():
    sig = unify_reads(reads_with_counts([[10]], 20))
    assert sig.bits[0, 0] == 0
    assert sig.noisy[0, 0]


def test_five_reads_against_tally_oracle():
    rng = np.random.default_rng(5)
    mats = [rng.integers(0, 2, (4, 8)) for _ in range(5)]
    mats[0][1, 2], mats[1][1, 2], mats[2][1, 2], mats[3][1, 2], mats[4][1, 2] = 1, 1, 1, 0, 0
    sig = unify_reads(ReadSet.from_matrices(mats))
    bits, counts = majority([m.tolist() for m in mats])
    assert sig.bits[1, 2] == 1
    assert sig.bits.tolist() == bits
    assert sig.ones_count.tolist() == counts


def test_default_band_for_twenty_reads_is_8_to_12():
    assert NoisyBand.for_reads(20) == NoisyBand(8, 12)
    sig = unify_reads(reads_with_counts([[7, 8, 12, 13]], 20))
    assert sig.noisy.tolist() == [[False, True, True, False]]


def test_unify_errors():
    with pytest.raises(ValueError):
        unify_reads([])
    a = StartupDump(np.zeros((2, 4), np.uint8), "c")
    b = StartupDump(np.zeros((3, 4), np.uint8), "c", read_index=1)
    with pytest.raises(ValueError, match="dimension"):
        unify_reads([a, b])
    with pytest.raises(ValueError):
        unify_reads(reads_with_counts([[1]], 5), NoisyBand(8, 12))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 9), st.randoms(use_true_random=False))
def test_unify_invariant_under_read_permutation(seed, n, rnd):
    rng = np.random.default_rng(seed)
    mats = [rng.integers(0, 2, (5, 6)) for _ in range(n)]
    perm = list(range(n))
    rnd.shuffle(perm)
    a = unify_reads(ReadSet.from_matrices(mats))
    b = unify_reads(ReadSet.from_matrices([mats[i] for i in perm]))
    assert np.array_equal(a.bits, b.bits) and np.array_equal(a.noisy, b.noisy)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30))
def test_noisy_mask_matches_band(seed, n):
    counts = np.random.default_rng(seed).integers(0, n + 1, (6, 7))
    sig = UnifiedSignature.from_counts(counts, n)
    band = sig.band
    inside = (counts >= band.lo) & (counts <= band.hi)
    assert np.array_equal(sig.noisy, inside)


# --- segment ------------------------------------------------------------------


def test_segment_sizes_paper_geometry():
    assert segment_sizes(262144, 16) == [16384] * 16


def test_segment_sizes_remainder_front_loaded():
    sizes = segment_sizes(100, 16)
    assert sizes == [7, 7, 7, 7] + [6] * 12
    assert sum(sizes) == 100


def test_segment_k1_is_identity():
    sig = UnifiedSignature.from_counts(np.random.default_rng(0).integers(0, 21, (9, 4)), 20)
    (seg,) = segment(sig, 1)
    assert np.array_equal(seg.bits, sig.bits) and np.array_equal(seg.noisy, sig.noisy)


def test_segment_errors():
    sig = UnifiedSignature.from_counts(np.zeros((4, 2), int), 20)
    with pytest.raises(ValueError):
        segment(sig, 0)
    with pytest.raises(ValueError):
        segment(sig, 5)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.data())
def test_segment_then_concatenate_is_identity(n_w, data):
    k = data.draw(st.integers(1, n_w))
    counts = np.random.default_rng(n_w * 100 + k).integers(0, 21, (n_w, 3))
    sig = UnifiedSignature.from_counts(counts, 20)
    segs = segment(sig, k)
    assert [s.segment_index for s in segs] == list(range(k))
    assert np.array_equal(np.vstack([s.bits for s in segs]), sig.bits)
    assert np.array_equal(np.vstack([s.noisy for s in segs]), sig.noisy)


# --- bit aliasing -------------------------------------------------------------


def test_aliasing_identical_all_ones():
    ones = np.ones((4, 8), np.uint8)
    assert np.all(bit_aliasing([ones] * 5) == 1.0)


def test_aliasing_signature_and_complement():
    a = np.random.default_rng(1).integers(0, 2, (4, 8))
    assert np.all(bit_aliasing([a, 1 - a]) == 0.5)


def test_aliasing_against_tally_oracle():
    rng = np.random.default_rng(8)
    sigs = [rng.integers(0, 2, (4, 8)) for _ in range(8)]
    assert bit_aliasing(sigs).tolist() == tally_mean([s.tolist() for s in sigs])


def test_aliasing_errors():
    with pytest.raises(ValueError):
        bit_aliasing([])
    with pytest.raises(ValueError):
        bit_aliasing([np.zeros((2, 2)), np.zeros((3, 2))])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_aliasing_properties(seed, n):
    rng = np.random.default_rng(seed)
    sigs = [UnifiedSignature.from_counts(rng.integers(0, 21, (3, 5)), 20) for _ in range(n)]
    ba = bit_aliasing(sigs)
    assert ba.min() >= 0 and ba.max() <= 1
    assert np.allclose(ba * n, np.round(ba * n))
    if n == 1:
        assert np.array_equal(ba, sigs[0].bits.astype(float))


# --- dump files ---------------------------------------------------------------


def test_store_load_round_trip(tmp_path):
    bits = np.random.default_rng(2).integers(0, 2, (4, 8)).astype(np.uint8)
    d = StartupDump(bits, "chipA", CaptureCondition(45, 3.0), 3)
    store_dump(d, tmp_path / "a.srmd", {"manufacturer": "M"})
    back = load_dump(tmp_path / "a.srmd")
    assert np.array_equal(back.words, bits)
    assert back.chip_id == "chipA" and back.read_index == 3 and back.condition == CaptureCondition(45, 3.0)


def test_header_layout(tmp_path):
    d = StartupDump(np.ones((3, 12), np.uint8), "c")
    store_dump(d, tmp_path / "h.srmd")
    raw = (tmp_path / "h.srmd").read_bytes()
    assert raw[:4] == b"SRMD"
    assert struct.unpack("<HHII", raw[4:16]) == (1, 12, 3, 0)
    assert len(raw) == 16 + 3 * 2
    # bit 0 is the LSB of the little-endian word
    assert raw[16:18] == bytes([0xFF, 0x0F])


@pytest.mark.parametrize("w_l", [1, 7, 8, 9, 16, 17, 32])
def test_pack_unpack_round_trip(w_l):
    bits = np.random.default_rng(w_l).integers(0, 2, (5, w_l)).astype(np.uint8)
    assert np.array_equal(unpack_bits(pack_bits(bits), 5, w_l), bits)


def test_truncated_file_rejected(tmp_path):
    d = StartupDump(np.ones((4, 8), np.uint8), "c")
    p = tmp_path / "t.srmd"
    store_dump(d, p)
    data = p.read_bytes()
    p.write_bytes(data[:-1])
    with pytest.raises(DumpFormatError):
        load_dump(p)
    p.write_bytes(data[:10])
    with pytest.raises(DumpFormatError, match="truncated"):
        load_dump(p)


def test_declared_width_mismatch_rejected(tmp_path):
    # header says 16-bit words, payload packs 8 words of 15 bits each (15 bytes, not 16)
    payload = np.packbits(np.ones(8 * 15, np.uint8)).tobytes()
    p = tmp_path / "w.srmd"
    p.write_bytes(struct.pack("<4sHHII", b"SRMD", 1, 16, 8, 0) + payload)
    with pytest.raises(DumpFormatError):
        load_dump(p)


def test_bits_beyond_width_rejected(tmp_path):
    p = tmp_path / "x.srmd"
    p.write_bytes(struct.pack("<4sHHII", b"SRMD", 1, 15, 1, 0) + bytes([0xFF, 0xFF]))
    with pytest.raises(DumpFormatError, match="beyond"):
        load_dump(p)


def test_bad_magic_and_version(tmp_path):
    p = tmp_path / "m.srmd"
    p.write_bytes(struct.pack("<4sHHII", b"XXXX", 1, 8, 1, 0) + b"\0")
    with pytest.raises(DumpFormatError, match="magic"):
        load_dump(p)
    p.write_bytes(struct.pack("<4sHHII", b"SRMD", 9, 8, 1, 0) + b"\0")
    with pytest.raises(DumpFormatError, match="version"):
        load_dump(p)


def test_condition_tags():
    assert NOMINAL.tag == "t25v3.3"
    assert CaptureCondition(25, 3.0).tag == "t25v3.0"
    assert CaptureCondition.from_tag("v3.0") == CaptureCondition(25, 3.0)
    assert CaptureCondition.from_tag("v3.6t45@b") == CaptureCondition(45, 3.6, "b")
    c = CaptureCondition(85, 2.7, "boardB")
    assert CaptureCondition.from_tag(c.tag) == c
    with pytest.raises(ValueError):
        CaptureCondition.from_tag("hot")


def test_signature_arrays_are_read_only():
    sig = unify_reads(reads_with_counts([[3, 20]], 20))
    with pytest.raises(ValueError):
        sig.bits[0, 0] = 1
