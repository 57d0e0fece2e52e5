import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dramap import gf2, mapping
from dramap.errors import SpecError, WidthMismatch
from dramap.gf2 import BitVector
from dramap.mapping import DramLocation


def popcount_index(masks, addr):
    """Independent evaluator: one bit per mask, via string popcount."""
    return sum((bin(m & addr).count("1") % 2) << i for i, m in enumerate(masks))


def brute_conflict(spec, a, b):
    same_bank = popcount_index(spec.bank_masks, a) == popcount_index(spec.bank_masks, b)
    return same_bank and popcount_index(spec.row_masks, a) != popcount_index(spec.row_masks, b)


def test_locate_rpi_example():
    spec = mapping.load_preset("rpi3b+")
    loc = mapping.locate(spec, BitVector(spec.address_bits, 0x6000))
    bits = [(loc.bank_index >> i) & 1 for i in range(3)]
    assert bits == [1, 1, 0]


def test_locate_zero():
    spec = mapping.load_preset("pixel3a")
    assert mapping.locate(spec, 0) == DramLocation(0, 0)


def test_locate_width_mismatch():
    spec = mapping.load_preset("rpi3b+")
    with pytest.raises(WidthMismatch):
        mapping.locate(spec, BitVector(8, 1))


def test_locate_matches_popcount_oracle():
    rng = np.random.default_rng(5)
    py = random.Random(5)
    for _ in range(20):
        spec = mapping.random_spec(32, 4, 6, rng)
        for _ in range(50):
            a = py.getrandbits(32)
            loc = mapping.locate(spec, a)
            assert loc.bank_index == popcount_index(spec.bank_masks, a)
            assert loc.row_index == popcount_index(spec.row_masks, a)


def test_is_conflict_trivial_cases():
    spec = mapping.synthetic_spec(16, 2, 4, scramble_rows=False, scramble_banks=False)
    assert not mapping.is_conflict(spec, 0x1234, 0x1234)
    # top bit is a row bit touched by exactly one row mask and no bank mask
    assert mapping.is_conflict(spec, 0x1234, 0x1234 ^ (1 << 15))


def test_is_conflict_matches_brute_force_on_10k_pairs():
    spec = mapping.load_preset("poweredge-r630")
    py = random.Random(9)
    n = spec.address_bits
    a = np.array([py.getrandbits(n) for _ in range(10_000)], dtype=np.uint64)
    # bias half the pairs toward same-bank so both verdicts appear
    b = a ^ np.array([py.getrandbits(n) for _ in range(10_000)], dtype=np.uint64)
    b[::2] = a[::2] ^ np.uint64(spec.row_masks[0])
    vec = mapping.conflict_array(spec, a, b)
    scalar = [mapping.is_conflict(spec, int(x), int(y)) for x, y in zip(a, b)]
    brute = [brute_conflict(spec, int(x), int(y)) for x, y in zip(a, b)]
    assert scalar == brute
    assert vec.tolist() == brute
    assert 0 < sum(brute) < len(brute)


def test_presets_verbatim():
    assert mapping.load_preset("rpi3b+").bank_masks == (0x2000, 0x4000, 0x8000)
    assert mapping.load_preset("pixel3a").bank_masks == (0x274E9000, 0x69D3A000, 0x53A74000, 0x80000000)
    r630 = mapping.load_preset("poweredge-r630")
    assert r630.k == 10
    assert 0x800040 in r630.bank_masks and 0x88A2100 in r630.bank_masks


def test_unknown_preset():
    with pytest.raises(SpecError, match="unknown preset"):
        mapping.load_preset("vax-11")


@pytest.mark.parametrize("name", mapping.preset_names())
def test_preset_round_trip_and_flags(name):
    spec = mapping.load_preset(name)
    assert spec.row_masks_synthetic
    assert spec.k_prime >= mapping.MIN_SYNTHETIC_ROWS
    assert mapping.parse_spec(mapping.serialize_spec(spec)) == spec


def test_rank_violation_names_mask():
    doc = '{"address_bits": 8, "bank_masks": ["0x10", "0x20"], "row_masks": ["0x30"]}'
    with pytest.raises(SpecError, match="0x30") as info:
        mapping.parse_spec(doc)
    assert info.value.mask == 0x30


def test_minimal_spec_accepted():
    spec = mapping.parse_spec('{"address_bits": 8, "bank_masks": ["0x10"], "row_masks": ["0x20"]}')
    assert spec.k == 1 and spec.k_prime == 1 and not spec.row_masks_synthetic


@pytest.mark.parametrize(
    "doc",
    [
        "not json",
        "[]",
        '{"bank_masks": [], "row_masks": []}',
        '{"address_bits": 8, "bank_masks": ["16"], "row_masks": []}',
        '{"address_bits": 8, "bank_masks": ["0x100"], "row_masks": []}',
        '{"address_bits": 8, "bank_masks": ["0x0"], "row_masks": []}',
        '{"address_bits": 8, "bank_masks": [], "row_masks": [], "label": 3}',
    ],
)
def test_malformed_documents(doc):
    with pytest.raises(SpecError):
        mapping.parse_spec(doc)


def test_synthetic_spec_layout():
    spec = mapping.synthetic_spec(30, 5, 12)
    assert spec.k == 5 and spec.k_prime == 12
    assert spec.bank_masks[0] == (1 << 13) | (1 << 18)
    assert spec.row_masks[0] == (1 << 18) | (1 << 24)
    assert spec.row_masks[11] == 1 << 29


specs = st.integers(0, 2**32).map(
    lambda seed: mapping.random_spec(24, 3, 5, np.random.default_rng(seed))
)


@settings(max_examples=60, deadline=None)
@given(specs, st.integers(0, 2**24 - 1), st.integers(0, 2**24 - 1))
def test_locate_is_linear(spec, a, b):
    la, lb, lab = mapping.locate(spec, a), mapping.locate(spec, b), mapping.locate(spec, a ^ b)
    assert lab.bank_index == la.bank_index ^ lb.bank_index
    assert lab.row_index == la.row_index ^ lb.row_index


@settings(max_examples=60, deadline=None)
@given(specs, st.integers(0, 2**24 - 1), st.integers(0, 2**24 - 1))
def test_is_conflict_symmetric_irreflexive(spec, a, b):
    assert mapping.is_conflict(spec, a, b) == mapping.is_conflict(spec, b, a)
    assert not mapping.is_conflict(spec, a, a)


def test_random_spec_respects_low_bit():
    spec = mapping.random_spec(20, 3, 4, np.random.default_rng(1), low_bit=6)
    for m in spec.bank_masks + spec.row_masks:
        assert m & 0x3F == 0
    assert gf2.rank_rows(spec.bank_masks + spec.row_masks) == 7
