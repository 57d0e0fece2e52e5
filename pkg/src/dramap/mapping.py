"""Addressing functions F = [M; R] and the platform presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import gf2
from .errors import SpecError, WidthMismatch
from .gf2 import BitMatrix, BitVector


class DramLocation(NamedTuple):
    bank_index: int
    row_index: int


@dataclass(frozen=True)
class MappingSpec:
    address_bits: int
    bank_matrix: BitMatrix
    row_matrix: BitMatrix
    label: str = ""
    row_masks_synthetic: bool = False

    def __post_init__(self):
        n = self.address_bits
        if not 1 <= n <= gf2.MAX_WIDTH:
            raise SpecError(f"address_bits must be in 1..{gf2.MAX_WIDTH}, got {n}")
        for name, mat in (("bank", self.bank_matrix), ("row", self.row_matrix)):
            if mat.width != n:
                raise SpecError(f"{name} matrix width {mat.width} != address_bits {n}")
            for r in mat.rows:
                if r == 0:
                    raise SpecError(f"zero {name} mask", mask=r)
        check_rank_conditions(self.bank_matrix.rows, self.row_matrix.rows)

    @property
    def k(self) -> int:
        return len(self.bank_matrix)

    @property
    def k_prime(self) -> int:
        return len(self.row_matrix)

    @property
    def bank_masks(self) -> tuple[int, ...]:
        return self.bank_matrix.rows

    @property
    def row_masks(self) -> tuple[int, ...]:
        return self.row_matrix.rows


def check_rank_conditions(bank_masks, row_masks):
    """Raise SpecError naming the first mask that breaks independence."""
    basis: dict[int, int] = {}
    for kind, masks in (("bank", bank_masks), ("row", row_masks)):
        for m in masks:
            residue = gf2.reduce_against(m, basis)
            if residue == 0:
                where = "span of earlier bank masks" if kind == "bank" else "span of bank and earlier row masks"
                raise SpecError(f"rank violation: {kind} mask {m:#x} lies in the {where}", mask=m)
            basis[residue.bit_length() - 1] = residue


def make_spec(address_bits, bank_masks, row_masks, label="", row_masks_synthetic=False) -> MappingSpec:
    return MappingSpec(
        address_bits,
        BitMatrix(address_bits, tuple(bank_masks)),
        BitMatrix(address_bits, tuple(row_masks)),
        label,
        row_masks_synthetic,
    )


def _index(masks, addr: int) -> int:
    out = 0
    for i, m in enumerate(masks):
        out |= ((m & addr).bit_count() & 1) << i
    return out


def locate(spec: MappingSpec, a: BitVector | int) -> DramLocation:
    if isinstance(a, BitVector):
        if a.width != spec.address_bits:
            raise WidthMismatch(f"address width {a.width} != {spec.address_bits}")
        a = a.bits
    return DramLocation(_index(spec.bank_masks, a), _index(spec.row_masks, a))


def is_conflict(spec: MappingSpec, a: BitVector | int, b: BitVector | int) -> bool:
    if isinstance(a, BitVector) and isinstance(b, BitVector) and a.width != b.width:
        raise WidthMismatch(f"address widths differ: {a.width} != {b.width}")
    la, lb = locate(spec, a), locate(spec, b)
    return la.bank_index == lb.bank_index and la.row_index != lb.row_index


# -- vectorized forms over uint64 address arrays ------------------------------


def parities(masks, values: np.ndarray) -> np.ndarray:
    """(len(masks), len(values)) array of masked parities."""
    values = np.asarray(values, dtype=np.uint64)
    out = np.empty((len(masks), values.size), dtype=np.uint8)
    for i, m in enumerate(masks):
        out[i] = np.bitwise_count(values & np.uint64(m)) & 1
    return out


def same_bank_array(masks, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.bitwise_xor(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
    same = np.ones(d.size, dtype=bool)
    for m in masks:
        same &= (np.bitwise_count(d & np.uint64(m)) & 1) == 0
    return same


def conflict_array(spec: MappingSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.bitwise_xor(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))
    same_bank = same_bank_array(spec.bank_masks, d, np.zeros_like(d))
    row_differs = np.zeros(d.size, dtype=bool)
    for m in spec.row_masks:
        row_differs |= (np.bitwise_count(d & np.uint64(m)) & 1) == 1
    return same_bank & row_differs


# -- document form ---------------------------------------------------------------


def spec_to_dict(spec: MappingSpec) -> dict:
    return {
        "address_bits": spec.address_bits,
        "bank_masks": spec.bank_matrix.hex_rows(),
        "row_masks": spec.row_matrix.hex_rows(),
        "row_masks_synthetic": spec.row_masks_synthetic,
        "label": spec.label,
    }


def serialize_spec(spec: MappingSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def spec_from_dict(doc: dict) -> MappingSpec:
    if not isinstance(doc, dict):
        raise SpecError("mapping spec must be a key/value document")
    missing = {"address_bits", "bank_masks", "row_masks"} - doc.keys()
    if missing:
        raise SpecError(f"missing field(s): {', '.join(sorted(missing))}")
    n = doc["address_bits"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise SpecError(f"address_bits must be an integer, got {n!r}")
    masks = {}
    for key in ("bank_masks", "row_masks"):
        values = doc[key]
        if not isinstance(values, list):
            raise SpecError(f"{key} must be a list of hex strings")
        parsed = []
        for v in values:
            try:
                parsed.append(gf2.parse_hex(v))
            except (ValueError, AttributeError) as exc:
                raise SpecError(f"{key}: bad mask {v!r}") from exc
            if parsed[-1] >> n:
                raise SpecError(f"{key}: mask {v} exceeds address_bits={n}", mask=parsed[-1])
        masks[key] = parsed
    synthetic = doc.get("row_masks_synthetic", False)
    if not isinstance(synthetic, bool):
        raise SpecError("row_masks_synthetic must be a boolean")
    label = doc.get("label", "")
    if not isinstance(label, str):
        raise SpecError("label must be a string")
    return make_spec(n, masks["bank_masks"], masks["row_masks"], label, synthetic)


def parse_spec(text: str) -> MappingSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"malformed mapping spec: {exc}") from exc
    return spec_from_dict(doc)


def load_spec(path) -> MappingSpec:
    with open(path) as fh:
        return parse_spec(fh.read())


# -- presets ---------------------------------------------------------------------


def _bits(*positions: int) -> int:
    v = 0
    for p in positions:
        v |= 1 << p
    return v


@dataclass(frozen=True)
class _Preset:
    platform: str
    memory_bits: int  # log2 of installed DRAM bytes
    bank_masks: tuple[int, ...] = field(default_factory=tuple)


# Bank/channel masks as published for each platform; [x,y] entries are
# single masks with bits x and y set.
_PRESETS = {
    "rpi3b+": _Preset("Raspberry Pi 3B+", 30, (_bits(13), _bits(14), _bits(15))),
    "pixel3a": _Preset("Google Pixel 3a", 32, (0x274E9000, 0x69D3A000, 0x53A74000, 0x80000000)),
    "switch-p4": _Preset(
        "Switch P4", 33,
        (_bits(6, 20), _bits(17, 21), _bits(18, 22), _bits(19, 23), _bits(32, 33)),
    ),
    "precision-5810": _Preset(
        "Dell Precision Tower 5810", 35,
        (0x8000, 0x100000000, 0x200000000, 0x400000000, 0x800040,
         0x1100000, 0x2200000, 0x4400000, 0x55080, 0x88A2100),
    ),
    "precision-7875": _Preset(
        "Dell Precision Tower 7875", 36,
        (0x84201000, 0x40214100, 0x188400200, 0x1421002000, 0x310800400,
         0x1842100800, 0xFF80000, 0xD6F700440),
    ),
    "poweredge-r630": _Preset(
        "Dell PowerEdge R630", 37,
        (0x800040, 0xA00000000, 0xC00000000, 0x3000000000, 0x4408000,
         0x2820000000, 0x5500000, 0x6600000, 0x88A2100, 0x4455080),
    ),
    "dl360-gen10+": _Preset(
        "HPE Proliant DL360 Gen10+", 38,
        (_bits(15), _bits(35), _bits(36), _bits(37), _bits(6, 23), _bits(20, 24),
         _bits(21, 25), _bits(22, 26), 0x4004100, 0x6024800),
    ),
    "dgx-1": _Preset(
        "Nvidia DGX-1", 39,
        (_bits(37), _bits(38), _bits(16), _bits(15), _bits(21, 25), _bits(6, 24),
         _bits(7, 17), _bits(23, 27), _bits(22, 26), _bits(8, 12, 14, 18, 20, 24)),
    ),
    "sr630-v2": _Preset(
        "ThinkSystem SR630 V2", 38,
        (_bits(16), _bits(35), _bits(36), _bits(37), _bits(6, 24), _bits(21, 25),
         _bits(22, 26), _bits(23, 27), _bits(8, 14, 26), _bits(9, 15, 27),
         _bits(11, 14, 17, 25, 26)),
    ),
    "s822lc": _Preset(
        "IBM PowerNV S822LC", 37,
        tuple(_bits(i) for i in range(7, 16)) + (_bits(32, 34), _bits(33, 34)),
    ),
}

MIN_SYNTHETIC_ROWS = 4


def preset_names() -> list[str]:
    return list(_PRESETS)


def load_preset(name: str) -> MappingSpec:
    """Published bank masks plus synthetic single-bit row masks.

    Row masks occupy the bits directly above the highest bank-mask bit, up to
    the installed memory size (at least ``MIN_SYNTHETIC_ROWS`` of them).
    """
    try:
        p = _PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown preset {name!r}; known: {', '.join(_PRESETS)}") from None
    top = max(m.bit_length() for m in p.bank_masks)
    n_rows = max(p.memory_bits - top, MIN_SYNTHETIC_ROWS)
    rows = [1 << (top + j) for j in range(n_rows)]
    return make_spec(top + n_rows, p.bank_masks, rows, p.platform, row_masks_synthetic=True)


def synthetic_spec(address_bits, k, k_prime, scramble_rows=True, scramble_banks=True, label=None) -> MappingSpec:
    """Layout: column bits low, then k bank bits, then k' row bits on top.

    With ``scramble_banks`` bank mask i is bank bit i XOR row bit i. With
    ``scramble_rows`` row mask j is row bit j XOR row bit j + ceil(k'/2)
    wherever that higher bit exists.
    """
    if k + k_prime >= address_bits:
        raise SpecError("need at least one column bit: k + k' < address_bits")
    row_bits = [address_bits - k_prime + j for j in range(k_prime)]
    bank_bits = [address_bits - k_prime - k + i for i in range(k)]
    banks = []
    for i, b in enumerate(bank_bits):
        m = 1 << b
        if scramble_banks:
            m |= 1 << row_bits[i % k_prime]
        banks.append(m)
    shift = -(-k_prime // 2)
    rows = []
    for j, p in enumerate(row_bits):
        m = 1 << p
        if scramble_rows and j + shift < k_prime:
            m |= 1 << row_bits[j + shift]
        rows.append(m)
    if label is None:
        label = f"synthetic n={address_bits} k={k} k'={k_prime}"
    return make_spec(address_bits, banks, rows, label)


def random_spec(address_bits, k, k_prime, rng, max_weight=4, low_bit=6, label="random") -> MappingSpec:
    """Random independent masks of small weight supported on bits >= low_bit."""
    positions = list(range(low_bit, address_bits))
    if k + k_prime > len(positions):
        raise SpecError("not enough address bits for the requested ranks")
    masks = []
    basis: dict[int, int] = {}
    while len(masks) < k + k_prime:
        w = int(rng.integers(1, max_weight + 1))
        chosen = rng.choice(positions, size=min(w, len(positions)), replace=False)
        m = _bits(*(int(c) for c in chosen))
        residue = gf2.reduce_against(m, basis)
        if residue:
            basis[residue.bit_length() - 1] = residue
            masks.append(m)
    return make_spec(address_bits, masks[:k], masks[k:], label)
