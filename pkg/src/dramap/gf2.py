"""Dense GF(2) linear algebra on single-word bitsets.

Vectors are packed into Python ints (bit ``i`` is address bit ``i``) and
wrapped in :class:`BitVector` / :class:`BitMatrix` at the API boundary.
The ``*_rows`` helpers work on plain ``list[int]`` and are what the solvers
call in their inner loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import WidthMismatch

MAX_WIDTH = 64


def _check_width(width: int) -> None:
    if not 1 <= width <= MAX_WIDTH:
        raise ValueError(f"width must be in 1..{MAX_WIDTH}, got {width}")


def full_mask(width: int) -> int:
    return (1 << width) - 1


@dataclass(frozen=True)
class BitVector:
    width: int
    bits: int

    def __post_init__(self):
        _check_width(self.width)
        if self.bits < 0 or self.bits >> self.width:
            raise ValueError(f"bits {self.bits:#x} do not fit in width {self.width}")

    def __int__(self) -> int:
        return self.bits

    def __xor__(self, other: "BitVector") -> "BitVector":
        _same_width(self.width, other.width)
        return BitVector(self.width, self.bits ^ other.bits)

    def __and__(self, other: "BitVector") -> "BitVector":
        _same_width(self.width, other.width)
        return BitVector(self.width, self.bits & other.bits)

    @property
    def weight(self) -> int:
        return self.bits.bit_count()

    def support(self) -> list[int]:
        return bit_positions(self.bits)

    def hex(self) -> str:
        return to_hex(self.bits)


@dataclass(frozen=True)
class BitMatrix:
    """Ordered rows of equal width. Rows are stored as ints."""

    width: int
    rows: tuple[int, ...] = ()

    def __post_init__(self):
        _check_width(self.width)
        rows = tuple(int(r) for r in self.rows)
        limit = 1 << self.width
        for r in rows:
            if r < 0 or r >= limit:
                raise ValueError(f"row {r:#x} does not fit in width {self.width}")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_vectors(cls, width: int, vectors: Iterable[BitVector]) -> "BitMatrix":
        rows = []
        for v in vectors:
            _same_width(width, v.width)
            rows.append(v.bits)
        return cls(width, tuple(rows))

    @classmethod
    def identity(cls, width: int) -> "BitMatrix":
        return cls(width, tuple(1 << i for i in range(width - 1, -1, -1)))

    @classmethod
    def from_strings(cls, strings: Sequence[str]) -> "BitMatrix":
        """Build from MSB-first bit strings such as ``"0011"``."""
        width = len(strings[0])
        return cls(width, tuple(int(s, 2) for s in strings))

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return (BitVector(self.width, r) for r in self.rows)

    def __getitem__(self, i: int) -> BitVector:
        return BitVector(self.width, self.rows[i])

    def stack(self, other: "BitMatrix") -> "BitMatrix":
        _same_width(self.width, other.width)
        return BitMatrix(self.width, self.rows + other.rows)

    def hex_rows(self) -> list[str]:
        return [to_hex(r) for r in self.rows]

    def to_strings(self) -> list[str]:
        return [format(r, f"0{self.width}b") for r in self.rows]


def _same_width(a: int, b: int) -> None:
    if a != b:
        raise WidthMismatch(f"width mismatch: {a} != {b}")


def to_hex(value: int) -> str:
    return f"{value:#x}"


def parse_hex(text: str) -> int:
    text = text.strip()
    if not text.lower().startswith("0x"):
        raise ValueError(f"expected 0x-prefixed hex, got {text!r}")
    return int(text, 16)


def bit_positions(value: int) -> list[int]:
    out = []
    while value:
        low = value & -value
        out.append(low.bit_length() - 1)
        value ^= low
    return out


def parity(v: BitVector | int) -> int:
    return int(v).bit_count() & 1


def masked_parity(a: BitVector, m: BitVector) -> int:
    _same_width(a.width, m.width)
    return (a.bits & m.bits).bit_count() & 1


# -- row-list kernels ---------------------------------------------------------


def echelon_rows(rows: Iterable[int]) -> dict[int, int]:
    """Insert rows one by one into an echelon basis keyed by leading bit.

    The result is not fully reduced; use :func:`rref_rows` for the canonical
    form.
    """
    basis: dict[int, int] = {}
    for r in rows:
        while r:
            lead = r.bit_length() - 1
            b = basis.get(lead)
            if b is None:
                basis[lead] = r
                break
            r ^= b
    return basis


def reduce_against(v: int, basis: dict[int, int]) -> int:
    """Residue of ``v`` after elimination by an echelon ``basis``."""
    while v:
        b = basis.get(v.bit_length() - 1)
        if b is None:
            return v
        v ^= b
    return 0


def in_span(v: int, basis: dict[int, int]) -> bool:
    return reduce_against(v, basis) == 0


def rref_rows(rows: Iterable[int]) -> list[int]:
    """Canonical basis: pivot is the highest set bit, pivot columns cleared
    in every other row, rows ordered by descending pivot."""
    basis = echelon_rows(rows)
    leads = sorted(basis, reverse=True)
    # back-substitution, lowest pivots first so each row is touched once per pivot
    for lead in sorted(leads):
        pivot_row = basis[lead]
        bit = 1 << lead
        for other in leads:
            if other > lead and basis[other] & bit:
                basis[other] ^= pivot_row
    return [basis[lead] for lead in leads]


def rank_rows(rows: Iterable[int]) -> int:
    return len(echelon_rows(rows))


def nullspace_rows(rows: Iterable[int], width: int) -> list[int]:
    reduced = rref_rows(rows)
    pivots = {r.bit_length() - 1: r for r in reduced}
    out = []
    for free in range(width):
        if free in pivots:
            continue
        v = 1 << free
        for lead, r in pivots.items():
            if (r >> free) & 1:
                v |= 1 << lead
        out.append(v)
    return rref_rows(out)


def span_rows(rows: Sequence[int]) -> list[int]:
    """Every vector in the span of ``rows`` (which should be independent),
    zero included. Size is 2**len(rows)."""
    out = [0]
    for r in rows:
        out += [x ^ r for x in out]
    return out


# -- public operations on BitMatrix ------------------------------------------


def rref(mat: BitMatrix) -> tuple[BitMatrix, int, list[int]]:
    reduced = rref_rows(mat.rows)
    pivots = [r.bit_length() - 1 for r in reduced]
    return BitMatrix(mat.width, tuple(reduced)), len(reduced), pivots


def rank(mat: BitMatrix) -> int:
    return rank_rows(mat.rows)


def nullspace_basis(mat: BitMatrix) -> BitMatrix:
    return BitMatrix(mat.width, tuple(nullspace_rows(mat.rows, mat.width)))


def row_space_equal(b1: BitMatrix, b2: BitMatrix) -> bool:
    _same_width(b1.width, b2.width)
    r1 = rank_rows(b1.rows)
    if r1 != rank_rows(b2.rows):
        return False
    return rank_rows(b1.rows + b2.rows) == r1


def contains(mat: BitMatrix, v: BitVector) -> bool:
    """Span membership test."""
    _same_width(mat.width, v.width)
    return in_span(v.bits, echelon_rows(mat.rows))


def apply_map(mat: BitMatrix, a: BitVector) -> BitVector:
    """Index vector whose bit ``i`` is the masked parity of ``a`` with row ``i``."""
    _same_width(mat.width, a.width)
    out = 0
    for i, r in enumerate(mat.rows):
        out |= ((r & a.bits).bit_count() & 1) << i
    return BitVector(max(len(mat.rows), 1), out) if mat.rows else BitVector(1, 0)
