"""Bank/channel mask recovery from conflict pairs.

Every conflict pair (A, B) lies in one bank, so each bank mask M satisfies
p((A ⊕ B) ∧ M) = 0. Stacking the differences into D, the masks span the
nullspace of D, minus directions on address bits the data never exercised.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import gf2
from .bounds import BoundParams, bank_sample_bound
from .errors import InsufficientData, QuorumFailure, WidthMismatch
from .gf2 import BitMatrix, BitVector
from .traces import Trace

MAX_INTERSECTION_GROUPS = 256


@dataclass(frozen=True)
class BankRecovery:
    basis: BitMatrix
    undetermined_bits: list[int]
    k: int
    rank_D: int
    pairs_used: int
    vote_detail: Optional[dict] = None  # candidate mask -> subsamples containing it
    explain_fraction: Optional[float] = None
    retained: list[int] = field(default_factory=list)  # vote winners before reduction

    @property
    def width(self) -> int:
        return self.basis.width

    @property
    def masks(self) -> tuple[int, ...]:
        return self.basis.rows

    @property
    def observed_mask(self) -> int:
        dark = 0
        for b in self.undetermined_bits:
            dark |= 1 << b
        return gf2.full_mask(self.width) & ~dark


# -- input plumbing --------------------------------------------------------------


def pair_arrays(pairs, width=None) -> tuple[int, np.ndarray, np.ndarray]:
    """Normalize a Trace or a sequence of (a, b) pairs to (width, A, B)."""
    if isinstance(pairs, Trace):
        if width is not None and width != pairs.width:
            raise WidthMismatch(f"trace width {pairs.width} != {width}")
        return pairs.width, pairs.addr_a, pairs.addr_b
    a_list, b_list = [], []
    for a, b in pairs:
        if isinstance(a, BitVector) or isinstance(b, BitVector):
            if not (isinstance(a, BitVector) and isinstance(b, BitVector)) or a.width != b.width:
                raise WidthMismatch("pair addresses must be BitVectors of one width")
            if width is None:
                width = a.width
            elif a.width != width:
                raise WidthMismatch(f"address width {a.width} != {width}")
            a, b = a.bits, b.bits
        a_list.append(int(a))
        b_list.append(int(b))
    if width is None:
        width = max([1] + [max(x, y).bit_length() for x, y in zip(a_list, b_list)])
    return width, np.array(a_list, dtype=np.uint64), np.array(b_list, dtype=np.uint64)


def difference_rows(pairs, width=None) -> tuple[int, np.ndarray]:
    """Nonzero XOR differences, duplicates kept. Warns about dropped zero rows."""
    width, a, b = pair_arrays(pairs, width)
    if a.size == 0:
        raise InsufficientData("no pairs given")
    d = a ^ b
    zero = int((d == 0).sum())
    if zero:
        warnings.warn(f"dropped {zero} pair(s) with identical addresses (zero difference)", stacklevel=3)
        d = d[d != 0]
    if d.size == 0:
        raise InsufficientData("every pair has identical addresses; nothing to solve")
    return width, d


def _dedup(d: np.ndarray) -> tuple[list[int], list[int]]:
    """Distinct rows in first-seen order with their multiplicities."""
    values, first, counts = np.unique(d, return_index=True, return_counts=True)
    order = np.argsort(first)
    return values[order].tolist(), counts[order].tolist()


def build_difference_matrix(conflict_pairs, width=None) -> BitMatrix:
    width, d = difference_rows(conflict_pairs, width)
    rows, _ = _dedup(d)
    return BitMatrix(width, tuple(rows))


# -- solving ---------------------------------------------------------------------


def undetermined_positions(rows, width: int, observed_mask: Optional[int] = None) -> list[int]:
    """Bit positions the data carries no information about.

    Without ``observed_mask`` these are the all-zero columns of the rows.
    A bit that varies across the whole trace but never inside a conflict
    pair is a single-bit bank mask rather than an unknown, so callers that
    hold the full trace pass the OR of all its differences as
    ``observed_mask``.
    """
    if observed_mask is None:
        observed_mask = 0
        for r in rows:
            observed_mask |= r
    return [i for i in range(width) if not (observed_mask >> i) & 1]


def observed_bits(trace: Trace) -> int:
    """OR of every pair difference in a trace."""
    if len(trace) == 0:
        return 0
    return int(np.bitwise_or.reduce(trace.addr_a ^ trace.addr_b))


def masks_from_rows(rows, width: int, dark_mask: int) -> list[int]:
    """Canonical nullspace basis of ``rows`` without the single-bit vectors on
    ``dark_mask`` positions (which must be zero columns of ``rows``)."""
    return [v for v in gf2.nullspace_rows(rows, width) if not ((v & (v - 1)) == 0 and v & dark_mask)]


def recover_bank_masks(
    D: BitMatrix, pairs_used: Optional[int] = None, observed_mask: Optional[int] = None
) -> BankRecovery:
    if len(D) == 0:
        raise InsufficientData("empty difference matrix")
    width = D.width
    _check_observed(D.rows, observed_mask)
    dark = undetermined_positions(D.rows, width, observed_mask)
    dark_mask = sum(1 << i for i in dark)
    basis = masks_from_rows(D.rows, width, dark_mask)
    rank_d = gf2.rank_rows(D.rows)
    return BankRecovery(
        BitMatrix(width, tuple(basis)),
        dark,
        len(basis),
        rank_d,
        len(D) if pairs_used is None else pairs_used,
    )


def _check_observed(rows, observed_mask):
    if observed_mask is None:
        return
    for r in rows:
        if r & ~observed_mask:
            raise ValueError(f"difference {r:#x} sets bits outside observed_mask {observed_mask:#x}")


def coloops(rows: list[int], counts: Optional[list[int]] = None) -> set[int]:
    """Indices of rows lying outside the span of all the other rows.

    Greedy echelon insertion tracks each basis vector as a combination of
    input rows; every row that reduces to zero closes a circuit, and rows
    that never join a circuit are the coloops. Repeated rows close a circuit
    with themselves.
    """
    basis: dict[int, tuple[int, int]] = {}
    members = 0
    used = 0
    for i, r in enumerate(rows):
        expr = 1 << i
        v = r
        while v:
            lead = v.bit_length() - 1
            hit = basis.get(lead)
            if hit is None:
                break
            v ^= hit[0]
            expr ^= hit[1]
        if v:
            basis[v.bit_length() - 1] = (v, expr)
            members |= 1 << i
            if counts is not None and counts[i] > 1:
                used |= 1 << i
        else:
            used |= expr
            if members & ~used == 0:
                # every basis member already sits in a circuit; later rows
                # cannot create new coloops
                return set()
    return {i for i in range(len(rows)) if (members >> i) & 1 and not (used >> i) & 1}


def _prune(rows: list[int], counts: list[int], limit: float) -> list[int]:
    # many coloops means the subsample is underdetermined rather than
    # contaminated; dropping them would leave it voting for everything
    drop = coloops(rows, counts)
    if len(drop) > max(1, round(limit * sum(counts))):
        return rows
    return [r for i, r in enumerate(rows) if i not in drop]


def quorum_count(quorum: float, q: int) -> int:
    return int(np.ceil(quorum * q - 1e-9))


def majority_vote(spaces, quorum: float, extra_candidates=()) -> tuple[dict, list[int]]:
    """Vote each candidate once per space whose span contains it.

    Candidates are every listed basis vector plus ``extra_candidates``.
    Returns (votes, retained) where retained holds the candidates with at
    least ``quorum`` of the votes, in ascending order.
    """
    spaces = [list(s) for s in spaces]
    need = quorum_count(quorum, len(spaces))
    echelons = [gf2.echelon_rows(s) for s in spaces]
    candidates = {v for s in spaces for v in s} | set(extra_candidates)
    candidates.discard(0)
    votes = {v: sum(gf2.in_span(v, e) for e in echelons) for v in sorted(candidates)}
    return votes, [v for v, c in votes.items() if c >= need]


def subsample_vote(
    conflict_pairs,
    q: int = 5,
    quorum: float = 0.6,
    seed: int = 0,
    width=None,
    theta_hint: float = 0.05,
    observed_mask: Optional[int] = None,
    prune_limit: float = 0.15,
) -> BankRecovery:
    """Subsampling majority vote over disjoint partitions of the pairs.

    Inside each subsample, rows outside the span of the others (coloops) are
    set aside before the nullspace solve: a mislabeled pair almost always adds
    a rank that no other row corroborates. A subsample with more than
    ``prune_limit`` of its rows flagged keeps them all. The candidate pool holds every
    subsample basis vector plus bases of the intersections of each
    quorum-sized group of subsample spaces, so any vector shared by a quorum
    of subsamples is represented even when no subsample basis lists it.
    """
    if q < 3 or q % 2 == 0:
        raise ValueError(f"q must be an odd count >= 3, got {q}")
    if not 0.5 <= quorum <= 1:
        raise ValueError(f"quorum must be in [0.5, 1], got {quorum}")
    width, d = difference_rows(conflict_pairs, width)
    if q > d.size:
        raise InsufficientData(f"q={q} subsamples requested but only {d.size} usable pairs")
    distinct = np.unique(d).tolist()
    _check_observed(distinct, observed_mask)
    dark = undetermined_positions(distinct, width, observed_mask)
    dark_mask = sum(1 << i for i in dark)

    rng = np.random.default_rng(seed)
    parts = np.array_split(rng.permutation(d.size), q)
    pruned = []
    for idx in parts:
        rows, counts = _dedup(d[idx])
        pruned.append(_prune(rows, counts, prune_limit))
    spaces = [masks_from_rows(rows, width, dark_mask) for rows in pruned]
    need = quorum_count(quorum, q)
    extra = set()
    groups = list(itertools.combinations(range(q), need))
    if len(groups) <= MAX_INTERSECTION_GROUPS:
        for g in groups:
            joint = [r for i in g for r in pruned[i]]
            extra.update(masks_from_rows(joint, width, dark_mask))

    votes, retained = majority_vote(spaces, quorum, extra)
    if not retained:
        sizes = sorted(len(s) for s in spaces)
        k_guess = max(1, sizes[len(sizes) // 2])
        hint = ""
        if k_guess < width:
            m = bank_sample_bound(BoundParams(n=width, k=k_guess, theta=theta_hint, epsilon=0.01))
            hint = (
                f"; for k~{k_guess}, n={width}, theta={theta_hint} about m={m} total pairs "
                f"(about {m >> k_guess} conflicts) are needed"
            )
        raise QuorumFailure(
            f"no mask reached the quorum of {need}/{q} subsamples: labels too noisy or too few "
            f"pairs ({d.size} conflict pairs){hint}"
        )
    basis = gf2.rref_rows(retained)
    explained = explain_fraction(basis, (width, d))
    return BankRecovery(
        BitMatrix(width, tuple(basis)),
        dark,
        len(basis),
        gf2.rank_rows(distinct),
        int(d.size),
        votes,
        explained,
        retained,
    )


def explain_fraction(basis, pairs) -> float:
    """Fraction of conflict pairs whose difference is orthogonal to every
    basis row. An empty basis explains everything."""
    rows = basis.rows if isinstance(basis, BitMatrix) else tuple(basis)
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[1], np.ndarray):
        d = pairs[1]
    else:
        _, a, b = pair_arrays(pairs)
        d = a ^ b
    if d.size == 0:
        return 1.0
    ok = np.ones(d.size, dtype=bool)
    for m in rows:
        ok &= (np.bitwise_count(d & np.uint64(m)) & 1) == 0
    return float(ok.mean())


def bank_report(rec: BankRecovery) -> dict:
    doc = {
        "address_bits": rec.width,
        "bank_masks": rec.basis.hex_rows(),
        "k": rec.k,
        "undetermined_bits": rec.undetermined_bits,
        "rank_D": rec.rank_D,
        "pairs_used": rec.pairs_used,
        "explain_fraction": rec.explain_fraction,
        "vote_detail": None,
    }
    if rec.vote_detail is not None:
        doc["vote_detail"] = {gf2.to_hex(v): c for v, c in rec.vote_detail.items()}
    return doc
