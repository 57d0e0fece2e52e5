"""Row-mask recovery.

Same-row pairs (same bank, low latency) only differ in column bits, so the
row masks together with the bank masks span the nullspace of the row
difference matrix D_row. Which basis of that space to report is a search
problem: each row mask must carry its own pivot bit, stay independent of the
bank masks, and be as light as possible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import gf2
from .bank_solver import BankRecovery, difference_rows, _dedup, pair_arrays
from .errors import InsufficientData, NoRowBasis
from .gf2 import BitMatrix, BitVector


@dataclass(frozen=True)
class SearchConfig:
    combo_max: int = 3
    weight_max: int = 6
    oracle_trials: int = 15
    base_count: int = 9
    node_budget: int = 200_000
    alignment_bits: int = 6  # low bits forced zero in flip-test base addresses
    seed: int = 0

    def __post_init__(self):
        for name in ("combo_max", "weight_max", "oracle_trials", "base_count", "node_budget"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.oracle_trials % 2 == 0:
            raise ValueError("oracle_trials must be odd")
        if self.base_count % 2 == 0:
            raise ValueError("base_count must be odd so flip-test majorities cannot tie")


@dataclass(frozen=True)
class RowRecovery:
    coarse_mask: BitVector
    candidate_set: BitMatrix
    row_basis: BitMatrix
    pivot_positions: list[int]
    k_prime: int
    total_weight: int
    search_exhausted: bool = False  # node budget ran out: weight may not be minimal
    rank_D_row: int = 0
    flip_positive: list[int] = field(default_factory=list)
    flip_negative: list[int] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.row_basis.width


def coarse_row_mask(same_row_pairs, width=None) -> BitVector:
    """Bits equal in both addresses of every pair."""
    width, a, b = pair_arrays(same_row_pairs, width)
    if a.size == 0:
        raise InsufficientData("no same-row pairs given")
    varied = int(np.bitwise_or.reduce(a ^ b))
    return BitVector(width, gf2.full_mask(width) & ~varied)


def build_row_difference_matrix(same_row_pairs, width=None) -> BitMatrix:
    width, d = difference_rows(same_row_pairs, width)
    rows, _ = _dedup(d)
    return BitMatrix(width, tuple(rows))


def _weight_key(v: int) -> tuple[int, int]:
    return (v.bit_count(), v)


def enumerate_candidates(D_row: BitMatrix, M: BitMatrix, cfg: SearchConfig = SearchConfig(), undetermined_bits=()) -> BitMatrix:
    """Light nullspace members of D_row outside span(M), lightest first."""
    if len(D_row) == 0:
        raise InsufficientData("empty row difference matrix")
    if M.width != D_row.width:
        raise ValueError("bank basis and D_row widths differ")
    basis = gf2.nullspace_rows(D_row.rows, D_row.width)
    dark = 0
    for b in undetermined_bits:
        dark |= 1 << b
    m_ech = gf2.echelon_rows(M.rows)
    found = set()
    for size in range(1, min(cfg.combo_max, len(basis)) + 1):
        for combo in itertools.combinations(basis, size):
            v = 0
            for x in combo:
                v ^= x
            if not v or v.bit_count() > cfg.weight_max or not v & ~dark:
                continue
            if gf2.in_span(v, m_ech):
                continue
            found.add(v)
    if not found:
        raise NoRowBasis(
            f"no candidate row masks: rank(D_row)={gf2.rank_rows(D_row.rows)}, "
            f"nullspace dim={len(basis)}, rank(M)={len(m_ech)}, width={D_row.width}; "
            f"raise combo_max ({cfg.combo_max}) or weight_max ({cfg.weight_max})"
        )
    return BitMatrix(D_row.width, tuple(sorted(found, key=_weight_key)))


def _random_bases(width: int, count: int, alignment_bits: int, rng) -> np.ndarray:
    mask = gf2.full_mask(width) & ~gf2.full_mask(alignment_bits) if alignment_bits else gf2.full_mask(width)
    return rng.integers(0, 2**64, size=count, dtype=np.uint64) & np.uint64(mask)


def flip_tests(candidates, oracle, base_count: int = 9, rng=None, alignment_bits: int = 6) -> np.ndarray:
    """For each difference vector, query (A, A ⊕ v) on ``base_count`` random
    base addresses; True where the majority reports a conflict. All queries
    go to the oracle as one batch so a replay oracle lists every missing pair
    at once.

    Callers pass vectors that keep the bank (orthogonal to every bank mask);
    a vector that moves A to another bank never conflicts and would read as
    a column bit.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    cand = [int(c.bits if isinstance(c, BitVector) else c) for c in candidates]
    if not cand:
        return np.zeros(0, dtype=bool)
    bases = _random_bases(oracle.width, base_count * len(cand), alignment_bits, rng)
    flips = np.repeat(np.array(cand, dtype=np.uint64), base_count)
    verdict = oracle.query(bases, bases ^ flips).reshape(len(cand), base_count)
    return verdict.sum(axis=1) * 2 > base_count


def flip_test(candidate, oracle, base_count: int = 9, cfg: Optional[SearchConfig] = None, rng=None) -> bool:
    align = cfg.alignment_bits if cfg is not None else 6
    if rng is None:
        rng = np.random.default_rng(cfg.seed if cfg is not None else 0)
    return bool(flip_tests([candidate], oracle, base_count, rng, align)[0])


# -- basis search ----------------------------------------------------------------


@dataclass
class _Search:
    pools: list[list[int]]
    suffix_min: list[int]
    budget: int
    nodes: int = 0
    best_weight: float = float("inf")
    best: Optional[list[int]] = None
    deepest: int = 0
    exhausted: bool = False


def _descend(s: _Search, j: int, chosen: list[int], ech: dict[int, int], weight: int, rank_m: int, k_prime: int):
    s.nodes += 1
    if s.nodes > s.budget:
        s.exhausted = True
        return
    s.deepest = max(s.deepest, j)
    if j == k_prime:
        if weight < s.best_weight:
            s.best_weight = weight
            s.best = list(chosen)
        return
    # rank lag: the remaining levels add at most one rank each
    if len(ech) + (k_prime - j) < rank_m + k_prime:
        return
    for c in s.pools[j]:
        w = c.bit_count()
        if weight + w + s.suffix_min[j + 1] >= s.best_weight:
            break  # pools are weight-sorted, nothing lighter follows
        residue = gf2.reduce_against(c, ech)
        if residue == 0:
            continue  # adds no rank to [M; B]
        nxt = dict(ech)
        nxt[residue.bit_length() - 1] = residue
        chosen.append(c)
        _descend(s, j + 1, chosen, nxt, weight + w, rank_m, k_prime)
        chosen.pop()
        if s.exhausted:
            return


def rank_aware_search(M: BitMatrix, candidates, k_prime: int, pivots, cfg: SearchConfig = SearchConfig()):
    """Returns (rows, optimal, nodes). ``optimal`` is False when the node
    budget ran out before the search space was covered."""
    if len(pivots) != k_prime:
        raise ValueError(f"need {k_prime} pivots, got {len(pivots)}")
    if k_prime < 1:
        raise ValueError("k_prime must be positive")
    m_ech = gf2.echelon_rows(M.rows)
    if len(m_ech) != len(M):
        raise ValueError("bank masks are not independent")
    cand = [int(c.bits if isinstance(c, BitVector) else c) for c in candidates]
    cand = sorted(set(cand), key=_weight_key)
    pools = []
    for p in pivots:
        pool = [c for c in cand if (c >> p) & 1]
        if not pool:
            raise NoRowBasis(f"no candidate carries pivot bit {p}")
        pools.append(pool)
    suffix = [0] * (k_prime + 1)
    for j in range(k_prime - 1, -1, -1):
        suffix[j] = suffix[j + 1] + pools[j][0].bit_count()
    s = _Search(pools, suffix, cfg.node_budget)
    _descend(s, 0, [], m_ech, 0, len(m_ech), k_prime)
    if s.best is None:
        if s.exhausted:
            raise NoRowBasis(f"node budget {cfg.node_budget} exhausted before any basis was found")
        raise NoRowBasis(
            f"no basis exists over the candidate set: pivot position {pivots[min(s.deepest, k_prime - 1)]} "
            f"(level {s.deepest}) has no candidate independent of the bank masks and earlier choices"
        )
    return s.best, not s.exhausted, s.nodes


def rank_aware_backtrack(M: BitMatrix, candidates, k_prime: int, pivots, cfg: SearchConfig = SearchConfig()) -> BitMatrix:
    rows, _, _ = rank_aware_search(M, candidates, k_prime, pivots, cfg)
    return BitMatrix(M.width, tuple(rows))


# -- orchestration ---------------------------------------------------------------


def choose_pivots(space: list[int], m_rows, order: list[int], k_prime: int) -> tuple[list[int], list[int]]:
    """Pick pivot positions by Gaussian elimination over ``space`` modulo
    span(M), trying positions in ``order``. Returns (pivots ascending,
    echelon vectors) where vector i carries pivot i and the vectors are
    independent of M: a feasible row basis for those pivots."""
    m_ech = gf2.echelon_rows(m_rows)
    pool = [r for r in (gf2.reduce_against(v, m_ech) for v in space) if r]
    chosen: dict[int, int] = {}
    for p in order:
        if len(chosen) == k_prime:
            break
        bit = 1 << p
        hit = next((v for v in pool if v & bit), None)
        if hit is None:
            continue
        pool = [v ^ hit if v & bit else v for v in pool if v is not hit]
        pool = [v for v in pool if v]
        for q in chosen:
            if chosen[q] & bit:
                chosen[q] ^= hit
        chosen[p] = hit
    pivots = sorted(chosen)
    return pivots, [chosen[p] for p in pivots]


def recover_row_masks(same_row_pairs, bank_recovery: BankRecovery, oracle=None, cfg: SearchConfig = SearchConfig()) -> RowRecovery:
    """Coarse mask, D_row, bit flip tests, k' and the pivot choice, candidate
    enumeration, then the minimal-weight basis search.

    Flip tests cover every observed single bit that no bank mask touches.
    A bit whose flip does not conflict is a column bit and joins D_row as a
    unit row, which pins down column directions that sparse same-row pairs
    only exhibit in combination. Flip-positive bits of the coarse mask are
    preferred as pivots, lowest first.
    """
    width = bank_recovery.width
    coarse = coarse_row_mask(same_row_pairs, width)
    _, d = difference_rows(same_row_pairs, width)
    d_rows, _ = _dedup(d)
    dark = list(bank_recovery.undetermined_bits)
    dark_mask = sum(1 << b for b in dark)
    bank_support = 0
    for m in bank_recovery.masks:
        bank_support |= m
    coarse_bits = coarse.bits

    testable = [l for l in range(width) if not (dark_mask >> l) & 1 and not (bank_support >> l) & 1]
    positive: list[int] = []
    negative: list[int] = []
    if oracle is not None and testable:
        rng = np.random.default_rng(cfg.seed)
        verdict = flip_tests([1 << l for l in testable], oracle, cfg.base_count, rng, cfg.alignment_bits)
        for l, hit in zip(testable, verdict.tolist()):
            if not hit:
                negative.append(l)
            elif (coarse_bits >> l) & 1:
                # a varied bit that reads as row-affecting is noise; ignore it
                positive.append(l)
        for l in negative:
            d_rows.append(1 << l)
            coarse_bits &= ~(1 << l)
    D_row = BitMatrix(width, tuple(d_rows))

    rank_row = gf2.rank_rows(d_rows)
    observed = width - len(dark)
    k = bank_recovery.k
    k_prime = observed - rank_row - k
    if k_prime <= 0:
        raise InsufficientData(
            f"inconsistent data: observed bits {observed} - rank(D_row) {rank_row} - k {k} = {k_prime}; "
            "same-row pairs vary bits that bank recovery treats as mask bits"
        )

    space = [v for v in gf2.nullspace_rows(d_rows, width) if not ((v & (v - 1)) == 0 and v & dark_mask)]
    rest = [l for l in range(width) if l not in positive and not (dark_mask >> l) & 1]
    pivots, echelon = choose_pivots(space, bank_recovery.masks, sorted(positive) + rest, k_prime)
    if len(pivots) < k_prime:
        raise NoRowBasis(
            f"only {len(pivots)} independent row directions outside span(M) for k'={k_prime}; "
            "bank masks and D_row disagree (too few or mislabeled pairs)"
        )

    try:
        cands = list(enumerate_candidates(D_row, bank_recovery.basis, cfg, dark).rows)
    except NoRowBasis:
        cands = []
    neg_mask = sum(1 << l for l in negative)
    cands = [c for c in cands if c & ~neg_mask]
    # the echelon vectors guarantee a feasible basis for the chosen pivots
    cands = sorted(set(cands) | set(echelon), key=_weight_key)
    rows, optimal, _ = rank_aware_search(bank_recovery.basis, cands, k_prime, pivots, cfg)
    R = BitMatrix(width, tuple(rows))
    return RowRecovery(
        BitVector(width, coarse_bits),
        BitMatrix(width, tuple(cands)),
        R,
        pivots,
        k_prime,
        sum(r.bit_count() for r in rows),
        not optimal,
        rank_row,
        sorted(positive),
        sorted(negative),
    )


def row_report(rec: RowRecovery) -> dict:
    return {
        "address_bits": rec.width,
        "coarse_mask": rec.coarse_mask.hex(),
        "row_masks": rec.row_basis.hex_rows(),
        "pivots": rec.pivot_positions,
        "k_prime": rec.k_prime,
        "total_weight": rec.total_weight,
        "search_exhausted": rec.search_exhausted,
        "rank_D_row": rec.rank_D_row,
        "candidates": len(rec.candidate_set),
        "flip_positive_bits": rec.flip_positive,
        "flip_negative_bits": rec.flip_negative,
    }
