"""Synthetic timing traces and a conflict oracle driven by a MappingSpec.

Randomness comes from Philox4x64 keyed by the seed. Record ``i`` consumes
exactly the four 64-bit words of counter block ``i``:

- word 0: address A
- word 1: address B (any_pair) or nullspace coefficients for B ⊕ A (same_bank)
- word 2: uniform deciding whether the latency is drawn from the wrong mode
- word 3: two 32-bit uniforms feeding a Box-Muller normal

so any slice of a trace can be generated independently and matches the
sequential result bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import gf2
from .errors import InfeasibleConstraint, OracleUnusable
from .mapping import MappingSpec, conflict_array, is_conflict
from .traces import Trace

CONSTRAINTS = ("any_pair", "same_bank")


@dataclass(frozen=True)
class LatencyModel:
    low_mean: float = 175.0
    low_std: float = 3.0
    high_mean: float = 230.0
    high_std: float = 5.0
    mislabel_rate: float = 0.0
    closed_page: bool = False

    def __post_init__(self):
        if not 0 <= self.mislabel_rate < 1:
            raise ValueError(f"mislabel_rate must be in [0, 1), got {self.mislabel_rate}")
        if self.low_std < 0 or self.high_std < 0:
            raise ValueError("standard deviations must be non-negative")
        if not self.closed_page and not (
            self.low_mean + 3 * self.low_std < self.high_mean - 3 * self.high_std
        ):
            raise ValueError(
                "latency modes overlap: need low_mean + 3*low_std < high_mean - 3*high_std"
            )

    @property
    def midpoint(self) -> float:
        return (self.low_mean + self.high_mean) / 2


@dataclass(frozen=True)
class GenConfig:
    pair_count: int
    seed: int = 0
    alignment_bits: int = 6
    constraint: str = "any_pair"
    address_bits: Optional[int] = None  # defaults to the spec's width

    def __post_init__(self):
        if self.pair_count < 1:
            raise ValueError(f"pair_count must be at least 1, got {self.pair_count}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be one of {CONSTRAINTS}, got {self.constraint!r}")
        if self.alignment_bits < 0:
            raise ValueError("alignment_bits must be non-negative")
        if self.address_bits is not None and self.alignment_bits >= self.address_bits:
            raise ValueError("alignment_bits must be below address_bits")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def record_words(seed: int, start: int, count: int) -> np.ndarray:
    """(count, 4) uint64 words for records start .. start+count-1."""
    bitgen = np.random.Philox(key=seed)
    if start:
        bitgen.advance(start)
    return bitgen.random_raw(4 * count).reshape(count, 4)


def _unit_float(words: np.ndarray) -> np.ndarray:
    return (words >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)


def _normal(words: np.ndarray) -> np.ndarray:
    u1 = ((words >> np.uint64(32)).astype(np.float64) + 0.5) / 2**32
    u2 = (words & np.uint64(0xFFFFFFFF)).astype(np.float64) / 2**32
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2 * np.pi * u2)


def _latencies(model: LatencyModel, conflict: np.ndarray, swap_words, normal_words) -> np.ndarray:
    high = np.asarray(conflict, dtype=bool)
    if model.closed_page:
        high = np.ones_like(high)
    elif model.mislabel_rate > 0:
        high = high ^ (_unit_float(swap_words) < model.mislabel_rate)
    z = _normal(normal_words)
    mean = np.where(high, model.high_mean, model.low_mean)
    std = np.where(high, model.high_std, model.low_std)
    return np.maximum(np.rint(mean + std * z), 0).astype(np.int64)


def sample_latency(model: LatencyModel, conflict: bool, rng: np.random.Generator) -> int:
    """One latency draw in cycles."""
    words = rng.integers(0, 2**64, size=2, dtype=np.uint64, endpoint=False)
    return int(_latencies(model, np.array([conflict]), words[:1], words[1:])[0])


def sample_latencies(model: LatencyModel, conflict, rng: np.random.Generator) -> np.ndarray:
    conflict = np.asarray(conflict, dtype=bool)
    words = rng.integers(0, 2**64, size=(2, conflict.size), dtype=np.uint64)
    return _latencies(model, conflict, words[0], words[1])


def same_bank_directions(bank_masks, address_bits: int, alignment_bits: int) -> list[int]:
    """Basis of differences that keep the bank index and the aligned bits."""
    forced = list(bank_masks) + [1 << i for i in range(alignment_bits)]
    return gf2.nullspace_rows(forced, address_bits)


def _combine(basis: list[int], coeffs: np.ndarray) -> np.ndarray:
    out = np.zeros(coeffs.size, dtype=np.uint64)
    for j, v in enumerate(basis):
        bit = (coeffs >> np.uint64(j)) & np.uint64(1)
        out ^= bit * np.uint64(v)
    return out


def generate_trace(
    spec: MappingSpec,
    model: LatencyModel,
    cfg: GenConfig,
    bank_masks=None,
    start: int = 0,
) -> Trace:
    """Latency-only trace of ``cfg.pair_count`` pairs.

    ``bank_masks`` overrides the masks used to build ``same_bank`` pairs
    (phase 2 builds them from the recovered basis); latencies always follow
    the true spec. ``start`` skips to a later record index.
    """
    n = spec.address_bits if cfg.address_bits is None else cfg.address_bits
    if n != spec.address_bits:
        raise ValueError(f"cfg.address_bits={n} does not match spec width {spec.address_bits}")
    if cfg.alignment_bits >= n:
        raise ValueError("alignment_bits must be below address_bits")
    words = record_words(cfg.seed, start, cfg.pair_count)
    addr_mask = np.uint64(gf2.full_mask(n) & ~gf2.full_mask(cfg.alignment_bits) if cfg.alignment_bits else gf2.full_mask(n))
    a = words[:, 0] & addr_mask
    if cfg.constraint == "same_bank":
        masks = spec.bank_masks if bank_masks is None else tuple(bank_masks)
        basis = same_bank_directions(masks, n, cfg.alignment_bits)
        if not basis:
            raise InfeasibleConstraint(
                "same_bank: every aligned address difference changes the bank index; "
                "no pair other than (A, A) exists"
            )
        if len(basis) > 64:
            raise InfeasibleConstraint("same_bank: nullspace wider than the coefficient word")
        b = a ^ _combine(basis, words[:, 1])
    else:
        b = words[:, 1] & addr_mask
    conflict = conflict_array(spec, a, b)
    latency = _latencies(model, conflict, words[:, 2], words[:, 3])
    return Trace(n, a, b, latency)


def true_labels(spec: MappingSpec, trace: Trace) -> np.ndarray:
    return conflict_array(spec, trace.addr_a, trace.addr_b).astype(np.int8)


def oracle_conflicts(spec, model, a, b, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Majority verdict of ``trials`` simulated timings per pair, each
    classified against the model midpoint."""
    if trials < 1 or trials % 2 == 0:
        raise ValueError(f"trials must be a positive odd count, got {trials}")
    if model.closed_page:
        raise OracleUnusable(
            "closed-page model: every access is slow, row conflicts are not observable"
        )
    truth = conflict_array(spec, a, b)
    votes = np.zeros(truth.size, dtype=np.int64)
    for _ in range(trials):
        votes += sample_latencies(model, truth, rng) > model.midpoint
    return votes * 2 > trials


def oracle_is_conflict(spec, model, a, b, trials: int = 1, rng=None) -> bool:
    if rng is None:
        rng = np.random.default_rng(0)
    if trials < 1 or trials % 2 == 0:
        raise ValueError(f"trials must be a positive odd count, got {trials}")
    if model.closed_page:
        raise OracleUnusable(
            "closed-page model: every access is slow, row conflicts are not observable"
        )
    truth = is_conflict(spec, a, b)
    lat = sample_latencies(model, np.full(trials, truth), rng)
    return int((lat > model.midpoint).sum()) * 2 > trials


def inject_label_noise(trace: Trace, theta: float, rng: np.random.Generator, mode="conflict_fraction") -> Trace:
    """Corrupt labels of an already labeled trace.

    ``conflict_fraction`` relabels non-conflict records as conflicts until a
    fraction ``theta`` of the conflict-labeled records are false.
    ``symmetric`` flips every label independently with probability theta.
    """
    if not 0 <= theta < 1:
        raise ValueError(f"theta must be in [0, 1), got {theta}")
    label = trace.label.copy()
    if (label < 0).any():
        raise ValueError("every record needs a label before noise injection")
    if mode == "symmetric":
        flip = rng.random(label.size) < theta
        label[flip] ^= 1
    elif mode == "conflict_fraction":
        n_true = int((label == 1).sum())
        pool = np.flatnonzero(label == 0)
        n_false = int(round(theta / (1 - theta) * n_true))
        if n_false > pool.size:
            raise ValueError("not enough non-conflict records to reach the requested noise level")
        label[rng.choice(pool, size=n_false, replace=False)] = 1
    else:
        raise ValueError(f"unknown noise mode {mode!r}")
    return Trace(trace.width, trace.addr_a, trace.addr_b, trace.latency, label)
