"""Sample-count bounds for bank and row mask recovery.

Both bounds have the form ``ceil(2**d / (1 - theta) * log2((2**t - 1) / eps))``
where ``d`` is the dimension being recovered and ``t`` the rank the
difference matrix must reach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BoundParams:
    n: int
    k: int
    k_prime: int = 0
    theta: float = 0.0
    epsilon: float = 0.01


def _check(p: BoundParams, row: bool) -> None:
    problems = []
    if p.n < 1:
        problems.append(f"n={p.n} must be positive")
    if p.k < 0:
        problems.append(f"k={p.k} must be non-negative")
    if not p.k < p.n:
        problems.append(f"k={p.k} must be below n={p.n}")
    if row:
        if p.k_prime < 1:
            problems.append(f"k_prime={p.k_prime} must be at least 1 (no row space to recover)")
        elif not p.k + p.k_prime < p.n:
            problems.append(f"k + k_prime = {p.k + p.k_prime} must be below n={p.n}")
    if not 0 <= p.theta < 1:
        problems.append(f"theta={p.theta} must be in [0, 1)")
    if not 0 < p.epsilon < 1:
        problems.append(f"epsilon={p.epsilon} must be in (0, 1)")
    if problems:
        raise ValueError("; ".join(problems))


def _bound(dim: int, target_rank: int, theta: float, epsilon: float) -> int:
    # math.log2 on an int is exact enough for any width we allow
    log_term = math.log2((1 << target_rank) - 1) - math.log2(epsilon)
    value = (2.0 ** dim) / (1.0 - theta) * log_term
    return math.ceil(value)


def bank_sample_bound(p: BoundParams) -> int:
    _check(p, row=False)
    return _bound(p.k, p.n - p.k, p.theta, p.epsilon)


def row_sample_bound(p: BoundParams) -> int:
    _check(p, row=True)
    return _bound(p.k_prime, p.n - p.k - p.k_prime, p.theta, p.epsilon)
