"""Conflict oracles for verification queries.

An oracle answers "does accessing A then B cause a row conflict?" for a
batch of pairs. The simulator oracle times fresh accesses; the replay oracle
answers from a recorded trace and collects whatever it could not answer so a
probe-request file can be emitted for the next measurement round.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from . import simulator
from .errors import OracleUnusable, PairNotInTrace
from .traces import Trace


class SimulatorOracle:
    def __init__(self, spec, model, trials: int = 15, seed: int = 0):
        if model.closed_page:
            raise OracleUnusable(
                "closed-page model: every access is slow, row conflicts are not observable"
            )
        if trials < 1 or trials % 2 == 0:
            raise ValueError(f"trials must be a positive odd count, got {trials}")
        self.spec = spec
        self.model = model
        self.trials = trials
        self.rng = np.random.default_rng(seed)
        self.queries = 0

    @property
    def width(self) -> int:
        return self.spec.address_bits

    def query(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.uint64)
        b = np.asarray(b, dtype=np.uint64)
        self.queries += a.size
        return simulator.oracle_conflicts(self.spec, self.model, a, b, self.trials, self.rng)


class ReplayOracle:
    """Majority of the recorded verdicts for each pair, in either order.

    Records need a label, or a latency plus ``threshold``.
    """

    def __init__(self, trace: Trace, threshold=None):
        self.width = trace.width
        if threshold is not None:
            verdicts = np.where(trace.has_latency, trace.latency > threshold, trace.label == 1)
            known = trace.has_latency | trace.has_label
        else:
            verdicts = trace.label == 1
            known = trace.has_label
        votes = defaultdict(lambda: [0, 0])
        for a, b, v, ok in zip(trace.addr_a.tolist(), trace.addr_b.tolist(), verdicts.tolist(), known.tolist()):
            if ok:
                votes[_key(a, b)][int(v)] += 1
        self._votes = dict(votes)
        self.missing: list[tuple[int, int]] = []

    def query(self, a, b) -> np.ndarray:
        out = np.zeros(len(a), dtype=bool)
        missing = []
        for i, (x, y) in enumerate(zip(np.asarray(a).tolist(), np.asarray(b).tolist())):
            v = self._votes.get(_key(x, y))
            if v is None:
                missing.append((x, y))
                continue
            # ties count as conflict-free: a flip test then errs toward "column bit"
            out[i] = v[1] > v[0]
        if missing:
            self.missing.extend(missing)
            raise PairNotInTrace(missing, width=self.width)
        return out


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


def confirm(oracle, trace: Trace, expect_conflict: bool) -> Trace:
    """Keep the records whose oracle verdict matches ``expect_conflict``."""
    if len(trace) == 0:
        return trace
    verdict = oracle.query(trace.addr_a, trace.addr_b)
    return trace.subset(verdict == expect_conflict)
