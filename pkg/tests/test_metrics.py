import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dramap import gf2, mapping, metrics, simulator as sim
from dramap.errors import WidthMismatch
from dramap.gf2 import BitMatrix
from dramap.simulator import GenConfig, LatencyModel
from dramap.traces import Trace

SPEC = mapping.synthetic_spec(24, 4, 8)


def fresh(spec, count=10_000, seed=0):
    tr = sim.generate_trace(spec, LatencyModel(), GenConfig(count, seed=seed))
    return Trace(tr.width, tr.addr_a, tr.addr_b, tr.latency, sim.true_labels(spec, tr))


def relabel_counts(recovered, truth, pairs):
    """Scalar re-count of the confusion matrix, one pair at a time."""
    c = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for a, b in zip(pairs.addr_a.tolist(), pairs.addr_b.tolist()):
        p, t = mapping.is_conflict(recovered, a, b), mapping.is_conflict(truth, a, b)
        c[("t" if p == t else "f") + ("p" if p else "n")] += 1
    return c


def test_perfect_recovery():
    rep = metrics.evaluate(SPEC, fresh(SPEC), SPEC)
    assert rep.precision == 1.0 and rep.recall == 1.0 and rep.basis_match
    assert rep.tp + rep.fp + rep.tn + rep.fn == rep.pairs_evaluated == 10_000


def test_dropped_bank_mask_costs_precision():
    # one bank constraint fewer: every true conflict is still predicted,
    # plus pairs that really sit in different banks
    dropped = mapping.make_spec(24, SPEC.bank_masks[1:], SPEC.row_masks)
    pairs = fresh(SPEC, 3000, 1)
    rep = metrics.evaluate(dropped, pairs, SPEC)
    assert rep.recall == 1.0 and rep.precision < 1.0
    assert rep.basis_match is False
    c = relabel_counts(dropped, SPEC, pairs)
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (c["tp"], c["fp"], c["tn"], c["fn"])


def test_dropped_row_mask_costs_recall():
    dropped = mapping.make_spec(24, SPEC.bank_masks, SPEC.row_masks[1:])
    pairs = fresh(SPEC, 3000, 2)
    rep = metrics.evaluate(dropped, pairs)
    assert rep.precision == 1.0 and rep.recall < 1.0
    c = relabel_counts(dropped, SPEC, pairs)
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (c["tp"], c["fp"], c["tn"], c["fn"])


def test_undefined_ratios_are_absent():
    rep = metrics.confusion([False, False], [False, False])
    assert rep.precision is None and rep.recall is None and rep.tn == 2
    rep = metrics.confusion([False], [True])
    assert rep.precision is None and rep.recall == 0.0
    with pytest.raises(ValueError):
        metrics.confusion([True], [True, False])


@given(st.lists(st.tuples(st.booleans(), st.booleans()), max_size=50))
def test_swapping_roles_transposes(pairs):
    p = [x for x, _ in pairs]
    t = [y for _, y in pairs]
    a, b = metrics.confusion(p, t), metrics.confusion(t, p)
    assert (a.tp, a.fp, a.fn, a.tn) == (b.tp, b.fn, b.fp, b.tn)
    assert a.precision == b.recall


def test_evaluate_checks():
    with pytest.raises(WidthMismatch):
        metrics.evaluate(SPEC, fresh(mapping.synthetic_spec(20, 3, 5), 10))
    unlabeled = sim.generate_trace(SPEC, LatencyModel(), GenConfig(10))
    with pytest.raises(ValueError):
        metrics.evaluate(SPEC, unlabeled)


def random_invertible(k, rng):
    while True:
        rows = [int(x) for x in rng.integers(0, 1 << k, size=k)]
        if gf2.rank_rows(rows) == k:
            return rows


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_compare_bases_recombination(seed):
    rng = np.random.default_rng(seed)
    truth = mapping.random_spec(20, 5, 3, rng).bank_matrix
    P = random_invertible(len(truth), rng)
    mixed = []
    for row in P:
        v = 0
        for i in range(len(truth)):
            if (row >> i) & 1:
                v ^= truth.rows[i]
        mixed.append(v)
    assert metrics.compare_bases(BitMatrix(20, tuple(mixed)), truth)
    assert metrics.compare_bases(truth, BitMatrix(20, tuple(mixed)))
    assert not metrics.compare_bases(BitMatrix(20, truth.rows[1:]), truth)


def test_compare_bases_restricts_truth():
    truth = BitMatrix(10, (0b11, 1 << 8, 1 << 9))
    recovered = BitMatrix(10, (1 << 8, 1 << 9))
    assert not metrics.compare_bases(recovered, truth)
    assert metrics.compare_bases(recovered, truth, gf2.full_mask(10) & ~0b11)
    assert metrics.compare_bases(recovered, truth, list(range(2, 10)))
    with pytest.raises(WidthMismatch):
        metrics.compare_bases(BitMatrix(9, ()), truth)


def test_summary_table():
    text = metrics.summary_table(metrics.confusion([True, False], [True, True]))
    assert "precision       1.0000" in text.splitlines()
    assert "recall" in text and "0.5000" in text
    assert "n/a" in metrics.summary_table(metrics.confusion([False], [False]))
