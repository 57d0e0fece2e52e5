"""Confusion matrix, precision/recall and basis equivalence checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import gf2
from .errors import WidthMismatch
from .gf2 import BitMatrix
from .mapping import MappingSpec, conflict_array
from .traces import Trace


@dataclass(frozen=True)
class EvaluationReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: Optional[float]  # None when tp + fp == 0
    recall: Optional[float]  # None when tp + fn == 0
    pairs_evaluated: int
    basis_match: Optional[bool] = None

    def to_dict(self) -> dict:
        return asdict(self)


def confusion(predicted, actual) -> EvaluationReport:
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    if predicted.shape != actual.shape:
        raise ValueError("prediction and truth differ in length")
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    tn = int(predicted.size - tp - fp - fn)
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return EvaluationReport(tp, fp, tn, fn, precision, recall, int(predicted.size))


def evaluate(recovered: MappingSpec, labeled_pairs: Trace, truth: Optional[MappingSpec] = None, observed_bits=None) -> EvaluationReport:
    """Predict conflicts with ``recovered`` and score against the labels.

    With ``truth`` given, ``basis_match`` compares the full [M; R] spaces on
    the observed bits.
    """
    if labeled_pairs.width != recovered.address_bits:
        raise WidthMismatch(f"pair width {labeled_pairs.width} != spec width {recovered.address_bits}")
    if not labeled_pairs.has_label.all():
        raise ValueError("evaluation needs a ground-truth label on every pair")
    predicted = conflict_array(recovered, labeled_pairs.addr_a, labeled_pairs.addr_b)
    rep = confusion(predicted, labeled_pairs.label == 1)
    if truth is not None:
        if observed_bits is None:
            observed_bits = gf2.full_mask(truth.address_bits)
        match = compare_bases(
            recovered.bank_matrix.stack(recovered.row_matrix),
            truth.bank_matrix.stack(truth.row_matrix),
            observed_bits,
        )
        rep = EvaluationReport(**{**rep.to_dict(), "basis_match": match})
    return rep


def _as_mask(observed_bits, width: int) -> int:
    if observed_bits is None:
        return gf2.full_mask(width)
    if isinstance(observed_bits, int):
        return observed_bits
    mask = 0
    for b in observed_bits:
        mask |= 1 << b
    return mask


def compare_bases(recovered: BitMatrix, truth: BitMatrix, observed_bits=None) -> bool:
    """Row-space equality after zeroing unobserved positions in ``truth``.
    ``observed_bits`` is a bit mask or a list of positions (default: all)."""
    if recovered.width != truth.width:
        raise WidthMismatch(f"widths differ: {recovered.width} != {truth.width}")
    mask = _as_mask(observed_bits, truth.width)
    restricted = BitMatrix(truth.width, tuple(r & mask for r in truth.rows if r & mask))
    return gf2.row_space_equal(recovered, restricted)


def _fmt(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def summary_table(rep: EvaluationReport) -> str:
    rows = [
        ("pairs", rep.pairs_evaluated),
        ("true positive", rep.tp),
        ("false positive", rep.fp),
        ("true negative", rep.tn),
        ("false negative", rep.fn),
        ("precision", rep.precision),
        ("recall", rep.recall),
    ]
    if rep.basis_match is not None:
        rows.append(("basis match", "yes" if rep.basis_match else "no"))
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {_fmt(value)}" for name, value in rows)
