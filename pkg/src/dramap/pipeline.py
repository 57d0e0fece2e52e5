"""The two-phase recovery pipeline: banks from random pairs, then rows from
same-bank pairs, then an evaluation on fresh pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import bank_solver, metrics, oracles, row_solver, simulator, traces
from .bounds import BoundParams, bank_sample_bound, row_sample_bound
from .errors import DramapError
from .mapping import MappingSpec, make_spec, spec_to_dict
from .traces import Trace


class StageError(DramapError):
    """A pipeline stage failed; ``cause`` holds the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class BankPhase:
    recovery: bank_solver.BankRecovery
    threshold: Optional[traces.ThresholdReport]
    threshold_value: float
    conflicts_labeled: int
    conflicts_confirmed: int


def label_trace(trace: Trace, threshold=None, min_separation=traces.DEFAULT_MIN_SEPARATION):
    """Classify by ``threshold`` or by a detected one. Returns (trace,
    ThresholdReport or None, threshold used). Labeled traces pass through."""
    if trace.has_label.all() and threshold is None:
        return trace, None, float("nan")
    report = None
    if threshold is None:
        report = traces.find_threshold(trace.latency, min_separation=min_separation)
        threshold = report.threshold
    return traces.classify(trace, threshold), report, float(threshold)


def bank_phase(trace: Trace, oracle=None, q=5, quorum=0.6, seed=0, threshold=None,
               min_separation=traces.DEFAULT_MIN_SEPARATION, vote=True) -> BankPhase:
    labeled, report, t = label_trace(trace, threshold, min_separation)
    conflicts = labeled.conflicts()
    n_labeled = len(conflicts)
    if oracle is not None:
        conflicts = oracles.confirm(oracle, conflicts, True)
    observed = bank_solver.observed_bits(trace)
    if vote:
        rec = bank_solver.subsample_vote(conflicts, q=q, quorum=quorum, seed=seed, observed_mask=observed)
    else:
        D = bank_solver.build_difference_matrix(conflicts)
        rec = bank_solver.recover_bank_masks(D, pairs_used=len(conflicts), observed_mask=observed)
        rec = bank_solver.BankRecovery(
            rec.basis, rec.undetermined_bits, rec.k, rec.rank_D, rec.pairs_used,
            None, bank_solver.explain_fraction(rec.basis, conflicts),
        )
    return BankPhase(rec, report, t, n_labeled, len(conflicts))


def row_phase(same_bank: Trace, bank: bank_solver.BankRecovery, threshold: float, oracle=None,
              cfg: row_solver.SearchConfig = row_solver.SearchConfig(), confirm=True) -> row_solver.RowRecovery:
    labeled = same_bank if same_bank.has_label.all() else traces.classify(same_bank, threshold)
    same_row = labeled.non_conflicts()
    # (A, A) pairs say nothing about the mapping
    same_row = same_row.subset(same_row.addr_a != same_row.addr_b)
    if confirm and oracle is not None:
        same_row = oracles.confirm(oracle, same_row, False)
    return row_solver.recover_row_masks(same_row, bank, oracle, cfg)


def recovered_spec(bank: bank_solver.BankRecovery, rows: row_solver.RowRecovery, label="recovered") -> MappingSpec:
    return make_spec(bank.width, bank.masks, rows.row_basis.rows, label)


def fresh_pairs(spec: MappingSpec, model: simulator.LatencyModel, count: int, seed: int,
                alignment_bits: int, noisy: bool = False, threshold: Optional[float] = None) -> Trace:
    """Evaluation pairs labeled by the true mapping, or by thresholding their
    simulated latencies when ``noisy``."""
    tr = simulator.generate_trace(spec, model, simulator.GenConfig(count, seed=seed, alignment_bits=alignment_bits))
    if noisy:
        return traces.classify(tr, model.midpoint if threshold is None else threshold)
    return Trace(tr.width, tr.addr_a, tr.addr_b, tr.latency, simulator.true_labels(spec, tr))


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except DramapError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc
    except ValueError as exc:
        raise StageError(name, exc) from exc


def run_e2e(
    spec: MappingSpec,
    model: simulator.LatencyModel,
    seed: int = 0,
    pairs: Optional[int] = None,
    row_pairs: Optional[int] = None,
    alignment_bits: int = 6,
    q: int = 5,
    quorum: float = 0.6,
    confirm_trials: int = 15,
    threshold: Optional[float] = None,
    eval_pairs: int = 10_000,
    eval_noisy: bool = False,
    cfg: Optional[row_solver.SearchConfig] = None,
    min_separation: float = traces.DEFAULT_MIN_SEPARATION,
) -> dict:
    """simulate → solve banks → simulate same-bank → solve rows → evaluate.

    Sizes default to 4x the bank bound and 2x the row bound at
    theta = max(mislabel rate, 0.05). ``confirm_trials`` > 0 re-times each
    labeled pair through the simulator oracle before it enters a solver.
    """
    theta = max(model.mislabel_rate, 0.05)
    n = spec.address_bits
    if pairs is None:
        pairs = 4 * bank_sample_bound(BoundParams(n=n, k=spec.k, theta=theta))
    if row_pairs is None:
        row_pairs = 2 * row_sample_bound(BoundParams(n=n, k=spec.k, k_prime=spec.k_prime, theta=theta))
    if cfg is None:
        cfg = row_solver.SearchConfig(alignment_bits=alignment_bits, seed=seed)
    rng_seeds = np.random.SeedSequence(seed).generate_state(4, dtype=np.uint64).tolist()

    trace = _stage("simulate", simulator.generate_trace, spec, model,
                   simulator.GenConfig(pairs, seed=rng_seeds[0], alignment_bits=alignment_bits))
    labeled, t_report, t_value = _stage("threshold", label_trace, trace, threshold, min_separation)
    oracle = None
    if confirm_trials:
        oracle = _stage("oracle", oracles.SimulatorOracle, spec, model, confirm_trials, rng_seeds[3])
    bank = _stage("solve-banks", bank_phase, labeled, oracle, q, quorum, seed)

    same_bank = _stage(
        "simulate-same-bank", simulator.generate_trace, spec, model,
        simulator.GenConfig(row_pairs, seed=rng_seeds[1], alignment_bits=alignment_bits, constraint="same_bank"),
        bank_masks=bank.recovery.masks,
    )
    rows = _stage("solve-rows", row_phase, same_bank, bank.recovery, t_value, oracle, cfg)
    recovered = _stage("assemble", recovered_spec, bank.recovery, rows)
    fresh = fresh_pairs(spec, model, eval_pairs, rng_seeds[2], alignment_bits, eval_noisy, t_value)
    observed = bank.recovery.observed_mask
    report = _stage("evaluate", metrics.evaluate, recovered, fresh, spec, observed)
    bank_match = metrics.compare_bases(bank.recovery.basis, spec.bank_matrix, observed)
    return {
        "spec": spec_to_dict(spec),
        "pairs": pairs,
        "row_pairs": row_pairs,
        "threshold": None if t_report is None else {
            "threshold": t_report.threshold,
            "separation_score": t_report.separation_score,
            "low_fraction": t_report.low_fraction,
        },
        "threshold_used": t_value,
        "conflicts_labeled": bank.conflicts_labeled,
        "conflicts_confirmed": bank.conflicts_confirmed,
        "bank": bank_solver.bank_report(bank.recovery),
        "bank_match": bank_match,
        "rows": row_solver.row_report(rows),
        "recovered": spec_to_dict(recovered),
        "evaluation": report.to_dict(),
        "oracle_queries": 0 if oracle is None else oracle.queries,
    }
