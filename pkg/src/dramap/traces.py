"""Trace files, latency threshold detection and conflict labeling.

A :class:`Trace` keeps its records column-wise in numpy arrays so that
10^5-record traces stay cheap to threshold and classify; iterating it yields
:class:`TraceRecord` values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import NoBimodalDistribution, TraceFormatError, WidthMismatch

HEADER_PREFIX = "# knock-trace v1"
NO_LATENCY = -1
NO_LABEL = -1

DEFAULT_MIN_SEPARATION = 0.8
DEFAULT_MIN_CLASS_FRACTION = 0.02
MIN_SAMPLES = 100


@dataclass(frozen=True)
class TraceRecord:
    addr_a: int
    addr_b: int
    latency: Optional[int] = None
    label: Optional[bool] = None  # True = conflict

    def __post_init__(self):
        if self.latency is None and self.label is None:
            raise ValueError("record needs a latency or a label")
        if self.latency is not None and self.latency < 0:
            raise ValueError("latency must be non-negative")


class Trace:
    """Column store of address pairs with optional latency and label."""

    def __init__(self, width, addr_a, addr_b, latency=None, label=None):
        if not 1 <= width <= 64:
            raise ValueError(f"width must be in 1..64, got {width}")
        self.width = int(width)
        self.addr_a = np.ascontiguousarray(addr_a, dtype=np.uint64)
        self.addr_b = np.ascontiguousarray(addr_b, dtype=np.uint64)
        n = self.addr_a.size
        if self.addr_b.size != n:
            raise ValueError("address columns differ in length")
        self.latency = (
            np.full(n, NO_LATENCY, dtype=np.int64) if latency is None
            else np.ascontiguousarray(latency, dtype=np.int64)
        )
        self.label = (
            np.full(n, NO_LABEL, dtype=np.int8) if label is None
            else np.ascontiguousarray(label, dtype=np.int8)
        )
        if self.latency.size != n or self.label.size != n:
            raise ValueError("latency/label columns differ in length")
        if width < 64:
            limit = np.uint64(1 << width)
            if n and (self.addr_a.max() >= limit or self.addr_b.max() >= limit):
                raise WidthMismatch(f"address exceeds trace width {width}")

    @classmethod
    def from_records(cls, width: int, records: Iterable[TraceRecord]) -> "Trace":
        records = list(records)
        return cls(
            width,
            [r.addr_a for r in records],
            [r.addr_b for r in records],
            [NO_LATENCY if r.latency is None else r.latency for r in records],
            [NO_LABEL if r.label is None else int(r.label) for r in records],
        )

    def __len__(self) -> int:
        return int(self.addr_a.size)

    def __iter__(self):
        for a, b, lat, lab in zip(
            self.addr_a.tolist(), self.addr_b.tolist(), self.latency.tolist(), self.label.tolist()
        ):
            yield TraceRecord(a, b, None if lat < 0 else lat, None if lab < 0 else bool(lab))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.width == other.width
            and np.array_equal(self.addr_a, other.addr_a)
            and np.array_equal(self.addr_b, other.addr_b)
            and np.array_equal(self.latency, other.latency)
            and np.array_equal(self.label, other.label)
        )

    def subset(self, mask_or_index) -> "Trace":
        return Trace(
            self.width,
            self.addr_a[mask_or_index],
            self.addr_b[mask_or_index],
            self.latency[mask_or_index],
            self.label[mask_or_index],
        )

    def differences(self) -> np.ndarray:
        return self.addr_a ^ self.addr_b

    @property
    def has_latency(self) -> np.ndarray:
        return self.latency >= 0

    @property
    def has_label(self) -> np.ndarray:
        return self.label >= 0

    def conflicts(self) -> "Trace":
        return self.subset(self.label == 1)

    def non_conflicts(self) -> "Trace":
        return self.subset(self.label == 0)


# -- file format -----------------------------------------------------------------


def write_trace(trace: Trace, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{HEADER_PREFIX} width={trace.width}\n")
        for a, b, lat, lab in zip(
            trace.addr_a.tolist(), trace.addr_b.tolist(), trace.latency.tolist(), trace.label.tolist()
        ):
            line = f"{a:#x},{b:#x},{'' if lat < 0 else lat}"
            if lab >= 0:
                line += ",C" if lab else ",N"
            fh.write(line + "\n")


def _parse_header(line: str) -> int:
    if not line.startswith(HEADER_PREFIX):
        raise TraceFormatError(f"missing '{HEADER_PREFIX} width=<n>' header", line=1)
    for token in line[len(HEADER_PREFIX):].split():
        if token.startswith("width="):
            try:
                return int(token[len("width="):])
            except ValueError:
                break
    raise TraceFormatError("header lacks a valid width=<n>", line=1)


def read_trace(path, allow_empty=False) -> Trace:
    """Parse a trace file. ``allow_empty`` admits records with neither
    latency nor label (probe-request files)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceFormatError("empty file", line=1)
    width = _parse_header(lines[0])
    if not 1 <= width <= 64:
        raise TraceFormatError(f"width {width} out of range 1..64", line=1)
    limit = 1 << width
    addr_a, addr_b, latency, label = [], [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) not in (3, 4):
            raise TraceFormatError(f"expected 3 or 4 fields, got {len(fields)}", line=lineno)
        try:
            a = _parse_addr(fields[0])
            b = _parse_addr(fields[1])
        except ValueError as exc:
            raise TraceFormatError(str(exc), line=lineno) from None
        if a >= limit or b >= limit:
            raise TraceFormatError(f"address wider than width={width}", line=lineno)
        lat_text = fields[2].strip()
        if lat_text:
            if not lat_text.isdigit():
                raise TraceFormatError(f"bad latency {lat_text!r}", line=lineno)
            lat = int(lat_text)
        else:
            lat = NO_LATENCY
        lab = NO_LABEL
        if len(fields) == 4:
            tag = fields[3].strip()
            if tag == "C":
                lab = 1
            elif tag == "N":
                lab = 0
            elif tag:
                raise TraceFormatError(f"bad label {tag!r} (expected C or N)", line=lineno)
        if lat == NO_LATENCY and lab == NO_LABEL and not allow_empty:
            raise TraceFormatError("record has neither latency nor label", line=lineno)
        addr_a.append(a)
        addr_b.append(b)
        latency.append(lat)
        label.append(lab)
    return Trace(width, addr_a, addr_b, latency, label)


def _parse_addr(text: str) -> int:
    text = text.strip()
    if not text[:2].lower() == "0x":
        raise ValueError(f"address {text!r} is not 0x-prefixed hex")
    try:
        return int(text, 16)
    except ValueError:
        raise ValueError(f"address {text!r} is not valid hex") from None


def write_probe_request(pairs, width: int, path, trials: int = 1) -> None:
    """Pairs the replay oracle still needs, in trace schema with the latency
    column empty. Each pair is listed ``trials`` times."""
    with open(path, "w") as fh:
        fh.write(f"{HEADER_PREFIX} width={width}\n")
        fh.write(f"# probe request: measure each line, fill in latency (trials={trials})\n")
        for a, b in pairs:
            for _ in range(trials):
                fh.write(f"{a:#x},{b:#x},\n")


# -- threshold detection ---------------------------------------------------------


@dataclass(frozen=True)
class ThresholdReport:
    threshold: float
    low_mode: float
    high_mode: float
    separation_score: float
    low_fraction: float
    samples: int


def latency_histogram(latencies) -> tuple[np.ndarray, np.ndarray]:
    """(cycles, counts) with one bin per cycle from min to max."""
    lat = np.asarray(latencies, dtype=np.int64)
    lo = int(lat.min())
    counts = np.bincount(lat - lo)
    return np.arange(lo, lo + counts.size), counts


def otsu_split(cycles: np.ndarray, counts: np.ndarray):
    """Best two-class split of an integer histogram.

    Returns ``(index, between_variance, total_variance)`` where the low class
    is ``cycles[: index + 1]``.
    """
    p = counts.astype(np.float64)
    total = p.sum()
    p /= total
    x = cycles.astype(np.float64)
    mu_total = float((p * x).sum())
    var_total = float((p * (x - mu_total) ** 2).sum())
    w0 = np.cumsum(p)
    mu0_mass = np.cumsum(p * x)
    w1 = 1.0 - w0
    valid = (w0 > 0) & (w1 > 1e-12)
    between = np.zeros_like(w0)
    between[valid] = (mu_total * w0[valid] - mu0_mass[valid]) ** 2 / (w0[valid] * w1[valid])
    if not valid.any():
        return None, 0.0, var_total
    # plateaus: take the middle of the maximizing run so T sits mid-gap
    best = between.max()
    ties = np.flatnonzero(between >= best * (1 - 1e-12))
    idx = int(ties[len(ties) // 2])
    return idx, float(best), var_total


def find_threshold(
    latencies,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    min_class_fraction: float = DEFAULT_MIN_CLASS_FRACTION,
) -> ThresholdReport:
    """Otsu threshold over a 1-cycle histogram plus a bimodality check.

    Raises NoBimodalDistribution when the split explains too little of the
    variance or leaves a near-empty class: a single latency population is
    what a closed-page controller produces.
    """
    lat = np.asarray(latencies, dtype=np.int64)
    lat = lat[lat >= 0]
    if lat.size < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} latency samples, got {lat.size}")
    cycles, counts = latency_histogram(lat)
    idx, between, var_total = otsu_split(cycles, counts)
    if idx is None or var_total == 0:
        raise NoBimodalDistribution(
            "single distribution: all latencies identical; the row-buffer side channel "
            "is unusable (closed-page policy?)"
        )
    score = between / var_total
    low = counts[: idx + 1]
    high = counts[idx + 1:]
    low_fraction = float(low.sum() / counts.sum())
    high_fraction = 1.0 - low_fraction
    # threshold halfway between the last low-class bin and the first high-class bin
    nxt = idx + 1 + int(np.flatnonzero(high)[0]) if high.any() else idx
    last_low = int(np.flatnonzero(low)[-1])
    threshold = float(cycles[last_low] + cycles[nxt]) / 2.0
    low_mode = float(cycles[int(np.argmax(low))])
    high_mode = float(cycles[idx + 1 + int(np.argmax(high))]) if high.any() else low_mode
    if score < min_separation or min(low_fraction, high_fraction) < min_class_fraction:
        raise NoBimodalDistribution(
            f"single distribution: separation score {score:.3f} (need >= {min_separation}), "
            f"class fractions {low_fraction:.3f}/{high_fraction:.3f} "
            f"(need >= {min_class_fraction}); no separate row-conflict mode "
            "(closed-page policy?)"
        )
    return ThresholdReport(threshold, low_mode, high_mode, float(score), low_fraction, int(lat.size))


def classify(trace: Trace, threshold: float, relabel: bool = False) -> Trace:
    """Label conflict iff latency > threshold. Existing labels are kept unless
    ``relabel``."""
    if not trace.has_latency.all():
        missing = int(np.flatnonzero(~trace.has_latency)[0])
        raise ValueError(f"record {missing} has no latency to classify")
    fresh = (trace.latency > threshold).astype(np.int8)
    label = fresh if relabel else np.where(trace.has_label, trace.label, fresh)
    return Trace(trace.width, trace.addr_a, trace.addr_b, trace.latency, label)
