"""Exception types shared across the toolkit."""


class DramapError(Exception):
    """Base class for toolkit errors."""


class WidthMismatch(DramapError, ValueError):
    pass


class SpecError(DramapError, ValueError):
    """A mapping-spec document is malformed or violates a rank condition."""

    def __init__(self, message, mask=None):
        super().__init__(message)
        self.mask = mask


class TraceFormatError(DramapError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NoBimodalDistribution(DramapError):
    """Latencies form a single distribution (closed-page policy or no signal)."""


class OracleUnusable(DramapError):
    pass


class PairNotInTrace(DramapError):
    """A replay oracle was asked about pairs that were never measured."""

    def __init__(self, pairs, width=None):
        self.pairs = list(pairs)
        self.width = width
        super().__init__(f"{len(self.pairs)} probe pair(s) missing from the replay trace")


class InsufficientData(DramapError):
    """Too few pairs, no quorum, or rank bookkeeping that cannot be right."""


class QuorumFailure(InsufficientData):
    pass


class NoRowBasis(DramapError):
    pass


class InfeasibleConstraint(DramapError):
    pass
