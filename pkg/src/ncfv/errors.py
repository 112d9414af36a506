"""Exception types raised across the package."""


class NCError(Exception):
    """Base class for all errors raised by ncfv."""


class DomainError(NCError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class StructuralError(NCError, ValueError):
    """Inputs have the wrong shape, length or index."""


class IntegrityError(NCError):
    """Received data is inconsistent with itself (corrupted packets)."""


class InsufficientRankError(NCError):
    """Not enough innovative packets to decode a generation."""

    def __init__(self, rank, needed):
        super().__init__(f"rank {rank} < {needed}: generation not decodable yet")
        self.rank = rank
        self.needed = needed


class ConfigurationError(NCError, ValueError):
    """Invalid or unsupported configuration."""


class InfeasibleError(NCError):
    """No rate candidate satisfies the complexity budget."""

    def __init__(self, result):
        super().__init__("no feasible coding rate under the complexity budget")
        self.result = result


class BackpressureError(NCError):
    """The generation store is full."""


class NegotiationError(NCError):
    """Two nodes share no coding scheme."""
