"""Network coding as a virtualized reliability function.

Submodules: ``gf`` (field arithmetic, gate model), ``codec`` (RLNC), ``channel``
(multi-hop erasure model and Monte Carlo oracle), ``optimizer`` (utility and
rate selection), ``vnf`` (function runtime), ``geo`` (coverage extension) and
``cli``.
"""

from .channel import DeliveryEstimate, ErasureSpec, monte_carlo_delivery, p_delivery, p_hop_success
from .codec import CodedPacket, CodingParams, ComplexityLedger, Decoder, decode, encode, rank, recode
from .errors import (
    BackpressureError,
    ConfigurationError,
    DomainError,
    InfeasibleError,
    InsufficientRankError,
    IntegrityError,
    NCError,
    NegotiationError,
    StructuralError,
)
from .gf import GF, FieldParams, GateCost, gate_cost, get_field
from .optimizer import (
    OperativeRange,
    OptimizationResult,
    RateGrid,
    UtilityConfig,
    cost,
    goodness,
    operative_range,
    optimize_rate,
    range_gate_report,
    utility,
)

__version__ = "0.1.0"

__all__ = [
    "DeliveryEstimate", "ErasureSpec", "monte_carlo_delivery", "p_delivery", "p_hop_success",
    "CodedPacket", "CodingParams", "ComplexityLedger", "Decoder", "decode", "encode", "rank", "recode",
    "BackpressureError", "ConfigurationError", "DomainError", "InfeasibleError",
    "InsufficientRankError", "IntegrityError", "NCError", "NegotiationError", "StructuralError",
    "GF", "FieldParams", "GateCost", "gate_cost", "get_field",
    "OperativeRange", "OptimizationResult", "RateGrid", "UtilityConfig", "cost", "goodness",
    "operative_range", "optimize_rate", "range_gate_report", "utility",
]
