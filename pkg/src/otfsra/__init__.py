"""Grant-free random access over massive MIMO-OTFS LEO satellite links.

Library + CLI: delay-Doppler frame model, LEO multipath channels,
pattern-coupled sparse Bayesian learning (TDSBL-CF) and damped GAMP
(ConvSBL-GAMP) recovery, and a Monte-Carlo evaluation harness.
"""

from .errors import (
    AmbiguityError,
    CgBreakdownError,
    ContractError,
    DivergenceError,
    DomainError,
    NumericError,
    OtfsraError,
    ShapeError,
)
from .frame import (
    DenseOperator,
    OtfsGrid,
    PilotOperator,
    TapIndex,
    build_pilot_operator,
    generate_pilots,
    isfft,
    quantize_taps,
    sfft,
)

__all__ = [
    "AmbiguityError",
    "CgBreakdownError",
    "ContractError",
    "DenseOperator",
    "DivergenceError",
    "DomainError",
    "NumericError",
    "OtfsGrid",
    "OtfsraError",
    "PilotOperator",
    "ShapeError",
    "TapIndex",
    "build_pilot_operator",
    "generate_pilots",
    "isfft",
    "quantize_taps",
    "sfft",
]

__version__ = "0.1.0"
