"""Neural-network surrogate for steady-state cabin temperature fields."""

from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    NumericError,
    ShapeError,
    SurrogateError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "DataError",
    "NumericError",
    "ShapeError",
    "SurrogateError",
]
