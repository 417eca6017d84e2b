"""Robust exponential-utility maximisation on finite bid-ask scenario trees.

The friction market is lifted to a frictionless one in which an adversary
picks the trading price inside each bid-ask box; the robust value is then
a single convex program, its multipliers give the worst-case consistent
price system, and indifference and superhedging prices follow.
"""

__version__ = "0.1.0"

from .errors import ArbitrageError, ModelError, RobustUtilityError, ToleranceError  # noqa: E402
from .market import MarketSpec, check_na2, dump_market, load_market  # noqa: E402

__all__ = [
    "ArbitrageError",
    "MarketSpec",
    "ModelError",
    "RobustUtilityError",
    "ToleranceError",
    "__version__",
    "check_na2",
    "dump_market",
    "load_market",
]
