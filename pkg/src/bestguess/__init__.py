"""Best-Guess reduction toolkit: multi-item auction mechanisms, exact LP
revenue oracles, Monte Carlo estimation and bound-verification suites."""

from .mechanisms import (
    BestGuess,
    BetaBundling,
    DeterministicBestGuess,
    SecondPriceBundling,
    VickreyAuction,
    make_mechanism,
)
from .valuedist import Dist1D, JointValuation, ProductDist

__version__ = "0.1.0"

__all__ = [
    "BestGuess",
    "BetaBundling",
    "DeterministicBestGuess",
    "SecondPriceBundling",
    "VickreyAuction",
    "make_mechanism",
    "Dist1D",
    "JointValuation",
    "ProductDist",
]
