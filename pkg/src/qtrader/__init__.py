"""Deep Q-learning portfolio trading research engine.

Submodules: marketdata (ingestion and indicators), actionspace
(combinatorial trade vectors and feasibility mapping), environment
(wealth dynamics), qnet (numpy LSTM encoder + regressor with manual
gradients), trainer (replay-based Q-learning), backtest (strategies and
metrics), config/cli (INI-driven pipeline).
"""

from .actionspace import FeasibilityContext, all_actions, decode, encode, map_action
from .environment import EpisodeConfig, MarketEnvironment, TradeParams
from .errors import QTraderError
from .marketdata import AlignedMarket, align_series, compute_indicators, load_series
from .qnet import Dims, QNetwork
from .trainer import Trainer, TrainerSettings

__version__ = "0.1.0"

__all__ = [
    "FeasibilityContext", "all_actions", "decode", "encode", "map_action",
    "EpisodeConfig", "MarketEnvironment", "TradeParams",
    "QTraderError",
    "AlignedMarket", "align_series", "compute_indicators", "load_series",
    "Dims", "QNetwork",
    "Trainer", "TrainerSettings",
    "__version__",
]
