"""Portfolio dynamics: wealth transitions, trade execution, rewards.

The portfolio is a simplex weight vector over cash (component 0) and I
assets, plus a scalar total value. One period runs

    pre-trade (w', P') --action--> post-trade (w, P) --market--> next pre-trade

Trades move a fixed cash amount per selected asset and pay proportional
costs out of the cash component. The per-step reward compares the value
the executed trade produced against the value the untouched portfolio
would have reached over the same bar, so holding everything is exactly
reward 0.

``MarketEnvironment`` binds these dynamics to a date slice of an
:class:`~qtrader.marketdata.AlignedMarket`. Decisions happen at date
indices t in [max(start, window), end - 1]; the step at end - 1 is
terminal and carries the portfolio to its final value at ``end``.
"""

from dataclasses import dataclass

import numpy as np

from .actionspace import FeasibilityContext, decode, encode, feasible_indices, is_feasible
from .errors import ContractViolation, EpisodeComplete, RuinError, ValidationError
from .marketdata import AlignedMarket

__all__ = [
    "phi",
    "market_transition",
    "apply_action",
    "reward",
    "uniform_weights",
    "PortfolioState",
    "StepOutcome",
    "SimulatedBranch",
    "TradeParams",
    "EpisodeConfig",
    "episode_config",
    "MarketEnvironment",
]


def phi(rates: np.ndarray) -> np.ndarray:
    """Growth-factor vector (1, 1+e_1, ..., 1+e_I) for rate vector e."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 1:
        raise ValidationError(f"rates must be 1-D, got shape {rates.shape}")
    return np.concatenate(([1.0], 1.0 + rates))


def market_transition(weights: np.ndarray, value: float, rates: np.ndarray):
    """Advance a portfolio one bar under per-asset close-change rates.

    Returns (next_weights, next_value): each component grows by its
    factor, cash by 1, and the weights are renormalized to the simplex.
    """
    growth = phi(rates)
    if growth.shape != weights.shape:
        raise ValidationError(f"rate/weight length mismatch: {growth.shape} vs {weights.shape}")
    if np.any(growth[1:] <= 0.0):
        raise RuinError(f"asset price collapsed to zero or below: rates={rates}")
    scaled = weights * growth
    total = scaled.sum()
    return scaled / total, value * total


def apply_action(weights: np.ndarray, value: float, action: np.ndarray,
                 trading_size: float, sell_cost: float, buy_cost: float,
                 *, validate: bool = True):
    """Execute a trade vector on a pre-trade portfolio.

    Each sell moves ``trading_size`` cash worth of that asset into cash
    (net of the sell cost); each buy moves the same amount from cash into
    the asset (plus the buy cost). Costs shrink total value, after which
    weights are renormalized. Returns (post_weights, post_value,
    cost_fraction).

    With validate=True an infeasible action raises ValidationError; the
    caller is expected to have mapped it first.
    """
    action = np.asarray(action)
    if validate:
        ctx = FeasibilityContext(
            weights=weights, value=value, trading_size=trading_size,
            sell_cost=sell_cost, buy_cost=buy_cost,
        )
        if not is_feasible(ctx, action):
            raise ValidationError(f"infeasible action {action.tolist()} for weights {weights.tolist()}")

    frac = trading_size / value
    n_sells = int(np.count_nonzero(action == -1))
    n_buys = int(np.count_nonzero(action == 1))
    if n_sells == 0 and n_buys == 0:
        # No renormalization on a pure hold, so its reward is exactly 0.
        return weights.astype(np.float64, copy=True), float(value), 0.0

    hatted = weights.astype(np.float64, copy=True)
    hatted[1:][action == -1] -= frac
    hatted[1:][action == 1] += frac
    hatted[0] += frac * ((1.0 - sell_cost) * n_sells - (1.0 + buy_cost) * n_buys)

    # Feasible trades keep every entry >= 0 up to rounding noise.
    rounding = -1e-12 * max(1.0, abs(hatted[0]))
    if np.any(hatted < rounding):
        raise ValidationError(f"trade drove a weight negative: {hatted.tolist()}")
    np.clip(hatted, 0.0, None, out=hatted)

    cost_fraction = frac * (sell_cost * n_sells + buy_cost * n_buys)
    post_value = value * (1.0 - cost_fraction)
    return hatted / hatted.sum(), post_value, cost_fraction


def reward(pre_weights: np.ndarray, pre_value: float,
           post_weights: np.ndarray, post_value: float,
           rates: np.ndarray) -> float:
    """Relative value gain of the executed trade over not trading.

    Both portfolios are advanced one bar under ``rates``; the reward is
    (traded_value - untraded_value) / untraded_value.
    """
    growth = phi(rates)
    traded = post_value * float(post_weights @ growth)
    untraded = pre_value * float(pre_weights @ growth)
    return (traded - untraded) / untraded


def uniform_weights(n_assets: int) -> np.ndarray:
    """Equal weight on cash and every asset: 1/(I+1) each."""
    if n_assets < 1:
        raise ValidationError(f"need at least one asset, got {n_assets}")
    return np.full(n_assets + 1, 1.0 / (n_assets + 1))


@dataclass
class PortfolioState:
    """Pre-trade portfolio at decision index t."""

    t: int
    weights: np.ndarray
    value: float


@dataclass
class StepOutcome:
    """Result of executing one decision."""

    t: int
    action: np.ndarray
    action_index: int
    reward: float
    cost_fraction: float
    post_weights: np.ndarray
    post_value: float
    next_state: PortfolioState
    terminal: bool


@dataclass
class SimulatedBranch:
    """Hypothetical outcome of one feasible action, without advancing."""

    action_index: int
    action: np.ndarray
    reward: float
    next_weights: np.ndarray
    next_value: float


@dataclass(frozen=True)
class TradeParams:
    """Capital and cost settings shared by every episode of a run."""

    initial_capital: float = 1_000_000.0
    trading_size: float = 10_000.0
    sell_cost: float = 0.0025
    buy_cost: float = 0.0025


def episode_config(trade: TradeParams, start: int, end: int, window: int) -> "EpisodeConfig":
    """EpisodeConfig for one date slice under shared trade settings."""
    return EpisodeConfig(
        start=start, end=end, window=window,
        initial_capital=trade.initial_capital, trading_size=trade.trading_size,
        sell_cost=trade.sell_cost, buy_cost=trade.buy_cost,
    )


@dataclass(frozen=True)
class EpisodeConfig:
    """Date slice and trading parameters for one episode.

    start/end are date indices into the aligned dataset (end inclusive,
    final decision at end - 1). window is the feature lookback n.
    """

    start: int
    end: int
    window: int
    initial_capital: float
    trading_size: float
    sell_cost: float
    buy_cost: float

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError(f"window must be >= 1, got {self.window}")
        if self.initial_capital <= 0:
            raise ValidationError(f"initial capital must be positive, got {self.initial_capital}")
        if not 0 < self.trading_size < self.initial_capital:
            raise ValidationError(
                f"trading size {self.trading_size} out of range (0, {self.initial_capital})"
            )
        first = max(self.start, self.window)
        if first >= self.end:
            raise ValidationError(
                f"no decisions in episode: first usable index {first} >= end {self.end}"
            )


class MarketEnvironment:
    """Steps a portfolio through a date slice of an aligned dataset.

    reset() places an equally weighted portfolio at the first decision
    index; step() executes one validated action and advances a bar;
    simulate_all() evaluates every currently feasible action without
    advancing, for replay construction.
    """

    def __init__(self, market: AlignedMarket, config: EpisodeConfig):
        if config.end >= market.n_dates:
            raise ValidationError(
                f"episode end {config.end} beyond dataset ({market.n_dates} dates)"
            )
        self.market = market
        self.config = config
        self.first_t = max(config.start, config.window)
        self._state: PortfolioState | None = None

    @property
    def n_assets(self) -> int:
        return self.market.n_assets

    @property
    def state(self) -> PortfolioState:
        if self._state is None:
            raise ContractViolation("environment not reset")
        return self._state

    @property
    def done(self) -> bool:
        return self.state.t >= self.config.end

    def reset(self) -> PortfolioState:
        self._state = PortfolioState(
            t=self.first_t,
            weights=uniform_weights(self.n_assets),
            value=self.config.initial_capital,
        )
        return self._state

    def features(self, state: PortfolioState | None = None) -> np.ndarray:
        """Lookback feature tensor (I, n, 5) for the given (default current) state."""
        s = state if state is not None else self.state
        return self.market.window(s.t, self.config.window)

    def feasibility_context(self, state: PortfolioState | None = None) -> FeasibilityContext:
        s = state if state is not None else self.state
        floor = self.n_assets * self.config.trading_size
        if s.value <= floor:
            raise RuinError(
                f"portfolio value {s.value:.2f} at t={s.t} cannot support "
                f"trades of {self.config.trading_size:.2f} across {self.n_assets} assets"
            )
        return FeasibilityContext(
            weights=s.weights, value=s.value,
            trading_size=self.config.trading_size,
            sell_cost=self.config.sell_cost, buy_cost=self.config.buy_cost,
        )

    def feasible_action_indices(self) -> list:
        return feasible_indices(self.feasibility_context())

    def _branch(self, state: PortfolioState, action: np.ndarray):
        """Post-trade then one market bar; shared by step and simulate_all."""
        post_w, post_v, cost = apply_action(
            state.weights, state.value, action,
            self.config.trading_size, self.config.sell_cost, self.config.buy_cost,
            validate=False,
        )
        rates = self.market.close_change(state.t + 1)
        next_w, next_v = market_transition(post_w, post_v, rates)
        r = reward(state.weights, state.value, post_w, post_v, rates)
        return post_w, post_v, cost, next_w, next_v, r

    def step(self, action: np.ndarray) -> StepOutcome:
        s = self.state
        if self.done:
            raise EpisodeComplete(f"episode already finished at t={s.t}")
        action = np.asarray(action)
        ctx = self.feasibility_context(s)
        if not is_feasible(ctx, action):
            raise ContractViolation(
                f"infeasible action {action.tolist()} at t={s.t}; map it before stepping"
            )
        post_w, post_v, cost, next_w, next_v, r = self._branch(s, action)
        self._state = PortfolioState(t=s.t + 1, weights=next_w, value=next_v)
        return StepOutcome(
            t=s.t, action=action, action_index=encode(action), reward=r,
            cost_fraction=cost, post_weights=post_w, post_value=post_v,
            next_state=self._state, terminal=self.done,
        )

    def simulate_all(self, state: PortfolioState | None = None) -> list:
        """Hypothetical outcome of every feasible action at the given state.

        Returns SimulatedBranch entries in action-index order. The
        environment does not advance.
        """
        s = state if state is not None else self.state
        if s.t >= self.config.end:
            raise EpisodeComplete(f"no decision at terminal index t={s.t}")
        ctx = self.feasibility_context(s)
        branches = []
        for idx in feasible_indices(ctx):
            action = decode(idx, self.n_assets)
            _, _, _, next_w, next_v, r = self._branch(s, action)
            branches.append(SimulatedBranch(
                action_index=idx, action=action, reward=r,
                next_weights=next_w, next_value=next_v,
            ))
        return branches
