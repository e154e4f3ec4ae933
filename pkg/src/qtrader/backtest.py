"""Out-of-sample evaluation: strategies, trade logs, performance metrics.

A backtest walks one date slice with a strategy that proposes an
intended action each day and repairs it to something executable. The
result keeps the full trade log (intended and executed vectors, intended
feasibility, values before and after each trade) so the metrics and the
policy-vs-mapping comparison can be computed after the fact.

Reported value series: one row per decision date holding the post-trade
portfolio value, plus a final row with the value reached on the last
date of the slice (where nothing is traded). Metrics derive from that
series; day returns are ratios of consecutive entries, so compounding
them reproduces the endpoint ratio exactly.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .actionspace import decode, feasible_indices, is_feasible, map_action
from .environment import EpisodeConfig, MarketEnvironment
from .errors import NumericError, ValidationError
from .marketdata import AlignedMarket
from .qnet import QNetwork

__all__ = [
    "Strategy",
    "BuyAndHold",
    "RandomStrategy",
    "Momentum",
    "Reversion",
    "DQNStrategy",
    "BacktestResult",
    "run_backtest",
    "random_baseline",
    "cumulative_return",
    "period_returns",
    "sharpe_ratio",
    "average_turnover",
    "phase_change_count",
    "summarize",
    "write_series_csv",
    "write_summary_json",
    "write_comparison_csv",
]

RISK_FREE_RATE = 0.0001
PERIODS_PER_YEAR = 252


# -- metrics ------------------------------------------------------------------


def cumulative_return(values: np.ndarray) -> float:
    """Percentage gain of the value series endpoint over its start."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValidationError("need at least two values for a return")
    return (values[-1] - values[0]) / values[0] * 100.0


def period_returns(values: np.ndarray) -> np.ndarray:
    """Per-period simple returns of consecutive series entries."""
    values = np.asarray(values, dtype=np.float64)
    if np.any(values <= 0):
        raise ValidationError("value series must stay positive")
    return np.diff(values) / values[:-1]


def sharpe_ratio(values: np.ndarray, *, risk_free: float = RISK_FREE_RATE,
                 periods_per_year: int = PERIODS_PER_YEAR) -> float:
    """Annualized mean excess day return over its sample standard deviation."""
    rho = period_returns(values)
    if rho.size < 2:
        raise NumericError("Sharpe ratio needs at least two day returns")
    excess = rho - risk_free
    sd = float(np.std(excess, ddof=1))
    # sd at rounding-noise scale would amplify into a meaningless statistic
    if sd <= 1e-12:
        raise NumericError("Sharpe ratio undefined: day returns have zero variance")
    return float(np.mean(excess)) / sd * np.sqrt(periods_per_year)


def average_turnover(trade_counts, pre_values, trading_size: float) -> float:
    """Mean one-way traded fraction of portfolio value, in percent.

    Each traded asset moves trading_size of value, so a day with k trades
    shifts k * trading_size / pre_value of the asset weights. The sum is
    halved to count round trips once.
    """
    trade_counts = np.asarray(trade_counts, dtype=np.float64)
    pre_values = np.asarray(pre_values, dtype=np.float64)
    if trade_counts.shape != pre_values.shape or trade_counts.size == 0:
        raise ValidationError("trade counts and pre-trade values must align and be non-empty")
    moved = trade_counts * trading_size / pre_values
    return float(moved.sum()) / (2.0 * trade_counts.size) * 100.0


def phase_change_count(actions: np.ndarray) -> int:
    """Direction flips per asset between successive non-hold actions, summed.

    actions is (t_f, I) of -1/0/+1; holds are skipped, so a buy followed
    days later by a sell still counts as one flip.
    """
    actions = np.asarray(actions)
    if actions.ndim != 2:
        raise ValidationError(f"actions must be 2-D, got shape {actions.shape}")
    flips = 0
    for i in range(actions.shape[1]):
        nonzero = actions[:, i][actions[:, i] != 0]
        flips += int(np.sum(nonzero[1:] * nonzero[:-1] < 0))
    return flips


# -- strategies ----------------------------------------------------------------


class Strategy:
    """Decision rule for one backtest; decide() returns (intended, executed)."""

    name = "strategy"

    def decide(self, env: MarketEnvironment):
        raise NotImplementedError


class BuyAndHold(Strategy):
    """Never trades; the initial equal-weight portfolio just rides the market."""

    name = "buy_and_hold"

    def decide(self, env):
        hold = np.zeros(env.n_assets, dtype=np.int64)
        return hold, hold


class RandomStrategy(Strategy):
    """Uniform pick among currently feasible actions."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def decide(self, env):
        idx = feasible_indices(env.feasibility_context())
        pick = decode(idx[int(self._rng.integers(len(idx)))], env.n_assets)
        return pick, pick


def _signal_action(env: MarketEnvironment, direction: int):
    """Trade with (direction=+1) or against (-1) today's close move, repaired.

    Unsellable sells become holds; buys are kept in order of signal
    strength while the cash condition allows, the rest become holds.
    """
    state = env.state
    rates = env.market.close_change(state.t)
    intended = np.sign(rates).astype(np.int64) * direction
    ctx = env.feasibility_context()

    executed = intended.copy()
    asset_value = ctx.weights[1:] * ctx.value
    executed[(executed == -1) & (asset_value < ctx.trading_size)] = 0

    buys = np.flatnonzero(executed == 1)
    if buys.size:
        strength = -direction * rates
        order = buys[np.lexsort((buys, strength[buys]))]
        executed[buys] = 0
        for i in order:
            trial = executed.copy()
            trial[i] = 1
            if is_feasible(ctx, trial):
                executed = trial
    return intended, executed


class Momentum(Strategy):
    """Buy today's risers, sell today's fallers."""

    name = "momentum"

    def decide(self, env):
        return _signal_action(env, +1)


class Reversion(Strategy):
    """Sell today's risers, buy today's fallers."""

    name = "reversion"

    def decide(self, env):
        return _signal_action(env, -1)


class DQNStrategy(Strategy):
    """Greedy policy of a trained network.

    with_mapping=True repairs an infeasible argmax with the structured
    feasibility mapping; with_mapping=False falls back to the highest-q
    feasible action instead, so the intended log shows the raw policy.
    """

    def __init__(self, net: QNetwork, with_mapping: bool = True):
        self.net = net
        self.with_mapping = with_mapping
        self.name = "dqn" if with_mapping else "dqn_unmapped"

    def decide(self, env):
        state = env.state
        q = self.net.q_values(env.features(), state.weights)
        intended = decode(int(np.argmax(q)), env.n_assets)
        ctx = env.feasibility_context()
        if self.with_mapping:
            executed = map_action(ctx, intended, q)
        elif is_feasible(ctx, intended):
            executed = intended
        else:
            idx = np.array(feasible_indices(ctx))
            executed = decode(int(idx[np.argmax(q[idx])]), env.n_assets)
        return intended, executed


# -- running -------------------------------------------------------------------


@dataclass
class BacktestResult:
    """Complete record of one strategy run over one date slice."""

    strategy: str
    dates: list
    values: np.ndarray
    rewards: np.ndarray
    intended: np.ndarray
    executed: np.ndarray
    intended_feasible: np.ndarray
    executed_feasible: np.ndarray
    pre_values: np.ndarray
    trade_counts: np.ndarray
    trading_size: float

    @property
    def n_decisions(self) -> int:
        return self.executed.shape[0]


def run_backtest(market: AlignedMarket, strategy: Strategy,
                 config: EpisodeConfig) -> BacktestResult:
    """Walk the slice under the strategy and collect the full trade log.

    Every executed action is validated by the environment; an infeasible
    one aborts the run, so strategies must repair their own proposals.
    """
    env = MarketEnvironment(market, config)
    env.reset()
    dates = []
    values = []
    rewards = []
    intended_rows = []
    executed_rows = []
    intended_ok = []
    executed_ok = []
    pre_values = []
    trade_counts = []
    while not env.done:
        state = env.state
        ctx = env.feasibility_context()
        intended, executed = strategy.decide(env)
        intended = np.asarray(intended, dtype=np.int64)
        executed = np.asarray(executed, dtype=np.int64)
        intended_ok.append(is_feasible(ctx, intended))
        executed_ok.append(is_feasible(ctx, executed))
        pre_values.append(state.value)
        outcome = env.step(executed)
        dates.append(market.dates[outcome.t])
        values.append(outcome.post_value)
        rewards.append(outcome.reward)
        intended_rows.append(intended)
        executed_rows.append(executed)
        trade_counts.append(int(np.count_nonzero(executed)))
    dates.append(market.dates[env.state.t])
    values.append(env.state.value)
    return BacktestResult(
        strategy=strategy.name,
        dates=dates,
        values=np.array(values),
        rewards=np.array(rewards),
        intended=np.stack(intended_rows),
        executed=np.stack(executed_rows),
        intended_feasible=np.array(intended_ok, dtype=bool),
        executed_feasible=np.array(executed_ok, dtype=bool),
        pre_values=np.array(pre_values),
        trade_counts=np.array(trade_counts, dtype=np.int64),
        trading_size=config.trading_size,
    )


def random_baseline(market: AlignedMarket, config: EpisodeConfig,
                    n_seeds: int = 30, first_seed: int = 0):
    """Run the uniform-random strategy across seeds; returns the result list."""
    return [
        run_backtest(market, RandomStrategy(seed=first_seed + k), config)
        for k in range(n_seeds)
    ]


# -- reporting ---------------------------------------------------------------


def summarize(result: BacktestResult) -> dict:
    """Metric summary of one run as a JSON-friendly dict."""
    try:
        sharpe = sharpe_ratio(result.values)
    except NumericError:
        sharpe = None
    return {
        "strategy": result.strategy,
        "start_date": result.dates[0].isoformat(),
        "end_date": result.dates[-1].isoformat(),
        "decisions": int(result.n_decisions),
        "initial_value": float(result.values[0]),
        "final_value": float(result.values[-1]),
        "cumulative_return_pct": cumulative_return(result.values),
        "sharpe_ratio": sharpe,
        "average_turnover_pct": average_turnover(result.trade_counts,
                                                 result.pre_values,
                                                 result.trading_size),
        "phase_changes_executed": phase_change_count(result.executed),
        "phase_changes_intended": phase_change_count(result.intended),
        "infeasible_intended": int(np.sum(~result.intended_feasible)),
        "infeasible_executed": int(np.sum(~result.executed_feasible)),
    }


def _action_str(action: np.ndarray) -> str:
    return ";".join(str(int(a)) for a in action)


def write_series_csv(result: BacktestResult, path) -> None:
    """Per-date series: date, post-trade value, reward, executed action."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", "value", "reward", "action_vector"])
        for k in range(result.n_decisions):
            writer.writerow([
                result.dates[k].isoformat(), repr(float(result.values[k])),
                repr(float(result.rewards[k])), _action_str(result.executed[k]),
            ])
        writer.writerow([result.dates[-1].isoformat(),
                         repr(float(result.values[-1])), "", ""])


def write_summary_json(result: BacktestResult, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(summarize(result), handle, sort_keys=True, indent=2)
        handle.write("\n")


def write_comparison_csv(summaries, path) -> None:
    """One metrics row per strategy summary, in the given order."""
    fields = ["strategy", "cumulative_return_pct", "sharpe_ratio",
              "average_turnover_pct", "phase_changes_executed",
              "phase_changes_intended", "infeasible_intended", "final_value"]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(fields)
        for summary in summaries:
            writer.writerow([summary[f] if summary[f] is not None else "" for f in fields])
