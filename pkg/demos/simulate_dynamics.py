"""Walk a portfolio through a synthetic market, one decision at a time.

Shows the two halves of the daily transition separately:

  1. apply_action: move a fixed cash slice per traded asset, pay
     proportional costs out of cash, renormalise the weights.
  2. market close-to-close returns then drift the weights and value.

The reward of a step is the relative edge the trade earned over
holding still through the same market move.

Run: python3 demos/simulate_dynamics.py
"""

import numpy as np

from common import make_dates, trend_series, walk_series
from qtrader.environment import (MarketEnvironment, TradeParams, apply_action,
                                 episode_config, market_transition)
from qtrader.marketdata import align_series


def one_step_by_hand():
    print("-- one transition, by hand --")
    w = np.array([0.5, 0.25, 0.25])
    value = 1_000_000.0
    print(f"start:  weights {w}  value {value:,.0f}")

    action = np.array([1, -1])  # buy asset1, sell asset2
    w, value, cost = apply_action(w, value, action, 10_000.0, 0.0025, 0.0025)
    print(f"trade {action.tolist()}: weights {np.round(w, 6)}  "
          f"value {value:,.2f}  cost fraction {cost:.2e}")

    rates = np.array([0.02, -0.01])
    w, value = market_transition(w, value, rates)
    print(f"market {rates.tolist()}: weights {np.round(w, 6)}  value {value:,.2f}")
    print()


def episode_walk():
    print("-- a full episode on a planted market --")
    dates = make_dates((2020,), 60)
    riser = trend_series("riser", 0.02, dates)
    noise = walk_series("noise", dates, seed=5)
    market = align_series([riser, noise])

    trade = TradeParams(trading_size=50_000.0)
    env = MarketEnvironment(market, episode_config(trade, 0, 40, window=10))
    state = env.reset()
    print(f"first decision at t={state.t}, "
          f"weights {state.weights}, value {state.value:,.0f}")

    # ride the riser, ignore the noise asset
    policy = np.array([1, 0])
    hold = np.array([0, 0])
    total_cost = 0.0
    while not env.done:
        ctx = env.feasibility_context()
        cash = ctx.weights[0] * ctx.value
        chosen = policy if cash >= ctx.trading_size else hold
        out = env.step(chosen)
        total_cost += out.cost_fraction * out.post_value
        if out.t % 10 == 0 or out.terminal:
            print(f"  t={out.t:2d} act={out.action.tolist()} "
                  f"reward={out.reward:+.5f} value={out.next_state.value:,.2f}")

    final = env.state.value
    print(f"terminal value {final:,.2f} "
          f"({(final / trade.initial_capital - 1) * 100:+.1f}%), "
          f"costs paid ~{total_cost:,.0f}")
    print()


def branch_preview():
    print("-- previewing every feasible branch at one state --")
    dates = make_dates((2020,), 30)
    market = align_series([trend_series("up", 0.015, dates),
                           trend_series("down", -0.015, dates)])
    env = MarketEnvironment(
        market, episode_config(TradeParams(), 0, 20, window=10))
    env.reset()
    for branch in env.simulate_all():
        print(f"  action {branch.action.tolist()}  reward {branch.reward:+.6f}")
    print("the best branch buys the rising asset and sells the falling one")


if __name__ == "__main__":
    one_step_by_hand()
    episode_walk()
    branch_preview()
