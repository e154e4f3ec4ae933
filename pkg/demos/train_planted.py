"""Train a Q-network on a market with a planted signal, then backtest it.

One asset drifts up 3% a day, the other down; a policy that learns
anything useful should end up buying the riser nearly every step. The
run trains for 200 epochs on the first two years and tests on the held
out third year against hold, momentum and random baselines.

Takes about 40 seconds. Run: python3 demos/train_planted.py
"""

import numpy as np

from common import planted_market
from qtrader.backtest import (BuyAndHold, DQNStrategy, Momentum, cumulative_return,
                              random_baseline, run_backtest, summarize)
from qtrader.environment import TradeParams, episode_config
from qtrader.qnet import Dims
from qtrader.trainer import Trainer, TrainerSettings

SEED = 7


def main():
    market = planted_market(daily=0.03)
    trade = TradeParams(trading_size=50_000.0)
    dims = Dims(n_assets=2, window=10, hidden=16, latent=8, h1=32, h2=16)
    settings = TrainerSettings(epochs=200, batch_size=16, gamma=0.5,
                               learning_rate=0.7, replay_capacity=2000,
                               recency_bias=0.3)

    trainer = Trainer(market, dims, settings, trade,
                      train_start=0, train_end=99, seed=SEED)

    print("pretraining the encoder on training windows...")
    losses = trainer.pretrain_encoder(epochs=30, lr=1e-3, batch_size=16)
    print(f"  autoencoder loss {losses[0]:.4f} -> {losses[-1]:.4f}")

    print("training 200 epochs (one sampled yearly episode each)...")

    def report(rec):
        if rec.epoch % 40 == 0:
            print(f"  epoch {rec.epoch:3d}  year {rec.episode_year}  "
                  f"loss {rec.loss_mean:9.3e}  return {rec.episode_return:+.4f}")

    result = trainer.run(progress=report)
    print(f"  finished {len(result.records)} epochs")

    test = episode_config(trade, 100, market.n_dates - 1, dims.window)
    dqn = run_backtest(market, DQNStrategy(trainer.online), test)

    wants = dqn.intended[:, 0] == 1
    gets = dqn.executed[:, 0] == 1
    print(f"\ntest year: policy wants to buy the riser on "
          f"{wants.mean() * 100:.0f}% of {wants.size} decisions "
          f"(cash limits let {gets.sum()} of those through)")

    rows = [summarize(dqn),
            summarize(run_backtest(market, BuyAndHold(), test)),
            summarize(run_backtest(market, Momentum(), test))]
    rand_crs = [cumulative_return(r.values) for r in random_baseline(market, test)]

    print(f"\n{'strategy':<14} {'cumulative %':>13} {'sharpe':>9} {'turnover %':>11}")
    for row in rows:
        sharpe = row["sharpe_ratio"]
        print(f"{row['strategy']:<14} {row['cumulative_return_pct']:>13.1f} "
              f"{sharpe if sharpe is None else format(sharpe, '9.2f')} "
              f"{row['average_turnover_pct']:>11.2f}")
    print(f"{'random (mean)':<14} {np.mean(rand_crs):>13.1f}   (30 seeds)")


if __name__ == "__main__":
    main()
