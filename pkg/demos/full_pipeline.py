"""Drive the whole command-line pipeline inside one script.

Generates two years of OHLCV CSVs for two synthetic assets, writes a
small run configuration, then calls the CLI entry point for each stage:

    ingest -> pretrain -> train -> backtest -> report

Everything lands in a scratch directory that is printed at the end, so
you can poke at the artifacts (dataset cache, checkpoints, logs,
per-strategy CSV and JSON files) afterwards.

Run: python3 demos/full_pipeline.py
"""

import csv
import tempfile
from pathlib import Path

from common import make_dates, walk_series
from qtrader.cli import main

CONFIG = """\
[data]
assets =
    alpha: alpha.csv
    beta: beta.csv

[features]
window = 5

[model]
hidden = 16
latent = 8
h1 = 32
h2 = 16

[pretrain]
epochs = 5
learning_rate = 1e-3
batch_size = 16

[training]
epochs = 10
batch_size = 16
learning_rate = 1e-4
replay_capacity = 500
train_end_year = 2019

[backtest]
test_start_year = 2020
random_seeds = 5
strategies = dqn, dqn_unmapped, buy_and_hold, random, momentum, reversion

[run]
seed = 11
out_dir = out
"""


def dump_csv(path, series):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["date", "open", "high", "low", "close", "volume"])
        for k, day in enumerate(series.dates):
            writer.writerow([day.isoformat(), series.open[k], series.high[k],
                             series.low[k], series.close[k], series.volume[k]])


def run(argv):
    print(f"$ qtrader {' '.join(argv)}")
    code = main(argv)
    if code != 0:
        raise SystemExit(f"stage failed with exit code {code}")
    print()


def main_demo():
    root = Path(tempfile.mkdtemp(prefix="qtrader_demo_"))
    dates = make_dates((2019, 2020), 50)
    dump_csv(root / "alpha.csv", walk_series("alpha", dates, seed=21))
    dump_csv(root / "beta.csv", walk_series("beta", dates, seed=22))
    (root / "run.ini").write_text(CONFIG, encoding="utf-8")

    cfg = ["--config", str(root / "run.ini")]
    run(["ingest", *cfg])
    run(["pretrain", *cfg])
    run(["train", *cfg])
    run(["backtest", *cfg])
    run(["report", "--run", str(root / "out")])

    print("artifacts:")
    for path in sorted((root / "out").rglob("*")):
        if path.is_file():
            print(f"  {path.relative_to(root)}")
    print(f"\nscratch directory kept at {root}")


if __name__ == "__main__":
    main_demo()
