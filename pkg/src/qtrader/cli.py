"""Command-line pipeline: ingest -> pretrain -> train -> backtest -> report.

Every stage reads the same INI config, writes its artifacts into the
configured run directory, and stores the fully resolved configuration
next to them. Stages refuse to run when a prerequisite artifact is
missing and name the command that produces it.

Exit codes: 0 success, 1 usage or internal error, 2 bad input data or
configuration, 3 numeric failure (non-finite loss, portfolio ruin).
"""

import argparse
import csv
import json
import sys
from datetime import date
from pathlib import Path

import numpy as np

from . import backtest as bt
from .actionspace import FeasibilityContext, describe_feasibility
from .checkpoint import load_arrays, save_arrays
from .config import RunConfig, load_config, resolved_text
from .environment import episode_config
from .errors import DataError, NumericError, QTraderError, ValidationError
from .marketdata import AlignedMarket, align_series, load_series, write_indicator_csv
from .qnet import Dims, load_network
from .trainer import Trainer

ENCODER_KEYS = ("enc.W", "enc.U", "enc.b", "enc.Wp", "enc.bp")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg: RunConfig) -> None:
    (_out_dir(cfg) / "resolved.ini").write_text(resolved_text(cfg), encoding="utf-8")


def _dataset_path(cfg: RunConfig) -> Path:
    return _out_dir(cfg) / "dataset.qtc"


def _load_market(cfg: RunConfig) -> AlignedMarket:
    path = _dataset_path(cfg)
    if not path.exists():
        raise DataError(f"no ingested dataset at {path}; run 'qtrader ingest' first")
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "dataset":
        raise DataError(f"{path}: not a dataset cache (kind={meta.get('kind')!r})")
    return AlignedMarket(
        assets=list(meta["assets"]),
        dates=[date.fromisoformat(d) for d in meta["dates"]],
        closes=arrays["closes"],
        indicators=arrays["indicators"],
    )


def _year_bounds(market: AlignedMarket, cfg: RunConfig):
    """Resolve train/test year settings to date-index slices."""
    years = sorted({d.year for d in market.dates})
    if len(years) < 2:
        raise DataError(f"dataset spans only {years}; need at least two calendar years")
    train_y0 = cfg.train_start_year if cfg.train_start_year is not None else years[0]
    train_y1 = cfg.train_end_year if cfg.train_end_year is not None else years[-2]
    test_y0 = cfg.test_start_year if cfg.test_start_year is not None else train_y1 + 1
    test_y1 = cfg.test_end_year if cfg.test_end_year is not None else test_y0
    for y in (train_y0, train_y1, test_y0, test_y1):
        if y not in years:
            raise DataError(f"year {y} not present in dataset (have {years[0]}..{years[-1]})")
    if train_y0 > train_y1 or test_y0 > test_y1 or train_y1 >= test_y0:
        raise DataError(
            f"year split must satisfy train {train_y0}..{train_y1} before "
            f"test {test_y0}..{test_y1}"
        )

    def first_idx(year):
        return next(i for i, d in enumerate(market.dates) if d.year == year)

    def last_idx(year):
        return max(i for i, d in enumerate(market.dates) if d.year == year)

    return (first_idx(train_y0), last_idx(train_y1), first_idx(test_y0), last_idx(test_y1))


def _dims(cfg: RunConfig, n_assets: int) -> Dims:
    return Dims(n_assets=n_assets, window=cfg.window, hidden=cfg.hidden,
                latent=cfg.latent, h1=cfg.h1, h2=cfg.h2)


def _make_trainer(cfg: RunConfig, market: AlignedMarket) -> Trainer:
    train_start, train_end, _, _ = _year_bounds(market, cfg)
    return Trainer(market, _dims(cfg, market.n_assets), cfg.settings, cfg.trade,
                   train_start=train_start, train_end=train_end, seed=cfg.seed)


# -- commands -----------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> int:
    if not cfg.assets:
        raise ValidationError("config data.assets is empty; nothing to ingest")
    out = _out_dir(cfg)
    _write_resolved(cfg)
    series = [load_series(path, schema=cfg.schema, name=name) for name, path in cfg.assets]
    market = align_series(series)
    save_arrays(
        _dataset_path(cfg),
        {"closes": market.closes, "indicators": market.indicators},
        {"kind": "dataset", "assets": market.assets,
         "dates": [d.isoformat() for d in market.dates]},
    )
    for name in market.assets:
        write_indicator_csv(market, name, out / f"indicators_{name}.csv")
    report = {
        "assets": market.assets,
        "n_dates": market.n_dates,
        "first_date": market.dates[0].isoformat(),
        "last_date": market.dates[-1].isoformat(),
        "dropped_dates": {k: [d.isoformat() for d in v]
                          for k, v in market.dropped_dates.items()},
        "quality_flags": [[name, d.isoformat(), flag]
                          for name, d, flag in market.quality_flags],
    }
    (out / "ingest_report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"ingested {market.n_assets} assets, {market.n_dates} aligned dates "
          f"({report['first_date']} .. {report['last_date']})")
    for name, gone in market.dropped_dates.items():
        if gone:
            print(f"  {name}: dropped {len(gone)} dates missing elsewhere")
    if market.quality_flags:
        print(f"  {len(market.quality_flags)} quality flags (see ingest_report.json)")
    print(f"dataset cache: {_dataset_path(cfg)}")
    return 0


def cmd_pretrain(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _write_resolved(cfg)
    market = _load_market(cfg)
    trainer = _make_trainer(cfg, market)
    history = trainer.pretrain_encoder(
        epochs=cfg.pretrain_epochs, lr=cfg.pretrain_learning_rate,
        batch_size=cfg.pretrain_batch_size,
    )
    encoder_path = out / "encoder.qtc"
    save_arrays(encoder_path,
                {k: trainer.online.params[k] for k in ENCODER_KEYS},
                {"kind": "encoder", **trainer.dims.to_meta()})
    with open(out / "pretrain_loss.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(history):
            writer.writerow([i, repr(float(loss))])
    print(f"pretrained encoder for {cfg.pretrain_epochs} epochs: "
          f"loss {history[0]:.3e} -> {history[-1]:.3e}")
    print(f"encoder checkpoint: {encoder_path}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _write_resolved(cfg)
    market = _load_market(cfg)
    trainer = _make_trainer(cfg, market)
    encoder_path = out / "encoder.qtc"
    if encoder_path.exists():
        trainer.load_encoder(encoder_path)
        print(f"loaded pretrained encoder from {encoder_path}")
    else:
        print("no pretrained encoder found; starting from random encoder weights")

    every = max(1, cfg.settings.epochs // 10)

    def progress(record):
        if record.epoch % every == 0 or record.epoch == cfg.settings.epochs - 1:
            print(f"  epoch {record.epoch + 1}/{cfg.settings.epochs} "
                  f"year={record.episode_year} loss={record.loss_mean:.3e} "
                  f"return={record.episode_return:+.4f} eps={record.epsilon:.2f}")

    ckpt_dir = None
    if cfg.checkpoint_every > 0:
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
    trainer.run(log_path=out / "training_log.csv", checkpoint_dir=ckpt_dir,
                checkpoint_every=cfg.checkpoint_every, progress=progress)
    model_path = trainer.save(out, "model")
    print(f"model checkpoint: {model_path}")
    print(f"training log: {out / 'training_log.csv'}")
    return 0


def _mean_random_summary(summaries: list) -> dict:
    """Average the numeric metrics of per-seed random runs."""
    merged = dict(summaries[0])
    merged["strategy"] = "random"
    merged["seeds"] = len(summaries)
    for key in ("initial_value", "final_value", "cumulative_return_pct",
                "average_turnover_pct", "phase_changes_executed",
                "phase_changes_intended", "infeasible_intended", "infeasible_executed"):
        merged[key] = float(np.mean([s[key] for s in summaries]))
    sharpes = [s["sharpe_ratio"] for s in summaries]
    merged["sharpe_ratio"] = (float(np.mean(sharpes))
                              if all(v is not None for v in sharpes) else None)
    return merged


def _build_strategies(cfg: RunConfig, out: Path):
    """Instantiate configured strategies; loads the model only if needed."""
    built = []
    net = None
    for name in cfg.strategies:
        if name in ("dqn", "dqn_unmapped"):
            if net is None:
                model_path = out / "model.qtc"
                if not model_path.exists():
                    raise DataError(f"no model at {model_path}; run 'qtrader train' first")
                net = load_network(model_path)
            built.append(bt.DQNStrategy(net, with_mapping=(name == "dqn")))
        elif name == "buy_and_hold":
            built.append(bt.BuyAndHold())
        elif name == "momentum":
            built.append(bt.Momentum())
        elif name == "reversion":
            built.append(bt.Reversion())
        elif name == "random":
            built.append(None)  # handled as a seed sweep
        else:
            raise ValidationError(f"unknown strategy {name!r}")
    return built, net


def cmd_backtest(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _write_resolved(cfg)
    market = _load_market(cfg)
    _, _, test_start, test_end = _year_bounds(market, cfg)
    test_cfg = episode_config(cfg.trade, test_start, test_end, cfg.window)
    bdir = out / "backtest"
    bdir.mkdir(exist_ok=True)

    strategies, _ = _build_strategies(cfg, out)
    summaries = []
    for name, strat in zip(cfg.strategies, strategies):
        if name == "random":
            runs = bt.random_baseline(market, test_cfg, n_seeds=cfg.random_seeds)
            bt.write_series_csv(runs[0], bdir / "series_random_seed0.csv")
            summary = _mean_random_summary([bt.summarize(r) for r in runs])
        else:
            result = bt.run_backtest(market, strat, test_cfg)
            bt.write_series_csv(result, bdir / f"series_{name}.csv")
            summary = bt.summarize(result)
        with open(bdir / f"summary_{name}.json", "w", encoding="utf-8") as handle:
            json.dump(summary, handle, sort_keys=True, indent=2)
            handle.write("\n")
        summaries.append(summary)
        sr = summary["sharpe_ratio"]
        print(f"  {name:<14} CR {summary['cumulative_return_pct']:+8.2f}%  "
              f"SR {sr if sr is None else format(sr, '+6.2f')}  "
              f"AT {summary['average_turnover_pct']:6.3f}%")
    bt.write_comparison_csv(summaries, bdir / "comparison.csv")
    print(f"comparison table: {bdir / 'comparison.csv'}")
    return 0


def cmd_report(run_dir: str) -> int:
    bdir = Path(run_dir) / "backtest"
    if not bdir.is_dir():
        raise DataError(f"no backtest results under {run_dir}; run 'qtrader backtest' first")
    summaries = []
    for path in sorted(bdir.glob("summary_*.json")):
        with open(path, encoding="utf-8") as handle:
            summaries.append(json.load(handle))
    if not summaries:
        raise DataError(f"no summary files in {bdir}; run 'qtrader backtest' first")
    header = f"{'strategy':<14} {'final value':>14} {'CR %':>9} {'SR':>7} {'AT %':>7} {'flips':>6}"
    print(header)
    print("-" * len(header))
    for s in summaries:
        sr = "n/a" if s["sharpe_ratio"] is None else f"{s['sharpe_ratio']:+.2f}"
        print(f"{s['strategy']:<14} {s['final_value']:>14,.0f} "
              f"{s['cumulative_return_pct']:>+9.2f} {sr:>7} "
              f"{s['average_turnover_pct']:>7.3f} {s['phase_changes_executed']:>6.0f}")
    print(f"\nperiod: {summaries[0]['start_date']} .. {summaries[0]['end_date']} "
          f"({summaries[0]['decisions']} decisions)")
    return 0


def cmd_actions(args) -> int:
    try:
        weights = np.array([float(w) for w in args.weights.split(",")])
    except ValueError:
        raise ValidationError(f"--weights must be comma-separated numbers, got {args.weights!r}")
    ctx = FeasibilityContext(weights=weights, value=args.value,
                             trading_size=args.size,
                             sell_cost=args.sell_cost, buy_cost=args.buy_cost)
    print(describe_feasibility(ctx))
    return 0


# -- wiring ------------------------------------------------------------------


def _add_config_options(sub):
    sub.add_argument("--config", required=True, help="INI run configuration")
    sub.add_argument("--seed", type=int, default=None, help="override run.seed")
    sub.add_argument("--out", default=None, help="override run.out_dir")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="SECTION.KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qtrader",
        description="Deep Q-learning portfolio trading pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (
        ("ingest", "load, validate and align asset CSVs into a dataset cache"),
        ("pretrain", "autoencoder-pretrain the feature encoder"),
        ("train", "train the action-value network on the training years"),
        ("backtest", "evaluate strategies on the test years"),
    ):
        _add_config_options(sub.add_parser(name, help=text))

    rep = sub.add_parser("report", help="print the metrics table of a finished run")
    rep.add_argument("--run", required=True, help="run directory (the configured out_dir)")

    act = sub.add_parser("actions", help="inspect action feasibility for a portfolio")
    act.add_argument("--weights", required=True,
                     help="comma-separated cash-first weights, e.g. 0.25,0.25,0.5")
    act.add_argument("--value", type=float, required=True, help="portfolio value")
    act.add_argument("--size", type=float, default=10_000.0, help="cash per trade")
    act.add_argument("--sell-cost", type=float, default=0.0025)
    act.add_argument("--buy-cost", type=float, default=0.0025)
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out is not None:
        overrides.append(f"run.out_dir={Path(args.out).resolve()}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "report":
            return cmd_report(args.run)
        if args.command == "actions":
            return cmd_actions(args)
        cfg = _config_from_args(args)
        handler = {
            "ingest": cmd_ingest,
            "pretrain": cmd_pretrain,
            "train": cmd_train,
            "backtest": cmd_backtest,
        }[args.command]
        return handler(cfg)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except QTraderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
