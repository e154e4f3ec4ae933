"""INI run configuration with strict key checking.

A run is described by one INI file; every key has a default, unknown
sections or keys are rejected rather than ignored, and ``--set
section.key=value`` overrides are applied on top. ``resolved_text``
serializes the effective configuration so each run can store exactly
what it used.

Asset CSV paths are resolved relative to the config file's directory.
Train/test splits are calendar years: unset year bounds default to
training on all but the last year of the data and testing on that last
year.
"""

import configparser
from dataclasses import dataclass
from pathlib import Path

from .environment import TradeParams
from .errors import ValidationError
from .trainer import TrainerSettings

__all__ = ["RunConfig", "load_config", "default_config_text", "KNOWN_STRATEGIES"]

KNOWN_STRATEGIES = ("dqn", "dqn_unmapped", "buy_and_hold", "random", "momentum", "reversion")

# section -> key -> default (as INI text; "" means unset)
DEFAULTS = {
    "data": {
        "assets": "",
        "date_column": "date",
        "open_column": "open",
        "high_column": "high",
        "low_column": "low",
        "close_column": "close",
        "volume_column": "volume",
    },
    "features": {
        "window": "20",
    },
    "model": {
        "hidden": "128",
        "latent": "20",
        "h1": "64",
        "h2": "32",
    },
    "pretrain": {
        "epochs": "100",
        "learning_rate": "1e-3",
        "batch_size": "32",
    },
    "training": {
        "epochs": "500",
        "batch_size": "32",
        "gamma": "0.9",
        "learning_rate": "1e-7",
        "replay_capacity": "2000",
        "recency_bias": "0.3",
        "epsilon_start": "1.0",
        "epsilon_end": "0.1",
        "epsilon_decay_fraction": "0.8",
        "encoder_frozen": "true",
        "train_start_year": "",
        "train_end_year": "",
        "checkpoint_every": "0",
    },
    "trading": {
        "initial_capital": "1000000",
        "trading_size": "10000",
        "sell_cost": "0.0025",
        "buy_cost": "0.0025",
    },
    "backtest": {
        "test_start_year": "",
        "test_end_year": "",
        "random_seeds": "30",
        "strategies": "dqn, buy_and_hold, random, momentum, reversion",
    },
    "run": {
        "seed": "0",
        "out_dir": "runs/default",
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Typed view of one resolved INI configuration."""

    assets: tuple
    schema: dict
    window: int
    hidden: int
    latent: int
    h1: int
    h2: int
    pretrain_epochs: int
    pretrain_learning_rate: float
    pretrain_batch_size: int
    settings: TrainerSettings
    train_start_year: int | None
    train_end_year: int | None
    checkpoint_every: int
    trade: TradeParams
    test_start_year: int | None
    test_end_year: int | None
    random_seeds: int
    strategies: tuple
    seed: int
    out_dir: str
    raw: dict


def _to_int(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"config {where}: not an integer: {raw!r}") from None


def _to_float(raw: str, where: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"config {where}: not a number: {raw!r}") from None


def _to_bool(raw: str, where: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValidationError(f"config {where}: not a boolean: {raw!r}")


def _to_year(raw: str, where: str) -> int | None:
    raw = raw.strip()
    return _to_int(raw, where) if raw else None


def _parse_assets(raw: str, base: Path):
    """'name: path' entries, one per line or comma-separated."""
    assets = []
    parts = [p.strip() for chunk in raw.splitlines() for p in chunk.split(",")]
    for part in (p for p in parts if p):
        name, sep, path = part.partition(":")
        if not sep or not name.strip() or not path.strip():
            raise ValidationError(f"config data.assets: expected 'name: path', got {part!r}")
        assets.append((name.strip(), str((base / path.strip()).resolve())))
    names = [n for n, _ in assets]
    if len(set(names)) != len(names):
        raise ValidationError(f"config data.assets: duplicate names in {names}")
    return tuple(assets)


def _apply_overrides(values: dict, overrides) -> None:
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"override {item!r} must look like section.key=value")
        section, dot, name = key.strip().partition(".")
        if not dot or section not in values or name not in values[section]:
            raise ValidationError(f"override targets unknown key {key.strip()!r}")
        values[section][name] = value.strip()


def load_config(path, overrides=None) -> RunConfig:
    """Parse, check and type an INI file, applying section.key=value overrides."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from exc

    values = {section: dict(keys) for section, keys in DEFAULTS.items()}
    for section in parser.sections():
        if section not in values:
            raise ValidationError(f"config {path}: unknown section [{section}]")
        for key, val in parser.items(section):
            if key not in values[section]:
                raise ValidationError(f"config {path}: unknown key {section}.{key}")
            values[section][key] = val
    _apply_overrides(values, overrides)

    schema = {
        logical: values["data"][f"{logical}_column"]
        for logical in ("date", "open", "high", "low", "close", "volume")
    }
    settings = TrainerSettings(
        epochs=_to_int(values["training"]["epochs"], "training.epochs"),
        batch_size=_to_int(values["training"]["batch_size"], "training.batch_size"),
        gamma=_to_float(values["training"]["gamma"], "training.gamma"),
        learning_rate=_to_float(values["training"]["learning_rate"], "training.learning_rate"),
        replay_capacity=_to_int(values["training"]["replay_capacity"], "training.replay_capacity"),
        recency_bias=_to_float(values["training"]["recency_bias"], "training.recency_bias"),
        epsilon_start=_to_float(values["training"]["epsilon_start"], "training.epsilon_start"),
        epsilon_end=_to_float(values["training"]["epsilon_end"], "training.epsilon_end"),
        epsilon_decay_fraction=_to_float(values["training"]["epsilon_decay_fraction"],
                                         "training.epsilon_decay_fraction"),
        encoder_frozen=_to_bool(values["training"]["encoder_frozen"],
                                "training.encoder_frozen"),
    )
    trade = TradeParams(
        initial_capital=_to_float(values["trading"]["initial_capital"],
                                  "trading.initial_capital"),
        trading_size=_to_float(values["trading"]["trading_size"], "trading.trading_size"),
        sell_cost=_to_float(values["trading"]["sell_cost"], "trading.sell_cost"),
        buy_cost=_to_float(values["trading"]["buy_cost"], "trading.buy_cost"),
    )
    strategies = tuple(
        s.strip() for s in values["backtest"]["strategies"].split(",") if s.strip()
    )
    unknown = [s for s in strategies if s not in KNOWN_STRATEGIES]
    if unknown:
        raise ValidationError(
            f"config backtest.strategies: unknown {unknown}; known: {list(KNOWN_STRATEGIES)}"
        )

    out_dir = values["run"]["out_dir"]
    out_path = Path(out_dir)
    if not out_path.is_absolute():
        out_path = path.parent / out_path

    return RunConfig(
        assets=_parse_assets(values["data"]["assets"], path.parent),
        schema=schema,
        window=_to_int(values["features"]["window"], "features.window"),
        hidden=_to_int(values["model"]["hidden"], "model.hidden"),
        latent=_to_int(values["model"]["latent"], "model.latent"),
        h1=_to_int(values["model"]["h1"], "model.h1"),
        h2=_to_int(values["model"]["h2"], "model.h2"),
        pretrain_epochs=_to_int(values["pretrain"]["epochs"], "pretrain.epochs"),
        pretrain_learning_rate=_to_float(values["pretrain"]["learning_rate"],
                                         "pretrain.learning_rate"),
        pretrain_batch_size=_to_int(values["pretrain"]["batch_size"], "pretrain.batch_size"),
        settings=settings,
        train_start_year=_to_year(values["training"]["train_start_year"],
                                  "training.train_start_year"),
        train_end_year=_to_year(values["training"]["train_end_year"],
                                "training.train_end_year"),
        checkpoint_every=_to_int(values["training"]["checkpoint_every"],
                                 "training.checkpoint_every"),
        trade=trade,
        test_start_year=_to_year(values["backtest"]["test_start_year"],
                                 "backtest.test_start_year"),
        test_end_year=_to_year(values["backtest"]["test_end_year"],
                               "backtest.test_end_year"),
        random_seeds=_to_int(values["backtest"]["random_seeds"], "backtest.random_seeds"),
        strategies=strategies,
        seed=_to_int(values["run"]["seed"], "run.seed"),
        out_dir=str(out_path),
        raw=values,
    )


def resolved_text(config: RunConfig) -> str:
    """Effective configuration as INI text, every key explicit."""
    lines = []
    for section, keys in config.raw.items():
        lines.append(f"[{section}]")
        for key, val in keys.items():
            if "\n" in val:
                indented = "\n".join("    " + ln.strip() for ln in val.splitlines() if ln.strip())
                lines.append(f"{key} =\n{indented}")
            else:
                lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)


def default_config_text() -> str:
    """Template INI with every key at its default."""
    lines = []
    for section, keys in DEFAULTS.items():
        lines.append(f"[{section}]")
        for key, val in keys.items():
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)
