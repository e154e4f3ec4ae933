"""Combinatorial trade-action space with feasibility and infeasible-action mapping.

An action is a length-I direction vector over {-1, 0, +1} (sell / hold /
buy one fixed trading size of each asset). Actions are indexed 0..3^I-1
by reading (direction + 1) as base-3 digits, asset 1 most significant,
so index 0 is all-sell and index 3^I - 1 is all-buy.

Infeasible actions (cash or holdings shortage) are repaired in two
stages: sells of assets with insufficient holdings become holds, then,
if cash is still short, the smallest set of buys is relaxed to holds,
preferring the candidate with the highest Q-value. The repaired action
never flips a direction, only relaxes trades to holds.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ValidationError

__all__ = [
    "FeasibilityContext",
    "encode",
    "decode",
    "all_actions",
    "is_feasible",
    "feasible_set",
    "feasible_indices",
    "map_action",
    "describe_feasibility",
]


@dataclass(frozen=True)
class FeasibilityContext:
    """Everything needed to decide whether a trade vector is executable.

    weights: pre-action portfolio weights, cash first, length I+1, on the simplex
    value: pre-action portfolio value (currency)
    trading_size: fixed currency amount per buy/sell leg
    sell_cost: proportional transaction cost rate for selling
    buy_cost: proportional transaction cost rate for buying
    """

    weights: np.ndarray
    value: float
    trading_size: float
    sell_cost: float
    buy_cost: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size < 2:
            raise ValidationError("weights must be a 1-D vector of length I+1")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
            raise ValidationError(f"weights must lie on the simplex, got {w}")
        n_assets = w.size - 1
        if not 0.0 < self.trading_size < self.value / n_assets:
            raise ValidationError(
                f"trading size must satisfy 0 < size < value/I "
                f"(size={self.trading_size}, value={self.value}, I={n_assets})"
            )
        if not (0.0 <= self.sell_cost < 1.0 and 0.0 <= self.buy_cost < 1.0):
            raise ValidationError("cost rates must lie in [0, 1)")

    @property
    def n_assets(self) -> int:
        return self.weights.size - 1


def encode(action) -> int:
    """Action vector -> integer index (base-3 digits, asset 1 most significant)."""
    a = np.asarray(action, dtype=np.int64)
    if a.ndim != 1 or np.any((a < -1) | (a > 1)):
        raise ValidationError(f"action entries must be in {{-1, 0, 1}}, got {action}")
    index = 0
    for d in a + 1:
        index = index * 3 + int(d)
    return index


def decode(index: int, n_assets: int) -> np.ndarray:
    """Integer index -> action vector. Inverse of :func:`encode`."""
    if not 0 <= index < 3**n_assets:
        raise ValidationError(f"action index {index} out of range [0, 3^{n_assets})")
    digits = np.empty(n_assets, dtype=np.int64)
    for i in range(n_assets - 1, -1, -1):
        digits[i] = index % 3
        index //= 3
    return digits - 1


def all_actions(n_assets: int) -> np.ndarray:
    """All 3^I direction vectors in index order, shape (3^I, I)."""
    grids = np.meshgrid(*([np.array([-1, 0, 1])] * n_assets), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _post_trade_cash(ctx: FeasibilityContext, n_sells: int, n_buys: int) -> float:
    """Cash (currency) after the trade, with sell proceeds net of selling costs."""
    return (
        ctx.weights[0] * ctx.value
        + ctx.trading_size * (1.0 - ctx.sell_cost) * n_sells
        - ctx.trading_size * (1.0 + ctx.buy_cost) * n_buys
    )


def is_feasible(ctx: FeasibilityContext, action) -> bool:
    """True iff every sell is covered by holdings and post-trade cash is >= 0."""
    a = np.asarray(action)
    sells = a == -1
    if np.any(ctx.weights[1:][sells] * ctx.value < ctx.trading_size):
        return False
    return _post_trade_cash(ctx, int(sells.sum()), int((a == 1).sum())) >= 0.0


def feasible_set(ctx: FeasibilityContext) -> list[np.ndarray]:
    """All feasible action vectors in index order. Always contains all-hold."""
    return [a for a in all_actions(ctx.n_assets) if is_feasible(ctx, a)]


def feasible_indices(ctx: FeasibilityContext) -> np.ndarray:
    """Indices of feasible actions, sorted ascending."""
    return np.array([encode(a) for a in feasible_set(ctx)], dtype=np.int64)


def _hold_short_sells(ctx: FeasibilityContext, action: np.ndarray) -> np.ndarray:
    """Asset-shortage rule: sells of assets with holdings below the trading
    size become holds."""
    repaired = action.copy()
    short = (action == -1) & (ctx.weights[1:] * ctx.value < ctx.trading_size)
    repaired[short] = 0
    return repaired


def map_action(ctx: FeasibilityContext, action, q_values) -> np.ndarray:
    """Repair an infeasible action into a nearby feasible, high-value one.

    First every unaffordable sell becomes a hold. If the result is still
    infeasible the cash shortage is resolved by switching a subset of the
    remaining buys to holds: candidates are scanned in order of ascending
    subset size (= Hamming distance from the sell-repaired action) and at
    the first size with any feasible candidate the one with the largest
    ``q_values`` entry wins; remaining ties fall to the smallest action
    index. The result is always feasible and never flips a direction.
    """
    a = np.asarray(action, dtype=np.int64)
    q = np.asarray(q_values, dtype=np.float64)
    if q.shape != (3**ctx.n_assets,):
        raise ValidationError(f"q_values must have 3^{ctx.n_assets} entries, got shape {q.shape}")

    repaired = _hold_short_sells(ctx, a)
    if is_feasible(ctx, repaired):
        return repaired

    # Cash shortage: relax buys to holds, smallest subset first.
    buy_positions = np.flatnonzero(repaired == 1)
    best = None
    best_key = None
    for size in range(1, buy_positions.size + 1):
        for subset in combinations(buy_positions, size):
            candidate = repaired.copy()
            candidate[list(subset)] = 0
            if not is_feasible(ctx, candidate):
                continue
            idx = encode(candidate)
            key = (-q[idx], idx)
            if best is None or key < best_key:
                best = candidate
                best_key = key
        if best is not None:
            return best
    raise AssertionError("unreachable: holding every buy is always feasible")


def describe_feasibility(ctx: FeasibilityContext, q_values=None) -> str:
    """Human-readable feasibility table plus mapping traces, for debugging.

    Lists every action with its index, feasibility, post-trade cash, and
    (when ``q_values`` is given) the action each infeasible entry maps to.
    """
    lines = [
        f"assets: {ctx.n_assets}  value: {ctx.value:.2f}  trading size: {ctx.trading_size:.2f}",
        f"weights (cash first): {np.array2string(ctx.weights, precision=6)}",
        f"cost rates: sell {ctx.sell_cost}  buy {ctx.buy_cost}",
        "",
        "index  action" + " " * (3 * ctx.n_assets - 3) + "  feasible  post-trade cash  mapped to",
    ]
    for a in all_actions(ctx.n_assets):
        idx = encode(a)
        feasible = is_feasible(ctx, a)
        cash = _post_trade_cash(ctx, int((a == -1).sum()), int((a == 1).sum()))
        vec = "(" + ",".join(f"{d:+d}" if d else " 0" for d in a) + ")"
        mapped = ""
        if not feasible and q_values is not None:
            m = map_action(ctx, a, q_values)
            mapped = f"-> {encode(m)} (" + ",".join(f"{d:+d}" if d else " 0" for d in m) + ")"
        lines.append(
            f"{idx:5d}  {vec}  {'yes' if feasible else ' no':>8}  {cash:15.2f}  {mapped}"
        )
    return "\n".join(lines)
