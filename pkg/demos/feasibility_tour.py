"""Tour of the action space and the feasibility mapping.

A portfolio over I assets chooses one of 3^I joint actions per day:
sell, hold or buy a fixed cash slice of each asset. Cash limits and
holdings make some combinations impossible, and the mapping repairs an
infeasible choice by turning the fewest possible legs into holds,
preferring the repair whose action value is highest.

Run: python3 demos/feasibility_tour.py
"""

import numpy as np

from qtrader.actionspace import (FeasibilityContext, all_actions, decode,
                                 describe_feasibility, encode, feasible_indices,
                                 map_action)


def main():
    print("All 9 joint actions for two assets, in index order:")
    for idx, action in enumerate(all_actions(2)):
        print(f"  {idx}: {action.tolist()}")
    print()

    # cash covers a single buy; asset 1 is fully sellable, asset 2 nearly empty
    ctx = FeasibilityContext(
        weights=np.array([0.015, 0.975, 0.01]),
        value=1_000_000.0,
        trading_size=10_000.0,
        sell_cost=0.0025,
        buy_cost=0.0025,
    )
    print("A tight portfolio: 1.5% cash, asset2 holds only 1% of value")
    print(describe_feasibility(ctx))
    print()

    feasible = feasible_indices(ctx)
    print(f"{len(feasible)} of 9 actions are feasible: {feasible}")
    print()

    q = np.linspace(0.9, 0.1, 9)  # pretend the network prefers low indices
    for intended in ([1, 1], [-1, -1], [1, -1]):
        repaired = map_action(ctx, np.array(intended), q)
        idx = encode(np.array(intended))
        print(f"intended {intended} (index {idx}) "
              f"-> executed {repaired.tolist()} (index {encode(repaired)})")
    print()
    print("Buys give way before sells: the mapping only ever downgrades")
    print("legs to holds, so a repaired trade is a subset of the intent.")
    print()

    cheapest = decode(int(feasible[np.argmin(q[feasible])]), 2)
    print(f"A feasible action passes through untouched, even at the lowest q:",
          map_action(ctx, cheapest, q).tolist())


if __name__ == "__main__":
    main()
