"""How often backward elimination recovers the true model.

Simulates replications with the two null interactions set to zero and
counts how many drop exactly those two terms.

    python scripts/elimination_study.py --n 5000 --theta 3 --replications 20
"""

import argparse

from framecount.fixture import simulate_covariate_rows, simulation_effects
from framecount.regression import backward_eliminate
from framecount.regression.design import FULL_MODEL

TARGET = {"party:thematicity", "party:message_length"}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=5000)
    parser.add_argument("--theta", type=float, default=3.0)
    parser.add_argument("--replications", type=int, default=20)
    parser.add_argument("--first-seed", type=int, default=0)
    parser.add_argument("--alpha", type=float, default=0.05)
    args = parser.parse_args(argv)

    effects = simulation_effects(party__thematicity=0.0, party__message_length=0.0)
    hits = 0
    for seed in range(args.first_seed, args.first_seed + args.replications):
        rows = simulate_covariate_rows(args.n, seed, effects, args.theta)
        _, trail = backward_eliminate(rows, FULL_MODEL, alpha=args.alpha)
        dropped = [s.dropped_term for s in trail]
        ok = set(dropped) == TARGET
        hits += ok
        print(f"seed {seed:3d}: {'ok  ' if ok else 'MISS'} dropped {dropped}")
    print(f"{hits}/{args.replications} replications recovered the true model")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
