"""Seed-majority vote on whether each ablation hurts on synthetic correlated-limb data.

    python3 scripts/ablation_directions.py --seeds 0,1,2 --sequences 120 --epochs 12
"""

import argparse
import logging

from trajnet.data.synthetic import SynthConfig
from trajnet.experiments import DIRECTION_PAIRS, SyntheticSplit, ablation_directions
from trajnet.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--sequences", type=int, default=120)
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    ap.add_argument("--metric", default="mae_m", choices=["mae_m", "mse_m", "mpjpe_mm"])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    seeds = [int(s) for s in args.seeds.split(",")]
    split = SyntheticSplit(synth=SynthConfig(n_sequences=args.sequences))
    r = ablation_directions(seeds, split, TrainConfig(max_epochs=args.epochs,
                                                      learning_rate=args.lr), args.metric)
    names = list(r.per_seed[0])
    print("seed  " + "  ".join(f"{n:>9}" for n in names))
    for seed, scores in zip(seeds, r.per_seed):
        print(f"{seed:>4}  " + "  ".join(f"{scores[n]:9.5f}" for n in names))
    for a, b in DIRECTION_PAIRS:
        print(f"{a} <= {b}: {r.votes[(a, b)]}/{len(seeds)} seeds -> "
              f"{'holds' if r.holds((a, b)) else 'does not hold'}")
    print(f"{r.seconds:.0f}s")


if __name__ == "__main__":
    main()
