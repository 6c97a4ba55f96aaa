"""Memorise one synthetic (input, target) pair with the default model.

    python3 scripts/overfit_one.py --epochs 500 [--lr 1e-4] [--dropout 0.1]
"""

import argparse
from dataclasses import replace

from trajnet.experiments import overfit_one
from trajnet.model import ModelConfig
from trajnet.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    ap.add_argument("--dropout", type=float, default=ModelConfig.dropout_rate)
    args = ap.parse_args()
    model = replace(ModelConfig(), dropout_rate=args.dropout)
    train = TrainConfig(batch_size=1, max_epochs=args.epochs, learning_rate=args.lr,
                        seed=args.seed)
    first, last, seconds = overfit_one(args.seed, args.epochs, model, train)
    print(f"initial loss {first:.4f}  final loss {last:.6f}  ratio {last / first:.5f}  "
          f"{seconds:.1f}s")


if __name__ == "__main__":
    main()
