"""Train the default model on synthetic sinusoids and compare with repeating the last pose.

    python3 scripts/beat_zero_velocity.py --sequences 200 --epochs 20
"""

import argparse

from trajnet.data.synthetic import SynthConfig
from trajnet.experiments import SyntheticSplit, beat_zero_velocity
from trajnet.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sequences", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    split = SyntheticSplit(synth=SynthConfig(n_sequences=args.sequences, seed=args.seed))
    cfg = TrainConfig(max_epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    r = beat_zero_velocity(split, cfg, seed=args.seed)
    print("epoch losses:", " ".join(f"{x:.1f}" for x in r.losses))
    print(f"model {r.model_mpjpe:.2f} mm  zero-velocity {r.baseline_mpjpe:.2f} mm  "
          f"ratio {r.ratio:.3f}  {r.seconds:.0f}s")


if __name__ == "__main__":
    main()
