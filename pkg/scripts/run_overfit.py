#!/usr/bin/env python3
"""Overfit a desk-scale model on a small synthetic set and report the
final/initial loss ratio per seed."""

import argparse
import statistics
import tempfile
import time
from pathlib import Path

import torch

from rwen_tts.featstore import SynthConfig, synth_dataset
from rwen_tts.training import TrainConfig, desk_model_config, train


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sentences", type=int, default=32)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--lr", type=float, default=3e-3)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--data-seed", type=int, default=5)
    parser.add_argument("--out", type=Path, default=None,
                        help="keep checkpoints/metrics here instead of a "
                             "temp dir")
    args = parser.parse_args()

    torch.set_num_threads(1)
    sentences = synth_dataset(
        SynthConfig(n_sentences=args.sentences, max_words=6, max_phonemes=4,
                    d_h=16, seed=args.data_seed)
    )
    base = args.out or Path(tempfile.mkdtemp(prefix="overfit-"))
    ratios = []
    for seed in args.seeds:
        config = TrainConfig(model=desk_model_config(d_h=16),
                             steps=args.steps, lr=args.lr,
                             batch_size=args.batch_size, seed=seed)
        start = time.monotonic()
        result = train(sentences, config, base / f"seed{seed}",
                       log=lambda m: print(f"  {m}"))
        elapsed = time.monotonic() - start
        ratios.append(result.loss_ratio)
        print(f"seed {seed}: initial {result.initial_losses['total']:.4f} "
              f"-> final {result.final_losses['total']:.4f} "
              f"(ratio {result.loss_ratio:.4f}, {elapsed:.0f}s)")
    print(f"median ratio over {len(ratios)} seeds: "
          f"{statistics.median(ratios):.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
