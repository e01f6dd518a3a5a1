#!/usr/bin/env python3
"""Train the four encoder configurations (full, no-awre, no-sre, neither)
on one synthetic dataset and print a shared eval-loss table."""

import argparse
import tempfile
from pathlib import Path

import torch

from rwen_tts.featstore import SynthConfig, synth_dataset
from rwen_tts.training import (
    TrainConfig, ablation_label, desk_model_config, evaluate,
    load_checkpoint, prepare_example, train,
)

FLAG_SETS = ((True, True), (True, False), (False, True), (False, False))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sentences", type=int, default=24)
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--lr", type=float, default=3e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    torch.set_num_threads(1)
    sentences = synth_dataset(
        SynthConfig(n_sentences=args.sentences, max_words=6, max_phonemes=4,
                    d_h=16, seed=args.seed)
    )
    examples = [prepare_example(s, require_targets=True) for s in sentences]
    base = args.out or Path(tempfile.mkdtemp(prefix="ablations-"))

    rows = []
    for sre, awre in FLAG_SETS:
        config = TrainConfig(
            model=desk_model_config(d_h=16, enable_sre=sre, enable_awre=awre),
            steps=args.steps, lr=args.lr, batch_size=4, seed=args.seed,
        )
        label = ablation_label(config.model)
        print(f"training {label} ...")
        result = train(sentences, config, base / label)
        _cfg, mparams, _meta = load_checkpoint(result.checkpoint_dir)
        rows.append((label, evaluate(examples, mparams, config.model)))

    print()
    print(f"{'config':<16} {'total':>10} {'mel':>10} {'pitch':>10} "
          f"{'energy':>10} {'duration':>10}")
    for label, losses in rows:
        print(f"{label:<16} {losses['total']:>10.4f} {losses['mel']:>10.4f} "
              f"{losses['pitch']:>10.4f} {losses['energy']:>10.4f} "
              f"{losses['duration']:>10.4f}")
    print(f"\nartifacts in {base}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
