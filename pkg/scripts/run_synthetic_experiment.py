#!/usr/bin/env python3
"""End-to-end demo on synthetic data: ingest, train all three modality
models, fuse them, and predict one sample, all through the CLI."""

import argparse
import sys
from pathlib import Path

from modalfuse.cli import main as cli
from modalfuse.modality import MODALITIES
from modalfuse.synthetic import make_synthetic_dataset

CONFIG_TEMPLATE = """\
seed = {seed}
dataset.root = data
output.dir = out
split.ratio = {ratio}
backbone.name = tinyconv64
"""

TRAIN_TEMPLATE = """\
train.{m}.epochs = {epochs}
train.{m}.batch_size = 4
train.{m}.learning_rate = 0.001
train.{m}.dropout_rate = 0.0
"""


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("workdir", type=Path, help="directory for data and outputs")
    parser.add_argument("--per-class", type=int, default=35)
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--seed", type=int, default=21)
    parser.add_argument("--split-ratio", type=float, default=0.857,
                        help="train fraction (default gives 60/10 at 35 per class)")
    args = parser.parse_args()

    args.workdir.mkdir(parents=True, exist_ok=True)
    make_synthetic_dataset(args.workdir / "data", per_class=args.per_class,
                           seed=args.seed)
    config = args.workdir / "run.conf"
    text = CONFIG_TEMPLATE.format(seed=args.seed, ratio=args.split_ratio)
    for m in MODALITIES:
        text += TRAIN_TEMPLATE.format(m=m, epochs=args.epochs)
    config.write_text(text, encoding="utf-8")

    for step in (["ingest"], ["train"], ["fuse"]):
        print(f"$ modalfuse {' '.join(step)}")
        code = cli(step + ["--config", str(config)])
        if code != 0:
            return code

    sample = [
        "predict", "--config", str(config),
    ]
    for m in MODALITIES:
        sample += [f"--{m}", str(args.workdir / "data" / str(m) / "cancer" / "img_000.png")]
    print("$ modalfuse predict (one cancer sample)")
    return cli(sample)


if __name__ == "__main__":
    sys.exit(main())
