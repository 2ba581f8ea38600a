#!/usr/bin/env python3
"""Generate a small synthetic dataset with the expected directory layout.

Cancer images are bright, normal images dark, so any reasonable model
separates them; useful for exercising the pipeline without real data.
"""

import argparse
from pathlib import Path

from modalfuse.synthetic import make_synthetic_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", type=Path, help="dataset root to create")
    parser.add_argument("--per-class", type=int, default=35,
                        help="images per class per modality (default 35)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    make_synthetic_dataset(args.root, per_class=args.per_class, seed=args.seed)
    print(
        f"wrote {args.per_class} images per class per modality under {args.root}"
    )


if __name__ == "__main__":
    main()
