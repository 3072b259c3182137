#!/usr/bin/env python3
"""Run the seven-variant ablation matrix against an already trained run
directory (see run_pipeline.py) and print the two summary tables.

    python scripts/run_ablation.py --out runs/demo
"""

import argparse
from pathlib import Path

from voxdec.config import ExperimentConfig, validate
from voxdec.harness import IMAGE_METRIC_COLUMNS, TEXT_METRIC_COLUMNS, cmd_ablate


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="runs/demo")
    args = parser.parse_args()
    cfg = ExperimentConfig()
    validate(cfg)
    manifest = cmd_ablate(cfg, Path(args.out))

    for table, cols in (("image", IMAGE_METRIC_COLUMNS), ("text", TEXT_METRIC_COLUMNS)):
        print(f"\n{table} metrics")
        print(f"{'variant':<10}" + "".join(f"{c:>12}" for c in cols))
        for variant, summary in manifest["summaries"].items():
            row = summary[table]
            print(f"{variant:<10}" + "".join(
                f"{row[c]:>12.3f}" if row[c] is not None else f"{'-':>12}" for c in cols))


if __name__ == "__main__":
    main()
