#!/usr/bin/env python3
"""Decode synthetic ROI activation patterns through a trained run directory.

    python scripts/run_roi_probe.py --out runs/demo
"""

import argparse
from pathlib import Path

from voxdec.config import ExperimentConfig, validate
from voxdec.harness import cmd_roi_probe


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="runs/demo")
    args = parser.parse_args()
    cfg = ExperimentConfig()
    validate(cfg)
    manifest = cmd_roi_probe(cfg, Path(args.out))
    print(f"{'roi':<8}{'gain':>6}{'decoded':>10}{'correct':>9}  caption")
    for row in manifest["rows"]:
        print(f"{row['roi']:<8}{row['gain']:>6.1f}{row['decoded']:>10}"
              f"{str(row['correct']):>9}  (category word in caption: {row['caption_has_category']})")


if __name__ == "__main__":
    main()
