#!/usr/bin/env python3
"""Generate a dataset, train the decoding stack, reconstruct the test set,
and print the metric summary.

    python scripts/run_pipeline.py --out runs/demo [--small] [--sigma0]
"""

import argparse
import json
import time
from pathlib import Path

from voxdec.config import ExperimentConfig, validate
from voxdec.harness import cmd_decode, cmd_evaluate, cmd_gen_data, cmd_train


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--small", action="store_true",
                        help="tiny sizes for a quick look (not the paper regime)")
    parser.add_argument("--sigma0", action="store_true",
                        help="noiseless brain + ridge-only path (identifiability check)")
    args = parser.parse_args()

    cfg = ExperimentConfig()
    if args.small:
        cfg.data.train_items = 256
        cfg.data.test_items = 32
        cfg.diffusion.epochs = 4
    if args.sigma0:
        cfg.brain.sigma_scale = 0.0
        cfg.ridge.lambda_fixed = 1e-8
        cfg.diffusion.strength = 0.0
        cfg.diffusion.epochs = 1
        cfg.data.train_repeats = 1
    validate(cfg)

    out = Path(args.out)
    t0 = time.time()
    cmd_gen_data(cfg, out)
    print(f"[{time.time()-t0:6.1f}s] dataset written")
    m = cmd_train(cfg, out)
    print(f"[{time.time()-t0:6.1f}s] trained; held-out R^2:",
          {k: round(v, 4) for k, v in m["heldout_r2"].items()})
    cmd_decode(cfg, out)
    print(f"[{time.time()-t0:6.1f}s] decoded")
    manifest = cmd_evaluate(cfg, out)
    print(f"[{time.time()-t0:6.1f}s] evaluated")
    print(json.dumps(manifest["summary"], indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
