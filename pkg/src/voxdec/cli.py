"""Command-line entry point.

    voxdec gen-data  [--config FILE] [--out DIR] [--<dotted.field> VALUE ...]
    voxdec train     ...
    voxdec decode    [--variant NAME] ...
    voxdec evaluate  [--variant NAME] ...
    voxdec ablate    ...
    voxdec roi-probe ...

Any config field can be overridden with a dotted flag, e.g.
``--diffusion.mix_image 0.6``. Exit codes: 0 ok, 2 bad config, 3 missing
artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .autodiff import NonFiniteError
from .config import ConfigError, load_config
from .diffusion import DivergenceError
from .harness import (
    ArtifactError,
    cmd_ablate,
    cmd_decode,
    cmd_evaluate,
    cmd_gen_data,
    cmd_roi_probe,
    cmd_train,
    resolve_out,
)

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "roi-probe": cmd_roi_probe,
}


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    overrides = []
    i = 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--"):
            raise ConfigError(f"unexpected argument {arg!r}")
        if "=" in arg:
            dotted, raw = arg[2:].split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"flag {arg!r} needs a value")
            dotted, raw = arg[2:], extra[i + 1]
            i += 1
        overrides.append((dotted, raw))
        i += 1
    return overrides


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="voxdec", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--out", default=None, help="output root (also via VOXDEC_OUT)")
    parser.add_argument("--variant", default=None, help="decode/evaluate variant")
    args, extra = parser.parse_known_args(argv)

    try:
        overrides = _split_overrides(extra)
        cfg = load_config(args.config, overrides)
        out = resolve_out(cfg, args.out)
        fn = COMMANDS[args.command]
        if args.command in ("decode", "evaluate"):
            manifest = fn(cfg, out, variant=args.variant)
        else:
            manifest = fn(cfg, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except ArtifactError as err:
        print(f"artifact error: {err}", file=sys.stderr)
        return 3
    except (DivergenceError, NonFiniteError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 4
    n = len(manifest.get("artifacts", {}))
    print(f"{args.command}: wrote {n} artifacts under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
