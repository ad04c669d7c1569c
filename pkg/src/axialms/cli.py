"""Command-line entry point: ``axialms <scenario> [--config PATH] [--seed N] [--shots N] [--out DIR]``."""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import platform
import sys

import numpy as np
import scipy
import yaml

from . import __version__
from .config import SCENARIOS, ConfigError, load_config
from .csvio import emit_csv

log = logging.getLogger("axialms")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="axialms",
                                description="Axial-mode Molmer-Sorensen gate simulator.")
    p.add_argument("scenario", choices=SCENARIOS, help="what to run")
    p.add_argument("--config", help="YAML config or a previous run manifest")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--shots", type=int, help="shot count for every Monte-Carlo stage")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def versions() -> dict:
    return {"axialms": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def run_scenario(name: str, cfg) -> list[str]:
    """Run one scenario, write its CSV files and the manifest; return written paths."""
    from .scenarios import RUNNERS

    if name not in RUNNERS:
        raise ConfigError(f"unknown scenario {name!r}")
    tables, summary = RUNNERS[name](cfg)
    os.makedirs(cfg.out, exist_ok=True)
    written = [emit_csv(t, os.path.join(cfg.out, f"{stem}.csv")) for stem, t in tables.items()]
    manifest = {
        "manifest_version": 1,
        "scenario": name,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "versions": versions(),
        "outputs": [os.path.basename(w) for w in written],
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    path = os.path.join(cfg.out, f"manifest_{name}.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(summary)
    return written + [path]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be non-negative")
            cfg.seed = args.seed
        if args.shots is not None:
            cfg.shots = {k: args.shots for k in cfg.shots}
        if args.out is not None:
            cfg.out = args.out
        cfg.validate()
        for path in run_scenario(args.scenario, cfg):
            log.info("wrote %s", path)
    except (ConfigError, OSError) as e:
        print(f"axialms: error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"axialms: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
