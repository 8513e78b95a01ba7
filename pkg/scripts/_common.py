"""Shared helper for the experiment runner scripts."""

import argparse
from pathlib import Path

from graphprox.harness import load_config, run_experiment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run_configs(names, description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="parent directory for the result bundles")
    args = p.parse_args()
    for name in names:
        cfg = load_config(CONFIGS / f"{name}.yaml", seed_override=args.seed)
        out = Path(args.out) / name if args.out else None
        bundle = run_experiment(cfg, out_dir=out, workers=args.workers)
        print(f"[{name}] {bundle.out_dir}")
        for k, v in bundle.summary.items():
            if k.startswith(("gap_db", "gain_db", "best_", "error_eta0", "horizon")):
                print(f"  {k} = {v}")
