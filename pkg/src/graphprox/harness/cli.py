"""Command-line interface: ``graphprox run | validate | ingest``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiments import run_experiment
from .weather import SchemaError, ingest_weather


def _cmd_run(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    bundle = run_experiment(cfg, out_dir=args.out, workers=args.workers)
    print(f"wrote {len(bundle.files)} files to {bundle.out_dir} (digest {bundle.digest})")
    for k, v in bundle.summary.items():
        print(f"  {k} = {v}")
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    print(f"{args.config}: ok (kind {cfg.kind}, digest {cfg.digest()})")
    return 0


def _cmd_ingest(args) -> int:
    data = ingest_weather(args.dataset, k_neighbors=args.k_neighbors,
                          standardize=not args.raw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.save(out / "weather.npz")
    from ..topology import network_to_dict
    import yaml
    with open(out / "topology.yaml", "w") as fh:
        yaml.safe_dump(network_to_dict(data.network), fh, sort_keys=False)
    with open(out / "ingest_summary.txt", "w") as fh:
        for k, v in data.summary().items():
            fh.write(f"{k} = {v}\n")
        for s in data.excluded:
            fh.write(f"excluded = {s}\n")
    for k, v in data.summary().items():
        print(f"{k} = {v}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphprox", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None, help="override the master seed")
    r.add_argument("--workers", type=int, default=1, help="worker processes for sweep points")
    r.add_argument("--out", default=None, help="output directory (default: output.dir)")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.add_argument("--seed", type=int, default=None)
    v.set_defaults(func=_cmd_validate)

    g = sub.add_parser("ingest", help="parse a weather CSV into an ingested bundle")
    g.add_argument("dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--k-neighbors", type=int, default=4)
    g.add_argument("--raw", action="store_true", help="skip per-station standardization")
    g.set_defaults(func=_cmd_ingest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
