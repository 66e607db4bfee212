"""Command line entry point: ``plumeswarm <subcommand> --config scenario.yaml``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, dump_config, load_config

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("plumeswarm")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plumeswarm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, segments=False, jobs=False):
        sp.add_argument("--config", type=Path, help="scenario YAML (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", type=Path, help="overrides the config output directory")
        if segments:
            sp.add_argument("--segments", help="segment indices, e.g. 0-9 or 3,5,7-8")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="parallel segment workers")

    common(sub.add_parser("simulate", help="fly the mission and record captures"))
    common(sub.add_parser("reconstruct", help="per-segment voxel reconstruction"), True, True)
    common(sub.add_parser("metrics", help="classify, filter and tabulate plume metrics"))
    common(sub.add_parser("all", help="simulate, reconstruct and metrics"), True, True)
    common(sub.add_parser("inspect", help="print the manifests of a run"))
    vs = sub.add_parser("validate-static", help="box reconstruction accuracy check")
    vs.add_argument("--out", type=Path, default=Path("runs/static"))
    vs.add_argument("--max-dim", type=int, default=64)
    vs.add_argument("--image-scale", type=float, default=0.125)
    return p


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    return cfg.with_overrides(seed=args.seed, output_dir=str(args.out) if args.out else None)


def _inspect(out: Path) -> int:
    from .pipeline import METRICS, MISSION, RECON_MANIFEST, SEGMENTS

    found = False
    for name in (MISSION, SEGMENTS, RECON_MANIFEST, METRICS):
        path = out / name
        if path.exists():
            found = True
            print(f"== {path}")
            print(path.read_text(), end="")
    if not found:
        print(f"no manifests under {out}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate-static":
        from .static_validation import run_static_validation

        res = run_static_validation(max_dim=args.max_dim, image_scale=args.image_scale,
                                    out=args.out)
        print(res.summary())
        return EXIT_OK if res.passed else EXIT_STAGE
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    if args.command == "inspect":
        return _inspect(out)

    from . import pipeline
    from .swarm import BarrierTimeout, StabilizationTimeout

    try:
        if args.command in ("simulate", "all"):
            out.mkdir(parents=True, exist_ok=True)
            dump_config(cfg, out / "config.yaml")
            res = pipeline.run_simulate(cfg, out)
            print(f"simulate: {len(res.records)} capture records, "
                  f"orbit radius {res.mission['orbit_radius']:.2f} m")
        if args.command in ("reconstruct", "all"):
            done = pipeline.run_reconstruct(cfg, out, args.segments, args.jobs)
            skipped = sum(o.skipped for o in done)
            print(f"reconstruct: {len(done)} segments ({skipped} up to date)")
        if args.command in ("metrics", "all"):
            series = pipeline.run_metrics(cfg, out)
            print(f"metrics: {len(series)} segments -> {out / pipeline.METRICS}")
    except (StabilizationTimeout, BarrierTimeout, pipeline.StageError, ValueError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
