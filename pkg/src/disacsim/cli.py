"""Command-line front end.

    disacsim simulate   draw a scene, export it and its beamspace tensors
    disacsim estimate   recover multipath parameters from an exported tensor
    disacsim e2e        run a single end-to-end trial
    disacsim montecarlo run a sweep and write results + CSV

Exit status: 0 on success, 2 on a malformed configuration.
"""

import argparse
import json
import logging
import os
import sys

from .estimator import AlsOptions, EstimatedPath, estimate_paths
from .harness import (
    _SEED_STRIDE,
    ConfigError,
    ScenarioConfig,
    default_scenario,
    load_config,
    parse_mode,
    run_montecarlo,
    run_trial,
    write_csv,
    write_results,
    write_scene,
)
from .scene import random_scene
from .waveform import export_tensor, load_tensor, synthesize_tensor

logger = logging.getLogger(__name__)


def _scenario(args) -> ScenarioConfig:
    config = load_config(args.config) if args.config else default_scenario()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "trials", None) is not None:
        config.trials = args.trials
    if getattr(args, "mode", None):
        config.modes = tuple(args.mode)
    for m in config.modes:
        parse_mode(m)
    return config


def _path_to_dict(p: EstimatedPath) -> dict:
    return {
        "gain_re": p.gain.real,
        "gain_im": p.gain.imag,
        "delay_s": p.delay,
        "aoa_az_rad": p.aoa.azimuth,
        "aoa_el_rad": p.aoa.elevation,
        "aod_az_rad": p.aod.azimuth,
        "aod_el_rad": p.aod.elevation,
        "low_confidence": p.low_confidence,
    }


def cmd_simulate(args) -> int:
    config = _scenario(args)
    scene = random_scene(config.scene, config.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    scene_path = os.path.join(args.out_dir, "scene.json")
    write_scene(scene, scene_path)
    books = config.codebooks()
    written = [scene_path]
    for rx in scene.receivers:
        tensor = synthesize_tensor(
            scene,
            rx.node_id,
            books,
            config.ofdm,
            noise_seed=config.seed * _SEED_STRIDE + rx.node_id,
            effective_snr_db=config.effective_snr_db,
        )
        prefix = os.path.join(args.out_dir, f"tensor_rx{rx.node_id}")
        written.extend(export_tensor(tensor, prefix))
    for path in written:
        print(path)
    return 0


def cmd_estimate(args) -> int:
    try:
        tensor = load_tensor(args.tensor)
    except OSError as exc:
        raise ConfigError(f"cannot read tensor {args.tensor}: {exc}") from exc
    opts = AlsOptions(seed=args.seed if args.seed is not None else 0,
                      restarts=args.restarts)
    paths = estimate_paths(tensor, rank=args.rank, opts=opts, max_rank=args.max_rank)
    doc = {"num_paths": len(paths), "paths": [_path_to_dict(p) for p in paths]}
    text = json.dumps(doc, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_e2e(args) -> int:
    config = _scenario(args)
    modes = [parse_mode(m) for m in config.modes]
    result = run_trial(config, 0, modes)
    text = json.dumps(result.canonical_dict(), sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_montecarlo(args) -> int:
    config = _scenario(args)
    mc = run_montecarlo(config, progress=True)
    if args.out_json:
        write_results(mc, args.out_json)
    if args.out_csv:
        write_csv(mc, args.out_csv)
    summary = mc.summary()
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disacsim",
        description="multistatic sensing simulation and estimation toolkit",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials=False):
        p.add_argument("--config", help="scenario YAML (defaults to the stock scenario)")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument(
            "--mode",
            action="append",
            help="mode to run (disac, disac-ls, isac:<id>[-ls]); repeatable",
        )
        if trials:
            p.add_argument("--trials", type=int, help="override the trial count")

    p = sub.add_parser("simulate", help="draw a scene and export its tensors")
    common(p)
    p.add_argument("--out-dir", default=".", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate paths from an exported tensor")
    p.add_argument("--tensor", required=True, help="tensor file prefix (no extension)")
    p.add_argument("--rank", default="auto", help="model order, or 'auto'")
    p.add_argument("--max-rank", type=int, default=12)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("e2e", help="run one end-to-end trial")
    common(p)
    p.add_argument("--out", help="write the trial result JSON here")
    p.set_defaults(func=cmd_e2e)

    p = sub.add_parser("montecarlo", help="run a Monte Carlo sweep")
    common(p, trials=True)
    p.add_argument("--out-json", help="full results JSON path")
    p.add_argument("--out-csv", help="per-entity error CSV path")
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
