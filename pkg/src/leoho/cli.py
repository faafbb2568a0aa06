"""Command-line entry point.

Subcommands: run | sweep | eval | behavior | ablation.  Exit codes: 0 on
success, 2 for configuration errors, 3 for runtime failures.  The default
output directory comes from --out, then the spec file, then the
LEOHO_OUTPUT_DIR environment variable, then ./leoho_out.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from leoho import experiments
from leoho.env import ConfigError
from leoho.experiments import ExperimentSpec, parse_spec_file
from leoho.training import CheckpointError, load_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leoho", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--spec", help="experiment spec file (flat key = value)")
        p.add_argument("--agent", choices=experiments.AGENT_KINDS)
        p.add_argument("--seed", type=int, help="master seed; run i uses seed + i")
        p.add_argument("--episodes", type=int, help="evaluation episode count")
        p.add_argument("--train-episodes", type=int, help="training episode count")
        p.add_argument("--out", help="output directory")
        p.add_argument("--actors", type=int, help="actor count for training")
        p.add_argument("--vtrace", choices=["on", "off"], help="off-policy correction")
        p.add_argument("--nu", help="reward delay weight, e.g. 1, 5, 1/20")
        p.add_argument("--rb-ratio", type=float, help="blocks per terminal on each target")
        p.add_argument("--preamble-ratio", type=float, help="signatures per terminal")
        p.add_argument("--mask", help="feature mask name(s), comma separated")
        p.add_argument("--checkpoint", help="policy checkpoint to load")
        p.add_argument("--mode", choices=["greedy", "sample"], help="learned-policy decision mode")
        p.add_argument("--case", help="named resource regime, e.g. case1..case4")

    run_p = sub.add_parser("run", help="train if needed, then evaluate and report")
    eval_p = sub.add_parser("eval", help="evaluate only (learned agent needs --checkpoint)")
    sweep_p = sub.add_parser("sweep", help="evaluate across one parameter's values")
    behavior_p = sub.add_parser("behavior", help="request/wait statistics of a checkpoint")
    ablation_p = sub.add_parser("ablation", help="train one policy per feature mask")
    for p in (run_p, eval_p, sweep_p, behavior_p, ablation_p):
        add_common(p)
    sweep_p.add_argument("--parameter", help="sweep parameter, e.g. rb_ratio")
    sweep_p.add_argument("--values", help="comma-separated sweep values")
    return parser


def _load_spec(args) -> ExperimentSpec:
    spec = parse_spec_file(args.spec) if args.spec else ExperimentSpec()
    scenario = spec.scenario
    training = spec.training

    if args.case:
        scenario = experiments.scenario_for_case(args.case, scenario)
    if args.rb_ratio is not None:
        scenario = experiments.scenario_with_ratios(scenario, rb_ratio=args.rb_ratio)
    if args.preamble_ratio is not None:
        scenario = experiments.scenario_with_ratios(scenario, preamble_ratio=args.preamble_ratio)
    if args.nu is not None:
        scenario = dataclasses.replace(scenario, nu=experiments._parse_number(args.nu))
    if args.command != "ablation" and args.mask:
        if args.mask not in experiments.ABLATION_MASKS:
            raise ConfigError("mask", f"unknown mask {args.mask!r}")
        scenario = dataclasses.replace(scenario, features=experiments.ABLATION_MASKS[args.mask])
    if args.actors is not None:
        training = dataclasses.replace(training, actors_count=args.actors)
    if args.vtrace is not None:
        training = dataclasses.replace(training, vtrace_enabled=args.vtrace == "on")

    updates: dict = {"scenario": scenario, "training": training}
    if args.agent:
        updates["agent"] = args.agent
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.episodes is not None:
        updates["eval_episodes"] = args.episodes
    if args.train_episodes is not None:
        updates["train_episodes"] = args.train_episodes
    if args.checkpoint:
        updates["checkpoint"] = args.checkpoint
    if args.mode:
        updates["eval_mode"] = args.mode
    if args.out:
        updates["output_dir"] = args.out
    return dataclasses.replace(spec, **updates)


def _out_dir(spec: ExperimentSpec) -> Path:
    target = spec.output_dir or os.environ.get("LEOHO_OUTPUT_DIR") or "leoho_out"
    return Path(target)


def _print_row(row: dict) -> None:
    keys = ("agent", "sum_delay_mean", "sum_collision_rb_mean", "sum_collision_prach_mean", "ho_success_mean", "return_mean")
    print("  ".join(f"{k}={row[k]}" for k in keys))


def _dispatch(args) -> int:
    spec = _load_spec(args)
    out_dir = _out_dir(spec)

    if args.command == "run":
        artifacts = experiments.run_experiment(spec, out_dir)
        _print_row(artifacts["row"])
        print(f"artifacts in {out_dir}")
        return EXIT_OK

    if args.command == "eval":
        if spec.agent == "dho" and not spec.checkpoint:
            raise ConfigError("checkpoint", "eval of the learned agent needs --checkpoint")
        spec = dataclasses.replace(spec, train_episodes=0)
        artifacts = experiments.run_experiment(spec, out_dir)
        _print_row(artifacts["row"])
        return EXIT_OK

    if args.command == "sweep":
        parameter = args.parameter or spec.sweep_parameter
        if not parameter:
            raise ConfigError("sweep.parameter", "sweep needs --parameter or sweep.parameter")
        if args.values:
            values = tuple(experiments._parse_number(v) for v in args.values.split(","))
        else:
            values = spec.sweep_values
        if not values:
            raise ConfigError("sweep.values", "sweep needs --values or sweep.values")
        result = experiments.sweep_experiment(spec, parameter, values, out_dir)
        for row in result["rows"]:
            _print_row(row)
        print(f"sweep table: {result['sweep']}")
        return EXIT_OK

    if args.command == "behavior":
        if not spec.checkpoint:
            raise ConfigError("checkpoint", "behavior stats need --checkpoint")
        params = load_checkpoint(spec.checkpoint, spec.scenario)
        request_fraction, wait_fraction = experiments.behavior_stats(
            params, spec.scenario, spec.eval_episodes, spec.master_seed
        )
        print(f"request_fraction={request_fraction:.4f} no_request_fraction={wait_fraction:.4f}")
        return EXIT_OK

    if args.command == "ablation":
        masks = args.mask.split(",") if args.mask else list(experiments.ABLATION_MASKS)
        result = experiments.ablation(
            spec.scenario,
            spec.training,
            masks,
            episodes=spec.train_episodes,
            master_seed=spec.master_seed,
            out_dir=out_dir,
        )
        print(f"ablation curves: {result['path']}")
        return EXIT_OK

    raise ConfigError("command", f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
