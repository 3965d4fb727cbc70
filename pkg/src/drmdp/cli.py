"""Command-line entry point: ``drmdp verify|train|heatmap|fixtures``.

Exit status is 0 only when the command fully succeeds.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import spec_io
from .config import ConfigError, load_config
from .counterexamples import FIXTURE_NAMES, FixtureMismatch, build_fixture
from .envs import PointReachConfig, export_heatmap
from .hc import Actor
from .nn import load_params
from .train import DivergenceError, layout_for, run
from .verify import SUITES, report, run_suite


def _verify(args) -> int:
    checks = run_suite(args.suite)
    print(report(checks))
    return 0 if all(c.passed for c in checks) else 1


def _train(args) -> int:
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    out_dir = Path(args.out or cfg.output_dir)
    for seed in seeds:
        try:
            res = run(cfg, seed, out_dir)
        except DivergenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        last = res.rows[-1]
        msg = (f"seed={seed} algorithm={cfg.algorithm} env_steps={last.env_step} return={last.ret:g} "
               f"steps_to_target={last.steps_to_target} metrics={res.metrics_path}")
        if res.variance:
            msg += f" var_hc={res.variance['hc_variance']:.6g} var_mono={res.variance['monolithic_variance']:.6g}"
        print(msg)
    return 0


def _heatmap(args) -> int:
    try:
        nets, meta = load_params(args.snapshot)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if "b" not in nets or "actor" not in nets:
        print("error: snapshot has no singleton b network (train with structure = singleton)", file=sys.stderr)
        return 2
    env_cfg = PointReachConfig(size=float(meta["size"]), interval=int(meta["interval"]),
                               step_limit=int(meta["step_limit"]))
    actor = Actor(nets["actor"], layout_for(env_cfg))
    grid = export_heatmap(nets["b"], env_cfg, lambda pos, ph: actor.act(pos / env_cfg.size, ph), args.out)
    with np.printoptions(precision=3, suppress=True, linewidth=120):
        print(grid[::-1])
    return 0


def _fixtures(args) -> int:
    try:
        fx = build_fixture(args.name, args.gamma)
    except FixtureMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"fixture {fx.name} gamma={args.gamma}")
    for key, expected, computed, source in fx.table_rows():
        print(f"  {key:24s} expected={expected:.12g} computed={computed:.12g} ({source})")
    if args.json:
        spec_io.save_spec(fx.spec, args.json)
        print(f"spec written to {args.json}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drmdp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run invariant suites")
    v.add_argument("--suite", choices=SUITES, default="all")
    v.set_defaults(func=_verify)

    t = sub.add_parser("train", help="train on Point Reach from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None, help="defaults to every seed in the config")
    t.add_argument("--out", default=None, help="overrides [run] output_dir")
    t.set_defaults(func=_train)

    h = sub.add_parser("heatmap", help="10x10 grid of the singleton b network")
    h.add_argument("--snapshot", required=True)
    h.add_argument("--out", required=True)
    h.set_defaults(func=_heatmap)

    f = sub.add_parser("fixtures", help="build a counterexample and show its expected values")
    f.add_argument("--name", choices=FIXTURE_NAMES, required=True)
    f.add_argument("--gamma", type=float, default=0.99)
    f.add_argument("--json", default=None, help="also write the spec as JSON")
    f.set_defaults(func=_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
