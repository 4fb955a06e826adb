"""Command-line entry point: ``difo <command> [options]``.

Failures print a single ``error: <kind>: <message>`` line to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .discriminators import load_discriminator
from .envs import generate_expert, make_env, read_dataset, write_dataset
from .trainer import evaluate, load_config, load_policy, train


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="run configuration file ([section] key = value)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="replace one config field; repeatable")
    return p


def _out(args, what: str) -> Path:
    if not args.out:
        raise CliError(f"--out is required for {what}")
    return Path(args.out)


def _writable(path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot create {path.parent}: {e.strerror}") from None
    return path


def _write_text(path: Path, text: str) -> None:
    try:
        _writable(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise CliError(f"cannot write {path}: {e.strerror}") from None


def _config(args):
    if not args.config:
        raise CliError("--config is required")
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    return load_config(args.config, overrides)


def cmd_gen_expert(args) -> str:
    out = _out(args, "gen-expert")
    ds = generate_expert(make_env(args.env), args.n, seed=args.seed if args.seed is not None else 0)
    try:
        write_dataset(_writable(out), ds)
    except OSError as e:
        raise CliError(f"cannot write {out}: {e.strerror}") from None
    return f"wrote {len(ds)} transitions ({ds.n_trajectories} trajectories) to {out}"


def cmd_train(args) -> str:
    cfg = _config(args)
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    if not cfg.out_dir:
        raise CliError("no output directory: pass --out or set train.out_dir")
    _, rows = train(cfg, progress=True)
    last = next((r for r in reversed(rows) if r.get("eval_success") is not None), {})
    return json.dumps({"run_dir": cfg.out_dir, "rounds": len(rows),
                       "eval_success": last.get("eval_success"), "eval_return": last.get("eval_return")})


def cmd_eval(args) -> str:
    policy = load_policy(args.checkpoint)
    env = make_env(args.env, args.action_noise)
    res = evaluate(policy, env, args.episodes, seed=args.seed if args.seed is not None else 0)
    text = json.dumps(res)
    if args.out:
        _write_text(Path(args.out), text + "\n")
    return text


def cmd_viz_reward(args) -> str:
    out = _out(args, "viz-reward")
    disc = load_discriminator(args.checkpoint)
    grid = analysis.reward_grid(disc, args.resolution, tuple(args.s_range), tuple(args.s_next_range),
                                seed=args.seed if args.seed is not None else 0)
    _write_text(out, analysis.grid_csv(grid))
    return f"wrote {grid.resolution ** 2} cells to {out}"


def cmd_gen_traj(args) -> str:
    out = _out(args, "gen-traj")
    disc = load_discriminator(args.checkpoint)
    expert = read_dataset(args.expert)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    starts, idx = analysis.expert_starts(expert, args.n, rng)
    trajs = analysis.generate_trajectories(disc, starts, args.max_len, rng, idx)
    for i, tr in enumerate(trajs):
        _write_text(out / f"traj_{i:04d}.csv", analysis.trajectory_csv(tr))
    return f"wrote {len(trajs)} trajectories to {out}"


def cmd_ablation(args) -> str:
    out = _out(args, "ablation")
    cfg = _config(args)
    expert = read_dataset(cfg.expert_path)
    seeds = args.seeds or [cfg.seed]
    rows = analysis.run_ablation(args.study, cfg, expert, seeds, out_dir=out / "runs")
    _write_text(out / f"{args.study}.csv", analysis.ablation_csv(rows))
    return f"wrote {len(rows)} rows to {out / (args.study + '.csv')}"


def cmd_plot(args) -> str:
    out = _out(args, "plot")
    _writable(out)
    if args.kind == "curves":
        analysis.plot_curves(args.inputs, out, y=args.y)
    elif args.kind == "heatmap":
        if len(args.inputs) != 1:
            raise CliError("heatmap takes exactly one reward-grid CSV")
        analysis.plot_heatmap(args.inputs[0], out)
    else:
        analysis.plot_scatter(args.inputs, out)
    return f"wrote {out}"


def build_parser() -> argparse.ArgumentParser:
    g = _global_flags()
    p = _Parser(prog="difo", description="Diffusion-discriminator imitation from observation. "
                "Global flags (--config, --seed, --out, --override) follow the command name.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("gen-expert", parents=[g], help="write a scripted-expert dataset")
    c.add_argument("--env", required=True)
    c.add_argument("--n", type=int, required=True, help="number of trajectories")
    c.set_defaults(fn=cmd_gen_expert)

    c = sub.add_parser("train", parents=[g], help="adversarial training from a config file")
    c.set_defaults(fn=cmd_train)

    c = sub.add_parser("eval", parents=[g], help="evaluate a saved policy with mean actions")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--env", required=True)
    c.add_argument("--episodes", type=int, default=50)
    c.add_argument("--action-noise", type=float, default=0.0)
    c.set_defaults(fn=cmd_eval)

    c = sub.add_parser("viz-reward", parents=[g], help="reward on a grid over a 1-D state space")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--resolution", type=int, default=101)
    c.add_argument("--s-range", type=float, nargs=2, default=(0.0, 1.0))
    c.add_argument("--s-next-range", type=float, nargs=2, default=(-1.0, 2.0))
    c.set_defaults(fn=cmd_viz_reward)

    c = sub.add_parser("gen-traj", parents=[g], help="autoregressive next-state generation")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--expert", required=True, help="dataset supplying start states")
    c.add_argument("--n", type=int, default=50)
    c.add_argument("--max-len", type=int, default=60)
    c.set_defaults(fn=cmd_gen_traj)

    c = sub.add_parser("ablation", parents=[g], help="run one ablation study over seeds")
    c.add_argument("--study", required=True, choices=analysis.STUDIES)
    c.add_argument("--seeds", type=int, nargs="*")
    c.set_defaults(fn=cmd_ablation)

    c = sub.add_parser("plot", parents=[g], help="learning curves, reward heatmaps, trajectories")
    c.add_argument("--kind", required=True, choices=("curves", "heatmap", "scatter"))
    c.add_argument("--y", default="eval_success")
    c.add_argument("inputs", nargs="+")
    c.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        msg = args.fn(args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except Exception as e:  # noqa: BLE001 - every failure becomes one parseable line
        text = " ".join(str(e).split()) or repr(e)
        print(f"error: {type(e).__name__}: {text}", file=sys.stderr)
        return 2 if isinstance(e, CliError) and text.startswith("usage:") else 1
    if msg:
        print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
