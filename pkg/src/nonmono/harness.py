"""CLI entry point, metrics persistence, and multi-run orchestration.

Subcommands:

* run       -- execute one configured run, writing windows.csv,
               evals.csv, decisions.csv, config.echo and checkpoints/.
* suite     -- run the same configuration over several seeds, one
               output directory per seed.
* plotdata  -- aggregate run directories into per-panel CSVs (mode
               counts, reward, success rate) with across-seed mean and
               population standard deviation.
* selftest  -- quick invariant battery; exit 0 iff everything holds.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import (
    AgentKind,
    ConfigError,
    ModeId,
    RunConfig,
    TaskName,
    apply_keyvalues,
    config_to_keyvalues,
    default_config,
    load_config_file,
    validate_config,
)
from .engine import run_for
from .runlog import RunLog, WindowRow

__all__ = ["RunLog", "WindowRow", "cli_main", "main", "write_windows",
           "write_evals", "aggregate_plotdata", "run_to_directory"]


class GridMismatch(ValueError):
    """Aggregation inputs do not share a step grid."""


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_windows(log: RunLog, path: str) -> None:
    """Deterministic windows.csv: header plus one 6-decimal row per window."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,random_steps,onpolicy_steps,exploit_steps,"
                 "reward_mean,success_rate\n")
        for row in log.windows:
            fh.write(f"{row.step},{row.random_steps},{row.onpolicy_steps},"
                     f"{row.exploit_steps},{_fmt(row.reward_mean)},"
                     f"{_fmt(row.success_rate)}\n")


def read_windows(path: str) -> List[WindowRow]:
    rows: List[WindowRow] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("step,"):
            raise ValueError(f"{path}: missing windows header")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 6:
                raise ValueError(f"{path}: malformed row {line!r}")
            rows.append(WindowRow(
                step=int(parts[0]),
                random_steps=int(parts[1]),
                onpolicy_steps=int(parts[2]),
                exploit_steps=int(parts[3]),
                reward_mean=float(parts[4]),
                success_rate=float(parts[5]),
            ))
    return rows


def write_evals(log: RunLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,s_e,episodes\n")
        for report in log.evals:
            fh.write(f"{report.step_of_eval},{_fmt(report.s_e)},"
                     f"{report.episodes}\n")


def write_decisions(log: RunLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,mode\n")
        for step, mode in log.decisions:
            fh.write(f"{step},{mode}\n")
        for length in log.burst_lengths:
            fh.write(f"burst,{length}\n")


def write_config_echo(log: RunLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in log.config_echo.items():
            fh.write(f"{key}={value}\n")


def run_to_directory(cfg: RunConfig, out_dir: str) -> RunLog:
    """Execute one run, persisting every artifact under out_dir."""
    from .approx import save_net

    log = run_for(cfg)
    os.makedirs(out_dir, exist_ok=True)
    write_windows(log, os.path.join(out_dir, "windows.csv"))
    write_evals(log, os.path.join(out_dir, "evals.csv"))
    write_decisions(log, os.path.join(out_dir, "decisions.csv"))
    write_config_echo(log, os.path.join(out_dir, "config.echo"))
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    for name, net in log.checkpoints.items():
        save_net(net, os.path.join(ckpt_dir, f"{name}.txt"))
    return log


def aggregate_plotdata(dirs: Sequence[str], out: str) -> None:
    """Per-agent across-seed mean and population std for each panel.

    Emits counts.csv, reward.csv and success.csv under out. All input
    runs must share a task and step grid.
    """
    if not dirs:
        raise GridMismatch("no run directories given")
    by_agent: Dict[str, List[List[WindowRow]]] = {}
    grid: Optional[List[int]] = None
    task: Optional[str] = None
    for d in dirs:
        echo = _read_echo(os.path.join(d, "config.echo"))
        rows = read_windows(os.path.join(d, "windows.csv"))
        steps = [r.step for r in rows]
        if grid is None:
            grid, task = steps, echo.get("task")
        elif steps != grid:
            raise GridMismatch(f"{d}: step grid differs")
        elif echo.get("task") != task:
            raise GridMismatch(f"{d}: task differs")
        by_agent.setdefault(echo.get("agent", "unknown"), []).append(rows)

    os.makedirs(out, exist_ok=True)
    series = {
        "counts": [("random_steps", lambda r: r.random_steps),
                   ("onpolicy_steps", lambda r: r.onpolicy_steps),
                   ("exploit_steps", lambda r: r.exploit_steps)],
        "reward": [("reward_mean", lambda r: r.reward_mean)],
        "success": [("success_rate", lambda r: r.success_rate)],
    }
    for panel, cols in series.items():
        with open(os.path.join(out, f"{panel}.csv"), "w",
                  encoding="utf-8", newline="\n") as fh:
            # std is the population (divide-by-n) convention.
            names = ",".join(
                f"{agent}_{col}_{stat}"
                for agent in sorted(by_agent)
                for col, _ in cols
                for stat in ("mean", "std")
            )
            fh.write(f"step,{names}\n")
            for i, step in enumerate(grid):
                out_vals: List[str] = []
                for agent in sorted(by_agent):
                    runs = by_agent[agent]
                    for _, getter in cols:
                        vals = np.array([getter(rows[i]) for rows in runs],
                                        dtype=float)
                        out_vals.append(_fmt(float(vals.mean())))
                        out_vals.append(_fmt(float(vals.std())))
                fh.write(f"{step},{','.join(out_vals)}\n")


def _read_echo(path: str) -> Dict[str, str]:
    echo: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                echo[key] = value
    return echo


# ----------------------------------------------------------------------
# CLI
# ----------------------------------------------------------------------

def _default_out_root() -> str:
    return os.environ.get("NONMONO_OUT", "runs")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nonmono",
        description="Multi-mode exploration agents on desk-scale tasks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--task", choices=[t.value for t in TaskName])
        p.add_argument("--agent", choices=[a.value for a in AgentKind])
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--config", metavar="FILE")
        p.add_argument("--no-reward-mod", action="store_true")
        p.add_argument("--no-loss-mod", action="store_true")
        p.add_argument("--out", default=None)

    run_p = sub.add_parser("run", help="execute one configured run")
    add_run_flags(run_p)

    suite_p = sub.add_parser("suite", help="multi-seed batch of runs")
    add_run_flags(suite_p)
    suite_p.add_argument("--seeds", type=int, default=5,
                         help="number of seeds (0..n-1)")
    suite_p.add_argument("--jobs", type=int, default=1)

    plot_p = sub.add_parser("plotdata", help="aggregate logs to plot CSVs")
    plot_p.add_argument("dirs", nargs="+")
    plot_p.add_argument("--out", default=None)

    sub.add_parser("selftest", help="run the quick invariant battery")
    return parser


def _config_from_args(args) -> RunConfig:
    task = TaskName(args.task) if args.task else TaskName.PUSH
    agent = AgentKind(args.agent) if args.agent else AgentKind.AUTO
    cfg = default_config(task, agent)
    if args.config:
        cfg = load_config_file(args.config, base=cfg)
        # Explicit flags still override file keys.
        if args.task:
            cfg = apply_keyvalues(cfg, {"task": args.task})
        if args.agent:
            cfg = apply_keyvalues(cfg, {"agent": args.agent})
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.steps is not None:
        cfg = replace(cfg, total_steps=args.steps)
    if args.no_reward_mod:
        cfg = replace(cfg, reward_mod_enabled=False)
    if args.no_loss_mod:
        cfg = replace(cfg, loss_mod_enabled=False)
    return validate_config(cfg)


def _run_one(cfg: RunConfig, out_dir: str) -> str:
    run_to_directory(cfg, out_dir)
    return out_dir


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            out = args.out or os.path.join(
                _default_out_root(),
                f"{cfg.agent.value}-{cfg.task.value}-seed{cfg.seed}",
            )
            _run_one(cfg, out)
            print(f"run complete: {out}")
            return 0
        if args.command == "suite":
            base = _config_from_args(args)
            root = args.out or _default_out_root()
            jobs = max(1, args.jobs)
            configs = [replace(base, seed=s) for s in range(args.seeds)]
            outs = [
                os.path.join(root,
                             f"{c.agent.value}-{c.task.value}-seed{c.seed}")
                for c in configs
            ]
            if jobs == 1:
                for cfg, out in zip(configs, outs):
                    _run_one(cfg, out)
                    print(f"run complete: {out}")
            else:
                with concurrent.futures.ProcessPoolExecutor(jobs) as pool:
                    for out in pool.map(_run_one, configs, outs):
                        print(f"run complete: {out}")
            return 0
        if args.command == "plotdata":
            out = args.out or os.path.join(_default_out_root(), "plotdata")
            aggregate_plotdata(args.dirs, out)
            print(f"plot data written: {out}")
            return 0
        if args.command == "selftest":
            return 0 if _selftest() else 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


def _selftest() -> bool:
    """Cheap invariant battery printing one line per check."""
    from . import selftest as st

    return st.run_all()


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
