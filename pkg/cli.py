# cli.py
import argparse
import os
import sys
from typing import List, Optional

from constants import CASES, COMMANDS, RUN_LOG_NAME
from core import WORKFLOWS
from fem.errors import InvalidArgumentError
from utils.progress import dump_log, make_push_with_status
from utils.run_config import RunConfig, load_run_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbilap", description="Mixed FEM for the p-Bilaplacian")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--p", type=float, default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--levels", type=int, default=None)
    parser.add_argument("--case", choices=CASES, default=None)
    parser.add_argument("--m", type=int, default=None)
    parser.add_argument("--out", default=None)
    return parser


def _run(cfg: RunConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    push = make_push_with_status()
    _, summary = WORKFLOWS[cfg.command](config=cfg, progress=push)
    dump_log(push.state, os.path.join(cfg.out, RUN_LOG_NAME))

    print(summary)
    return int(summary.get("exit_code", 1))


def cmd_solve(cfg: RunConfig) -> int:
    return _run(cfg)


def cmd_benchmark(cfg: RunConfig) -> int:
    return _run(cfg)


def cmd_psweep(cfg: RunConfig) -> int:
    return _run(cfg)


COMMAND_HANDLERS = {"solve": cmd_solve, "benchmark": cmd_benchmark, "psweep": cmd_psweep}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    overrides = {"p": args.p, "k": args.k, "levels": args.levels, "case": args.case, "m": args.m, "out": args.out}
    try:
        cfg = load_run_config(args.config, command=args.command, overrides=overrides)
    except (FileNotFoundError, InvalidArgumentError) as e:
        parser.error(str(e))

    return COMMAND_HANDLERS[cfg.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
