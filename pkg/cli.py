#!/usr/bin/env python3
"""
barrier-diffuser command line.

    python cli.py gen-data --config data/configs/maze_default.json
    python cli.py train    --config data/configs/maze_default.json
    python cli.py bench    --config data/configs/maze_default.json --episodes 10
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from nodes import COMMANDS, NODE_CLASS_MAPPINGS  # noqa: E402
from utils.common import ARTIFACT_NAME, to_jsonable  # noqa: E402
from utils.data_loader import load_run_config  # noqa: E402
from utils.errors import BarrierDiffuserError  # noqa: E402

logger = logging.getLogger(ARTIFACT_NAME)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=ARTIFACT_NAME, description="Safe trajectory generation with diffusion invariance")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, node_name in COMMANDS.items():
        node = NODE_CLASS_MAPPINGS[node_name]
        p = sub.add_parser(command, help=(node.__doc__ or node_name).strip().splitlines()[0])
        p.add_argument("--config", type=Path, default=None, help="Run configuration (JSON)")
        p.add_argument("--method", default=None, help="Sampling method (off, truncate, guided, guided_eps, ros, res, tvs)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--episodes", type=int, default=None)
        p.add_argument("--out", default=None, help="Output directory")
        p.add_argument("--progress", action="store_true", help="Show progress bars")
        p.add_argument("--verbose", action="store_true", help="Debug logging, including per-step diagnostics")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "benchmark.episodes": args.episodes,
        "output_dir": args.out,
        "progress": True if args.progress else None,
    }
    if args.method is not None:
        overrides["methods"] = [args.method]
        overrides["plan.method"] = args.method
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        config = load_run_config(args.config, overrides_from_args(args))
        node = NODE_CLASS_MAPPINGS[COMMANDS[args.command]]()
        result = getattr(node, node.FUNCTION)(config)
    except BarrierDiffuserError as e:
        _error_record(e, args.command)
        return 1
    except Exception as e:  # noqa: BLE001
        logger.exception(f"Unexpected failure in '{args.command}'")
        _error_record(e, args.command)
        return 2
    print(json.dumps(to_jsonable(dict(zip(node.RETURN_NAMES, result))), indent=2, default=str))
    return 0


def _error_record(error: Exception, command: str) -> None:
    record = {"error": type(error).__name__, "message": str(error), "command": command}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
