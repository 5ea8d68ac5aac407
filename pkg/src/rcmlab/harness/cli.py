"""Command line entry point.

Exit codes: 0 pass, 1 check failure, 2 usage/config error, 3 resource error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import fields

import numpy as np

from ..cluster import SmallGiantWarning, decompose
from ..env import Environment
from ..errors import (BoundaryError, ConfigError, DomainError, HorizonError, ParameterError, RcmError,
                      ResourceError, TopologyError)
from .config import ExperimentConfig
from .experiments import run_experiment
from .output import _jsonable

SUBCOMMANDS = {"heat": "heat-decay", "coarse": "coarse-diagnostics", "spectral": "spectral-verify",
               "trap": "trap-conditional", "sweep": "proposition-sweep", "verify": "verify-all"}
USAGE_ERRORS = (ConfigError, ParameterError, DomainError, HorizonError, BoundaryError, TopologyError)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its fields")
    p.add_argument("--seed", type=int, dest="master_seed", help="master seed (unsigned 64-bit)")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="run directory")
    p.add_argument("--override-horizon", action="store_true", default=None)
    p.add_argument("--dimension", type=int)
    p.add_argument("--side", type=int)
    p.add_argument("--topology", choices=["torus", "free"])
    p.add_argument("--law", type=json.loads, help='e.g. \'{"kind": "uniform01"}\'')
    p.add_argument("--constant", type=float)
    p.add_argument("--traps", type=json.loads, help='e.g. \'[{"edge": [1, 2], "scale": 16}]\'')
    p.add_argument("--env-file")
    p.add_argument("--env-seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--origin", type=int)
    p.add_argument("--n-range", type=int, nargs="+", help="LO HI, or an explicit list of n")
    p.add_argument("--theta", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--delta", type=int)
    p.add_argument("--mc-budget", type=int)
    p.add_argument("--mode", choices=["exactBridge", "rejection"])
    p.add_argument("--rho", type=float)
    p.add_argument("--ell", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcmlab", description="Random conductance model experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    env = sub.add_parser("env", help="generate or inspect an environment file")
    env_sub = env.add_subparsers(dest="action", required=True)
    gen = env_sub.add_parser("generate", help="write the configured environment as JSON")
    _add_common(gen)
    gen.add_argument("--compact", action="store_true", help="store provenance only, not every edge")
    ins = env_sub.add_parser("inspect", help="summarize an environment file")
    ins.add_argument("path")
    ins.add_argument("--alpha", type=float, default=None)
    for name, kind in SUBCOMMANDS.items():
        _add_common(sub.add_parser(name, help=kind))
    return parser


def config_from_args(args: argparse.Namespace, kind: str | None) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    data = cfg.to_dict()
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    if kind is not None:
        data["kind"] = kind
    return ExperimentConfig.from_dict(data)


def _inspect(path: str, alpha: float | None) -> dict:
    env = Environment.read(path)
    c = env.conductances[env.box.edge_mask()]
    out = {"box": env.box.to_dict(), "provenance": env.provenance, "edges": int(c.size),
           "min": float(c.min()), "max": float(c.max()), "mean": float(c.mean())}
    if alpha is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallGiantWarning)
            out["decomposition"] = decompose(env, alpha).report()
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        if args.command == "env":
            if args.action == "inspect":
                print(json.dumps(_inspect(args.path, args.alpha), indent=1))
                return 0
            cfg = config_from_args(args, None).validate()
            env = cfg.build_env()
            target = args.out or "environment.json"
            env.write(target, explicit=not args.compact)
            print(target)
            return 0
        cfg = config_from_args(args, SUBCOMMANDS[args.command])
        if cfg.out is None:
            cfg.out = f"runs/{cfg.kind}-seed{cfg.master_seed}"
        report, code = run_experiment(cfg)
        summary = {"kind": cfg.kind, "passed": report.get("passed", True), "out": cfg.out}
        if cfg.kind == "verify-all":
            summary["first_failure"] = report["first_failure"]
        print(json.dumps(_jsonable(summary)))
        return code
    except ResourceError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return 3
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RcmError, OSError, json.JSONDecodeError, np.linalg.LinAlgError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
