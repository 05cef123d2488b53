"""Command-line entry point: ``gfnkit {train,eval,gendata,enumerate,bench}``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import runner
from .config import ENV_DEFAULTS, default_config, load_config


def _config(args):
    cfg = load_config(args.config) if args.config else default_config(args.env or "hypergrid")
    if args.env and args.config and args.env != cfg.env_name:
        raise runner.ConfigError(f"--env {args.env} conflicts with config environment {cfg.env_name}")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfnkit", description="GFlowNet training and evaluation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--env", choices=sorted(ENV_DEFAULTS), help="use this environment's defaults when no --config")
        sp.add_argument("--seed", type=int, help="overrides [run] seed")
        sp.add_argument("--out", required=out_required, help="output directory")
        return sp

    common(sub.add_parser("train", help="train a policy and log metrics"))
    ev = common(sub.add_parser("eval", help="evaluate a checkpoint"), out_required=False)
    ev.add_argument("--checkpoint", required=True)
    gd = common(sub.add_parser("gendata", help="generate a dataset"))
    gd.add_argument("--kind", required=True, choices=runner.GENDATA_KINDS)
    common(sub.add_parser("enumerate", help="write the exact terminal distribution"))
    b = common(sub.add_parser("bench", help="training throughput"), out_required=False)
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--repeats", type=int, default=5)
    return p


def _progress(rec):
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items()),
          file=sys.stderr, flush=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "train":
            result = runner.run_train(cfg, args.out, progress=_progress)["final"]
        elif args.command == "eval":
            result = runner.run_eval(args.checkpoint, cfg, args.out)
        elif args.command == "gendata":
            result = [str(p) for p in runner.run_gendata(args.kind, cfg, args.out, args.seed)]
        elif args.command == "enumerate":
            result = runner.run_enumerate(cfg, args.out)
        else:
            result = runner.run_bench(cfg, args.out, args.warmup, args.iters, args.repeats)
    except (runner.ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"gfnkit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
