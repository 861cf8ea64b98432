"""Command-line entry point.

Exit status: 0 on success, 2 for an invalid configuration, 1 for a runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

from . import config as C
from . import experiments as X
from .core import make_rng
from .environments import ConversationalEnv, RankingEnv, ToyEnv
from .msbl import load_multiscale, multiscale_inference
from .pacbayes import reproduce_numerical_example

OUT_ENV = "MULTISCALE_OUT"
DEFAULT_OUT = "runs"


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config (version 1)")
    p.add_argument("--seed", type=int, action="append", help="seed to run; repeat to run several (overrides the config)")
    p.add_argument("--out", type=Path, help=f"output root (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiscale", description="Multi-scale policy learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pacbayes", help="sample savings of an informed Gaussian prior")
    p.add_argument("--json", action="store_true", help="print only the JSON report")
    p.add_argument("--out", type=Path, help="also write summary.json under this directory")

    p = sub.add_parser("toy-rl", help="Q-learning vs multi-scale sample efficiency on the toy problem")
    _common(p)
    p.add_argument("--k", type=int, nargs="+", help="items selected per step (sweep)")

    p = sub.add_parser("conv", help="three-level conversational recommender")
    _common(p)
    p.add_argument("--sigma-f", type=float, nargs="+", help="context feature noise (sweep)")

    p = sub.add_parser("ranking", help="ranking with item-group boosts")
    _common(p)
    p.add_argument("--groups", type=int, nargs="+", help="user/item group count (sweep)")
    p.add_argument("--k", type=int, nargs="+", help="ranking size (sweep)")
    p.add_argument("--sigma-s", type=float, nargs="+", help="ranking score noise (sweep)")

    p = sub.add_parser("eval", help="evaluate a saved multi-scale policy")
    p.add_argument("policy_dir", type=Path)
    p.add_argument("env_config", type=Path)
    p.add_argument("--seed", type=int, help="evaluation seed (default: first seed in the config)")
    p.add_argument("--episodes", type=int, help="test users (default: evaluation.episodes)")
    p.add_argument("--out", type=Path, help="write results.csv under this directory")
    return parser


KIND_OF = {"toy-rl": "toy", "conv": "conversational", "ranking": "ranking"}
SWEEP_FLAGS = {"k": "k", "sigma_f": "sigma_f", "groups": "groups", "sigma_s": "sigma_s"}


def _resolve_config(args) -> dict:
    kind = KIND_OF[args.command]
    if args.config is not None:
        cfg = C.load(args.config)
        if cfg["environment"]["kind"] != kind:
            raise C.ConfigError(f"{args.command} needs a {kind} config, got {cfg['environment']['kind']}")
    else:
        cfg = C.complete(kind, {"version": C.SCHEMA_VERSION, "environment": {"kind": kind}})
    overrides = {}
    for attr, key in SWEEP_FLAGS.items():
        values = getattr(args, attr, None)
        if values:
            overrides[key] = values
    if overrides:
        sweep = dict(cfg["sweep"])
        sweep.update(overrides)
        cfg = C.complete(kind, {**cfg, "sweep": sweep})
    if args.seed:
        cfg = C.complete(kind, {**cfg, "seeds": args.seed})
    if args.jobs < 1:
        raise C.ConfigError("--jobs must be >= 1")
    return cfg


def _out_root(flag: Optional[Path], cfg: Optional[dict] = None) -> Path:
    if flag is not None:
        return flag
    if cfg is not None and cfg.get("output"):
        return Path(cfg["output"])
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def cmd_pacbayes(args) -> int:
    report = reproduce_numerical_example()
    if args.json:
        print(report.to_json())
    else:
        print(report.to_text())
        print(report.to_json())
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "summary.json").write_text(report.to_json(), encoding="utf-8")
    return 0


def cmd_experiment(args) -> int:
    cfg = _resolve_config(args)
    run_dir = X.run(cfg, _out_root(args.out, cfg), jobs=args.jobs, log=lambda m: print(m, file=sys.stderr))
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    if args.command == "ranking":
        print("clicks (L1) vs return rate (L2) per policy")
    print(X.format_table(summary))
    if "sample_efficiency" in summary:
        for label, s in summary["sample_efficiency"].items():
            ratio = "censored" if s["censored"] else f"{s['ratio']:.1f}"
            print(f"{label}: target {s['target']:.3f}  median n0 {s['median_n0']}  median n_L2 {s['median_n_l2']}  ratio {ratio}")
    print(f"results written to {run_dir}")
    return 0


ENV_BUILDERS = {"toy": ToyEnv, "conversational": ConversationalEnv, "ranking": RankingEnv}


def cmd_eval(args) -> int:
    cfg = C.load(args.env_config)
    kind = cfg["environment"]["kind"]
    env = ENV_BUILDERS[kind](C.env_spec(kind, cfg["environment"]["params"]))
    try:
        policy = load_multiscale(args.policy_dir, env)
    except FileNotFoundError as exc:
        raise C.ConfigError(f"no saved policy at {args.policy_dir}: {exc}") from None
    seed = args.seed if args.seed is not None else cfg["seeds"][0]
    episodes = args.episodes if args.episodes is not None else cfg["evaluation"].get("episodes", 300)
    res = multiscale_inference(policy, env, episodes, make_rng(seed).spawn("evaluate"))
    rows = X._rows(f"eval/{args.policy_dir.name}", seed, "msbl", res, episodes, 0.0)
    text = X.results_csv(rows)
    print(text, end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "results.csv").write_text(text, encoding="utf-8")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"pacbayes": cmd_pacbayes, "eval": cmd_eval}.get(args.command, cmd_experiment)
    try:
        return handler(args)
    except C.ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        print(f"error: {exc}", file=sys.stderr)
        if os.environ.get("MULTISCALE_DEBUG"):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
