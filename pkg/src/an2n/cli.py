"""Command line: ``an2n train | report | selftest | baseline``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .envs import ENVIRONMENTS, make_env
from .metrics import write_metrics
from .report import ReportError, report
from .selftest import MUTATIONS, SUITES, run_selftest
from .training import TrainingDiverged, derive_rng, random_policy_returns, run_training

log = logging.getLogger("an2n")


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="an2n", description="Key-state noise exploration for DDPG/SAC.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run seeded training and write one metrics CSV per run")
    t.add_argument("--config", type=Path, help="flat key = value config file")
    t.add_argument("--seed", type=int)
    t.add_argument("--seeds", type=_seeds, help="comma-separated seeds, one run each")
    t.add_argument("--algo", choices=("ddpg", "sac"))
    t.add_argument("--an2n", choices=("on", "off"))
    t.add_argument("--env", choices=sorted(ENVIRONMENTS))
    t.add_argument("--steps", type=int, help="total environment steps")
    t.add_argument("--set", type=_key_value, action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    t.add_argument("--out", type=Path, default=Path("runs"))

    r = sub.add_parser("report", help="summary CSV and learning-curve SVGs from metrics files")
    r.add_argument("--in", dest="inputs", nargs="+", required=True, type=Path, metavar="DIR")
    r.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("selftest", help="run the oracle suites")
    s.add_argument("--suite", action="append", choices=sorted(SUITES), help="run only this suite (repeatable)")
    s.add_argument("--mutate", choices=MUTATIONS, help="inject a known defect; the suites must then fail")

    b = sub.add_parser("baseline", help="random-policy returns for an environment")
    b.add_argument("--env", choices=sorted(ENVIRONMENTS), default="pendulum")
    b.add_argument("--episodes", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    return p


def cmd_train(args) -> int:
    overrides = dict(args.set)
    for key in ("seed", "algo", "an2n", "env"):
        if getattr(args, key) is not None:
            overrides[key] = str(getattr(args, key))
    if args.steps is not None:
        overrides["total_steps"] = str(args.steps)
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(f"an2n train: {exc}", file=sys.stderr)
        return 2
    seeds = args.seeds if args.seeds else [cfg.seed]
    status = 0
    for seed in seeds:
        run_cfg = cfg.replace(seed=seed)
        path = args.out / f"{run_cfg.run_id}.csv"
        try:
            records = run_training(run_cfg)
        except TrainingDiverged as exc:
            write_metrics(exc.records, path)
            (args.out / f"{run_cfg.run_id}.error.txt").write_text(str(exc) + "\n")
            print(f"an2n train: {exc}", file=sys.stderr)
            status = 1
            continue
        write_metrics(records, path)
        last = records[-1]
        print(f"{run_cfg.run_id}: {len(records)} epochs, final eval return {last.eval_return_mean:.2f} -> {path}")
    return status


def cmd_report(args) -> int:
    try:
        rows = report(args.inputs, args.out)
    except ReportError as exc:
        print(f"an2n report: {exc}", file=sys.stderr)
        return 2
    for r in rows:
        print(f"{r.env:<10} {r.arm:<10} {r.mean:10.2f} +- {r.std:8.2f}  (seeds {','.join(map(str, r.seeds))})")
    print(f"wrote {args.out / 'summary.csv'} and curves_*.svg")
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(only=args.suite, mutation=args.mutate)
    return 0 if all(r.passed for r in results) else 1


def cmd_baseline(args) -> int:
    returns = random_policy_returns(make_env(args.env), args.episodes, derive_rng(args.seed, "baseline"))
    print(f"{args.env}: random policy over {args.episodes} episodes: mean {returns.mean():.3f} std {returns.std():.3f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return {"train": cmd_train, "report": cmd_report, "selftest": cmd_selftest, "baseline": cmd_baseline}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
