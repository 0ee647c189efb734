"""Aggregate metrics CSVs into a summary table and per-environment learning-curve SVGs."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import HEADER, MetricsRecord, read_metrics

ARM_ORDER = ("ddpg", "ddpg+an2n", "sac", "sac+an2n")


class ReportError(ValueError):
    pass


@dataclass
class SummaryRow:
    env: str
    arm: str
    mean: float
    std: float
    seeds: tuple[int, ...]


@dataclass
class Curve:
    steps: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    seeds: tuple[int, ...]


def _arm_key(arm: str):
    return (ARM_ORDER.index(arm), arm) if arm in ARM_ORDER else (len(ARM_ORDER), arm)


def find_metric_files(inputs) -> list[Path]:
    files = []
    for p in map(Path, inputs):
        candidates = sorted(p.glob("*.csv")) if p.is_dir() else [p]
        for f in candidates:
            with open(f, encoding="ascii", errors="replace") as fh:
                if fh.readline().strip() == HEADER:
                    files.append(f)
    if not files:
        raise ReportError(f"no metrics files found in {', '.join(map(str, inputs))}")
    return files


def group_runs(records_by_file: dict[Path, list[MetricsRecord]]) -> dict[tuple[str, str], dict[int, list[MetricsRecord]]]:
    """``{(env, arm): {seed: records}}`` with consistency checks across envs, arms and seeds."""
    runs: dict[tuple[str, str], dict[int, list[MetricsRecord]]] = defaultdict(dict)
    problems = []
    for path, recs in records_by_file.items():
        if not recs:
            problems.append(f"{path}: no records")
            continue
        keys = {(r.env, r.arm, r.seed) for r in recs}
        if len(keys) != 1:
            problems.append(f"{path}: mixes runs {sorted(keys)}")
            continue
        env, arm, seed = keys.pop()
        if seed in runs[(env, arm)]:
            problems.append(f"{path}: duplicate run env={env} arm={arm} seed={seed}")
            continue
        runs[(env, arm)][seed] = sorted(recs, key=lambda r: r.step)

    envs = sorted({e for e, _ in runs})
    arms_by_env = {e: sorted((a for ee, a in runs if ee == e), key=_arm_key) for e in envs}
    all_arms = sorted({a for _, a in runs}, key=_arm_key)
    for e in envs:
        if arms_by_env[e] != all_arms:
            problems.append(f"env {e} has arms {arms_by_env[e]}, expected {all_arms}")
        seed_sets = {a: tuple(sorted(runs[(e, a)])) for a in arms_by_env[e]}
        if len(set(seed_sets.values())) > 1:
            problems.append(f"env {e} seed sets differ across arms: {seed_sets}")
        for a in arms_by_env[e]:
            grids = {s: tuple(r.step for r in recs) for s, recs in runs[(e, a)].items()}
            if len(set(grids.values())) > 1:
                problems.append(f"env {e} arm {a}: seeds disagree on evaluation steps")
    if problems:
        raise ReportError("inconsistent metrics inputs:\n  " + "\n  ".join(problems))
    return dict(runs)


def learning_curve(by_seed: dict[int, list[MetricsRecord]]) -> Curve:
    seeds = tuple(sorted(by_seed))
    values = np.array([[r.eval_return_mean for r in by_seed[s]] for s in seeds])
    steps = np.array([r.step for r in by_seed[seeds[0]]])
    return Curve(steps, values.mean(axis=0), values.std(axis=0), seeds)


def summarize(runs) -> list[SummaryRow]:
    rows = []
    for (env, arm) in sorted(runs, key=lambda k: (k[0], _arm_key(k[1]))):
        finals = np.array([recs[-1].eval_return_mean for _, recs in sorted(runs[(env, arm)].items())])
        rows.append(SummaryRow(env, arm, float(finals.mean()), float(finals.std()), tuple(sorted(runs[(env, arm)]))))
    return rows


def write_summary(rows: list[SummaryRow], path) -> None:
    """Environments as rows, one ``<arm>_mean`` / ``<arm>_std`` column pair per arm."""
    arms = sorted({r.arm for r in rows}, key=_arm_key)
    envs = sorted({r.env for r in rows})
    cell = {(r.env, r.arm): r for r in rows}
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["env", *[f"{a}_{stat}" for a in arms for stat in ("mean", "std")], "seeds"])
        for e in envs:
            row = [e]
            for a in arms:
                r = cell[(e, a)]
                row += [repr(r.mean), repr(r.std)]
            row.append(" ".join(str(s) for s in cell[(e, arms[0])].seeds))
            w.writerow(row)


def plot_curves(env: str, curves: dict[str, Curve], path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.fonttype": "path", "svg.hashsalt": "an2n", "font.size": 10}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for arm in sorted(curves, key=_arm_key):
            c = curves[arm]
            line, = ax.plot(c.steps, c.mean, label=f"{arm} (n={len(c.seeds)})", lw=1.5, gid=f"curve-{arm}")
            ax.fill_between(c.steps, c.mean - c.std, c.mean + c.std, color=line.get_color(), alpha=0.2, lw=0, gid=f"band-{arm}")
        ax.set_xlabel("environment steps")
        ax.set_ylabel("mean evaluation return")
        ax.set_title(env)
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def report(inputs, out_dir) -> list[SummaryRow]:
    files = find_metric_files(inputs)
    runs = group_runs({f: read_metrics(f) for f in files})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = summarize(runs)
    write_summary(rows, out / "summary.csv")
    for env in sorted({e for e, _ in runs}):
        curves = {arm: learning_curve(by_seed) for (e, arm), by_seed in runs.items() if e == env}
        plot_curves(env, curves, out / f"curves_{env}.svg")
    return rows
