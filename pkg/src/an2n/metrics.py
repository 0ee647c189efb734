"""Per-epoch metrics records and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

HEADER = (
    "run_id,seed,env,algo,an2n,epoch,step,eval_return_mean,eval_return_std,"
    "key_fraction,sim_threshold,fifo_len,critic_loss,wall_ms"
)


@dataclass
class MetricsRecord:
    run_id: str
    seed: int
    env: str
    algo: str
    an2n: bool
    epoch: int
    step: int
    eval_return_mean: float
    eval_return_std: float
    key_fraction: float
    sim_threshold: float
    fifo_len: int
    critic_loss: float
    wall_ms: float

    @property
    def arm(self) -> str:
        return f"{self.algo}+an2n" if self.an2n else self.algo


assert HEADER == ",".join(f.name for f in fields(MetricsRecord))


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "on" if value else "off"
    if isinstance(value, (float, np.floating)):
        # repr of a plain float is locale-independent and round-trips exactly
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def format_metrics(records) -> str:
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    for r in records:
        w.writerow([_fmt(v) for v in astuple(r)])
    return buf.getvalue()


def write_metrics(records, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="ascii") as fh:
            fh.write(format_metrics(records))
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def _parse(name: str, kind, raw: str):
    if kind is bool or kind == "bool":
        return raw == "on"
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw


def read_metrics(path) -> list[MetricsRecord]:
    path = Path(path)
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if not rows or ",".join(rows[0]) != HEADER:
        raise ValueError(f"{path}: not a metrics file (header mismatch)")
    out = []
    for row in rows[1:]:
        out.append(MetricsRecord(*(_parse(f.name, f.type, raw) for f, raw in zip(fields(MetricsRecord), row))))
    return out
