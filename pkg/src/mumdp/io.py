"""CSV and report writers.  Column layouts are documented in docs/FORMATS.md."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dual import PriceTrace
from .mdp import Solution
from .model import LocalModel
from .sim import MetricsLog


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return " ".join(fmt(x) for x in v)
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def write_config(path: Path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(doc))
    return path


def write_report(path: Path, items: Sequence[tuple[str, object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k}: {fmt(v)}\n" for k, v in items))
    return path


VALUE_HEADER = ["phase", "buffers", "channel", "value", "x", "y"]


def write_values(path: Path, sol: Solution) -> Path:
    return write_csv(path, VALUE_HEADER, sol.table())


TRACE_HEADER = ["k", "lambda", "subgradient", "dual_value"]


def write_trace(path: Path, trace: PriceTrace) -> Path:
    return write_csv(path, TRACE_HEADER, trace.rows())


USER_HEADER = ["slot", "phase", "buffers", "channel", "requested_x", "granted_x", "schedule", "utility",
               "lambda", "cumulative_discounted_utility"]
AGGREGATE_HEADER = ["slot", "total_requested", "total_granted", "total_utility", "lambda",
                    "cumulative_discounted_utility"]


def write_metrics(out_dir: Path, log: MetricsLog, models: Sequence[LocalModel]) -> list[Path]:
    """One CSV per user plus one aggregate CSV."""
    out_dir = Path(out_dir)
    cum = log.cumulative_discounted()
    paths = []
    for i, (name, m) in enumerate(zip(log.names, models)):
        def rows(i=i, m=m):
            for t in range(log.horizon):
                s = int(log.state[i, t])
                k = int(m.sched_ptr[s] + log.sched[i, t])
                yield (t, int(m.state_phase[s]), m.buffers_of(s), int(m.state_h[s]), log.req[i, t],
                       log.grant[i, t], m.sched_y[k], log.util[i, t], log.lam[i, t], cum[i, t])
        paths.append(write_csv(out_dir / f"metrics_{name}.csv", USER_HEADER, rows()))
    tot = cum.sum(axis=0)

    def agg():
        for t in range(log.horizon):
            yield (t, log.req[:, t].sum(), log.grant[:, t].sum(), log.util[:, t].sum(), log.lam[0, t], tot[t])
    paths.append(write_csv(out_dir / "metrics_aggregate.csv", AGGREGATE_HEADER, agg()))
    return paths
