"""Placement metrics, decision-time measurement and report files."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .placement import US_PER_MS

GAMMA_GRID = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5)
C_GRID = (3, 5, 10, 15)


def latency_reduction(method_cost, baseline_cost):
    if not baseline_cost > 0:
        raise ValidationError("baseline cost must be positive")
    return 1.0 - method_cost / baseline_cost


def satisfaction_ratio(inst, assignment, gamma):
    """Share of users whose route latency is at most ``gamma`` ms (compared in integer us)."""
    total = inst.demand
    if total == 0:
        return 1.0
    ok = inst.l_us <= int(round(gamma * US_PER_MS))
    return float(assignment.v[ok].sum()) / total


def satisfaction_curve(inst, assignment, gammas=GAMMA_GRID):
    return np.array([satisfaction_ratio(inst, assignment, g) for g in gammas])


def server_load_ratio(assignment):
    """Fraction of all users served by each region's replica."""
    v = np.asarray(assignment.v)
    total = v.sum()
    if total == 0:
        return np.zeros(v.shape[1])
    return v.sum(0) / total


# --------------------------------------------------------------------------
# timing


@dataclass
class TimingStats:
    median: float
    mad: float
    samples: list

    @property
    def relative_mad(self):
        return self.mad / self.median if self.median > 0 else 0.0


def single_thread():
    """Context manager limiting BLAS/OpenMP pools to one thread."""
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def bench_decision_time(method, instances, repetitions=5, warmup=1):
    """Median seconds per call of ``method(instance)`` over the instance set.

    Each repetition times one pass over all instances; ``warmup`` passes
    run first and are discarded. Runs with BLAS pinned to one thread.
    """
    instances = list(instances)
    if not instances or repetitions < 1:
        raise ValidationError("need at least one instance and one repetition")
    per_call = []
    with single_thread():
        for rep in range(warmup + repetitions):
            t0 = time.perf_counter()
            for inst in instances:
                method(inst)
            dt = (time.perf_counter() - t0) / len(instances)
            if rep >= warmup:
                per_call.append(dt)
    arr = np.array(per_call)
    med = float(np.median(arr))
    return TimingStats(med, float(np.median(np.abs(arr - med))), per_call)


# --------------------------------------------------------------------------
# reports


@dataclass
class MethodResult:
    method: str
    C: int
    total_latency: float
    reduction: float
    satisfaction: list
    load_ratio: list
    n_contents: int


@dataclass
class EvalReport:
    gammas: tuple = GAMMA_GRID
    rows: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add(self, row):
        self.rows.append(row)

    def csv_lines(self):
        head = ["method", "C", "n_contents", "total_latency_ms", "reduction"]
        head += [f"satisfaction_{g:g}ms" for g in self.gammas]
        out = [",".join(head)]
        for r in self.rows:
            vals = [r.method, str(r.C), str(r.n_contents), f"{r.total_latency:.6f}", f"{r.reduction:.6f}"]
            vals += [f"{s:.6f}" for s in r.satisfaction]
            out.append(",".join(vals))
        return out

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(self.csv_lines()) + "\n")

    def write_loads_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            M = len(self.rows[0].load_ratio) if self.rows else 0
            w.writerow(["method", "C"] + [f"load_{m}" for m in range(M)])
            for r in self.rows:
                w.writerow([r.method, r.C] + [f"{x:.6f}" for x in r.load_ratio])

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.rows:
                rec = {"method": r.method, "C": r.C, "n_contents": r.n_contents,
                       "total_latency_ms": round(r.total_latency, 9), "reduction": round(r.reduction, 12),
                       "satisfaction": dict(zip((f"{g:g}" for g in self.gammas),
                                                (round(s, 12) for s in r.satisfaction))),
                       "load_ratio": [round(x, 12) for x in r.load_ratio]}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if self.extras:
                fh.write(json.dumps({"extras": self.extras}, sort_keys=True) + "\n")
