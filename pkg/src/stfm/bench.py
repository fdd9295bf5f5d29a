"""Runtime benchmark for a single SAB / ISAB block.

Times the forward pass of one block (64 units, 8 heads) on constant zero
input sets of 3-dimensional vectors, across a range of set sizes, and fits
a log-log slope to the medians.  Two warmup repetitions are discarded;
medians resist scheduler noise.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import blocks as B
from . import tensor as T
from .rng import Rng
from .tensor import Tensor

BENCH_DIM = 64
BENCH_HEADS = 8


@dataclass
class BenchReport:
    block: str                 # "sab" | "isab"
    m: int                     # inducing points (0 for sab)
    sizes: list[int]
    medians: list[float]       # seconds; NaN for failed sizes
    p10: list[float]
    p90: list[float]
    raw: dict[int, list[float]]
    failed: list[int] = field(default_factory=list)

    @property
    def slope(self) -> float:
        ok = [(n, t) for n, t in zip(self.sizes, self.medians)
              if np.isfinite(t)]
        return fit_loglog_slope([n for n, _ in ok], [t for _, t in ok])


def fit_loglog_slope(sizes, times) -> float:
    if len(sizes) < 2:
        raise ValueError("need at least two sizes to fit a slope")
    return float(np.polyfit(np.log(np.asarray(sizes, dtype=float)),
                            np.log(np.asarray(times, dtype=float)), 1)[0])


def _make_block(block: str, m: int, rng: Rng):
    if block == "sab":
        p = B.MABParams.create("bench.sab", BENCH_DIM, BENCH_HEADS, rng)
        return lambda z: B.sab(z, p)
    if block == "isab":
        p = B.ISABParams.create("bench.isab", BENCH_DIM, BENCH_HEADS, m, rng)
        return lambda z: B.isab(z, p)
    raise ValueError(f"unknown block {block!r}")


def bench_block(block: str, sizes, reps: int = 5, m: int = 16,
                seed: int = 0, warmup: int = 2) -> BenchReport:
    sizes = sorted(int(n) for n in sizes)
    if len(sizes) < 2:
        raise ValueError("need at least two set sizes")
    if reps < 5:
        raise ValueError("need at least 5 repetitions")
    rng = Rng(seed)
    fwd = _make_block(block, m, rng)
    embed = Tensor(rng.normal(0.0, 1.0, size=(3, BENCH_DIM)))

    report = BenchReport(block=block, m=m if block == "isab" else 0,
                         sizes=sizes, medians=[], p10=[], p90=[], raw={})
    for n in sizes:
        try:
            x = np.zeros((n, 3))
            times = []
            with T.no_grad():
                z0 = T.matmul(Tensor(x), embed)
                for r in range(warmup + reps):
                    t0 = time.perf_counter()
                    fwd(z0)
                    dt = time.perf_counter() - t0
                    if r >= warmup:
                        times.append(dt)
        except MemoryError:
            report.failed.append(n)
            report.medians.append(float("nan"))
            report.p10.append(float("nan"))
            report.p90.append(float("nan"))
            report.raw[n] = []
            continue
        report.raw[n] = times
        report.medians.append(float(np.median(times)))
        report.p10.append(float(np.percentile(times, 10)))
        report.p90.append(float(np.percentile(times, 90)))
    return report


BENCH_HEADER = ["block", "n", "m", "rep", "seconds"]


def write_bench_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BENCH_HEADER)
        for n in report.sizes:
            for rep, sec in enumerate(report.raw[n]):
                w.writerow([report.block, n, report.m, rep, repr(sec)])
