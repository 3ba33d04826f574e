"""Timing sweeps for neighbour-matrix construction.

The cost of building all ``N^w`` is ``O(|W| |Lambda|^{1+eps})``; ``eps`` is
estimated from a sweep over ``isoTD(M, K)`` as the slope of
``log(time)`` against ``log |Lambda|`` minus one.
"""
from __future__ import annotations

import math
import statistics as stats
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .moment import NeighbourStats, neighbour_matrices, union_weights, weight_set
from .multiindex import IsoTD, build_index_set, from_dense
from .sgfem import monomial_exponents

MIN_FIT_TIME = 0.010


@dataclass
class BenchRecord:
    set_family: str
    M: int
    p: int
    K: int
    cardinality: int
    weight_count: int
    wall_time_seconds: float
    locate_steps: int
    degree_epsilon: float
    fitted_epsilon: float = float("nan")

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def diffusion_xi(M: int, p: int) -> list:
    """Monomials of ``(1 + sum_m c_m y_m)^p`` other than the constant."""
    return [from_dense(e) for e in monomial_exponents(M, p)]


def weight_count(M: int, p: int) -> int:
    """``sum |W(mu)|`` over all monomials of the coefficient, the constant included."""
    return 1 + sum(len(weight_set(mu)) for mu in diffusion_xi(M, p))


def degree_epsilon(iset) -> float:
    """``log(max |alpha|) / log |Lambda|``, the a-priori estimate of ``eps``."""
    n = len(iset)
    if n < 2 or iset.max_degree < 1:
        return float("nan")
    return math.log(iset.max_degree) / math.log(n)


def fit_epsilon(records, min_time: float = MIN_FIT_TIME) -> float:
    """Slope of ``log t`` vs ``log |Lambda|`` minus one, over runs slower than ``min_time``."""
    pts = [(r.cardinality, r.wall_time_seconds) for r in records if r.wall_time_seconds > min_time]
    if len(pts) < 2:
        return float("nan")
    n, t = np.log(np.array(pts, dtype=float)).T
    return float(np.polyfit(n, t, 1)[0] - 1.0)


def bench_sweep(
    M: int,
    p: int,
    K_max: int,
    *,
    K_min: int = 1,
    repeats: int = 5,
    threads: int = 1,
    clock=time.perf_counter,
) -> list[BenchRecord]:
    """Time neighbour construction on ``isoTD(M, K)`` for ``K = K_min..K_max``.

    Each point is the median of ``repeats`` runs after one untimed warm-up.
    The fitted exponent is written into every record of the sweep.
    """
    xi = diffusion_xi(M, p)
    wsets = [weight_set(mu) for mu in xi]
    weights = union_weights(wsets)
    wcount = 1 + sum(len(ws) for ws in wsets)
    records = []
    for K in range(K_min, K_max + 1):
        iset = build_index_set(IsoTD(M, K))
        counter = NeighbourStats()
        neighbour_matrices(iset, weights, threads=threads, stats=counter)
        times = []
        for _ in range(repeats):
            t0 = clock()
            neighbour_matrices(iset, weights, threads=threads)
            times.append(clock() - t0)
        records.append(
            BenchRecord(
                "isoTD", M, p, K, len(iset), wcount, stats.median(times),
                counter.locate_steps, degree_epsilon(iset),
            )
        )
    eps = fit_epsilon(records)
    for r in records:
        r.fitted_epsilon = eps
    return records


def records_to_rows(records) -> list[dict]:
    return [asdict(r) for r in records]
