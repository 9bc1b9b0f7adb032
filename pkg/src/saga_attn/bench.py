"""Wall-clock scaling benchmarks and log-log exponent fits."""

from __future__ import annotations

import statistics
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import (
    AttnConfig,
    SagaParams,
    gated_attention_decomposed,
    gated_attention_naive,
    linear_attention_unnormalized,
    multi_head_split,
    saga_block_forward,
    softmax_attention,
)
from .errors import ContractError
from .instrument import Workspace
from .linalg import random_matrix, sigmoid_map

KERNELS = ("softmax", "linear_unnorm", "saga_decomposed", "saga_naive_oracle")
MIN_RELIABLE_NS = 1_000
NAIVE_MAX_TOKENS = 4096
NAIVE_MAX_STATE = 4096


@dataclass
class BenchRun:
    kernel: str
    n_list: list[int]
    d: int = 64
    h: int = 2
    k: int = 3
    repeats: int = 5
    warmup: int = 2
    seed: int = 0
    median_ns: dict[int, float | None] = field(default_factory=dict)
    workspace: dict[int, int] = field(default_factory=dict)
    exponent: float | None = None

    def reliable_points(self) -> list[tuple[int, float]]:
        return [(n, self.median_ns[n]) for n in self.n_list if self.median_ns.get(n)]


def fit_exponent(ns, times) -> float:
    """Least-squares slope of log(time) against log(N)."""
    ns = np.asarray(ns, dtype=float)
    times = np.asarray(times, dtype=float)
    if ns.size < 2:
        raise ContractError("need at least two points to fit an exponent")
    slope, _ = np.polyfit(np.log(ns), np.log(times), 1)
    return float(slope)


def _head_workspace(kernel, inputs) -> int:
    ws = Workspace()
    kernel(*inputs, ws=ws)
    return ws.peak


def _build(kernel: str, n: int, d: int, h: int, k: int, seed: int, dtype) -> tuple[Callable[[], object], int]:
    """Closure timing one forward pass at size n, plus per-head workspace elements."""
    if kernel in ("saga_decomposed", "saga_naive_oracle"):
        cfg = AttnConfig(n, d, h, dwc_kernel=k)
        params = SagaParams.init(cfg, seed, dtype=dtype)
        x = random_matrix(n, d, seed, "normal", label="bench/x", dtype=dtype)
        path = "decomposed" if kernel == "saga_decomposed" else "naive"
        if path == "naive" and n > NAIVE_MAX_TOKENS and cfg.key_dim * cfg.value_dim > NAIVE_MAX_STATE:
            raise ContractError(f"naive oracle refused at N={n}, state {cfg.key_dim}x{cfg.value_dim}")
        # workspace of head 0 on the same projections the block uses
        q, kk, v, a, b = (x @ w for w in (params.w_q, params.w_k, params.w_v, params.w_a, params.w_b))
        head = [m[0] for m in (multi_head_split(q, h), multi_head_split(kk, h), multi_head_split(v, h),
                               multi_head_split(sigmoid_map(a), h), multi_head_split(sigmoid_map(b), h))]
        fn = gated_attention_decomposed if path == "decomposed" else gated_attention_naive
        return (lambda: saga_block_forward(x, params, cfg, path)), _head_workspace(fn, head)

    q, kk, v = (random_matrix(n, d, seed, "normal", label=f"bench/{m}", dtype=dtype) for m in "qkv")
    heads = list(zip(multi_head_split(q, h), multi_head_split(kk, h), multi_head_split(v, h)))
    if kernel == "softmax":
        return (lambda: [softmax_attention(*hd) for hd in heads]), _head_workspace(softmax_attention, heads[0])
    if kernel == "linear_unnorm":
        dk = d // h
        return (lambda: [linear_attention_unnormalized(*hd) for hd in heads]), dk * dk
    raise ContractError(f"unknown kernel {kernel!r}; choose from {KERNELS}")


def _thread_limit(parallel: bool):
    if parallel:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=1)


def run_bench(run: BenchRun, dtype=np.float32, parallel: bool = False) -> BenchRun:
    """Time ``run.kernel`` at every N, fill medians, workspace and the fitted exponent.

    Points whose median falls under the timer's reliable floor are recorded
    as ``None`` and left out of the fit.
    """
    if run.repeats < 5 or run.warmup < 2:
        raise ContractError(f"need repeats >= 5 and warmup >= 2, got {run.repeats}/{run.warmup}")
    grid = sorted(run.n_list)
    if len(grid) < 4 or grid[-1] < 16 * grid[0]:
        raise ContractError(f"N grid {grid} needs >= 4 points spanning >= 16x")
    with _thread_limit(parallel):
        for n in grid:
            fn, run.workspace[n] = _build(run.kernel, n, run.d, run.h, run.k, run.seed, dtype)
            for _ in range(run.warmup):
                fn()
            samples = []
            for _ in range(run.repeats):
                t0 = time.perf_counter_ns()
                fn()
                samples.append(time.perf_counter_ns() - t0)
            med = statistics.median(samples)
            run.median_ns[n] = med if med >= MIN_RELIABLE_NS else None
    pts = run.reliable_points()
    run.exponent = fit_exponent(*zip(*pts)) if len(pts) >= 2 else None
    return run


@dataclass(frozen=True)
class CrossoverReport:
    kernel_a: str
    kernel_b: str
    crossover_n: int | None

    def __str__(self) -> str:
        if self.crossover_n is None:
            return f"{self.kernel_a} vs {self.kernel_b}: none in range"
        return f"{self.kernel_a} faster than {self.kernel_b} from N={self.crossover_n}"


def crossover_report(run_a: BenchRun, run_b: BenchRun) -> CrossoverReport:
    """Smallest N at which ``run_a`` is strictly faster than ``run_b``."""
    if sorted(run_a.n_list) != sorted(run_b.n_list):
        raise ContractError(f"N grids differ: {run_a.n_list} vs {run_b.n_list}")
    for n in sorted(run_a.n_list):
        ta, tb = run_a.median_ns.get(n), run_b.median_ns.get(n)
        if ta is not None and tb is not None and ta < tb:
            return CrossoverReport(run_a.kernel, run_b.kernel, n)
    return CrossoverReport(run_a.kernel, run_b.kernel, None)
