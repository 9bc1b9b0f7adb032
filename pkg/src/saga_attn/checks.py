"""Equivalence and gradient-check suites run by ``saga-attn check`` / ``gradcheck``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (
    AttnConfig,
    SagaParams,
    causal_recurrence,
    gated_attention_decomposed,
    gated_attention_naive,
    linear_attention_unnormalized,
    softmax_attention,
)
from .backward import gradcheck_saga_block
from .errors import ContractError
from .linalg import hadamard, outer, random_matrix, sigmoid_map


@dataclass
class CheckResult:
    name: str
    max_error: float
    tol: float
    failing_case: str | None = None

    @property
    def passed(self) -> bool:
        return self.failing_case is None and self.max_error <= self.tol


def _max_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def _normal(rows, cols, seed, label, dtype):
    return random_matrix(rows, cols, seed, "normal", label=label, dtype=dtype)


def hadamard_identity(dims, draws: int, seed: int, tol: float, dtype=np.float64) -> CheckResult:
    res = CheckResult("hadamard_identity", 0.0, tol)
    for d in dims:
        for i in range(draws):
            s = seed + i
            a, c = (_normal(d, 1, s, f"had/{d}/{n}", dtype) for n in "ac")
            b, e = (_normal(1, d, s, f"had/{d}/{n}", dtype) for n in "bd")
            err = _max_abs(hadamard(outer(a, b), outer(c, e)), outer(hadamard(a, c), hadamard(b, e)))
            res.max_error = max(res.max_error, err)
            if err > tol and res.failing_case is None:
                res.failing_case = f"seed={s} d={d}"
    return res


def gated_inputs(n: int, dk: int, dv: int, seed: int, dtype=np.float64):
    q, k = (_normal(n, dk, seed, f"gated/{m}", dtype) for m in "qk")
    v = _normal(n, dv, seed, "gated/v", dtype)
    a = sigmoid_map(_normal(n, dk, seed, "gated/a", dtype))
    b = sigmoid_map(_normal(n, dv, seed, "gated/b", dtype))
    return q, k, v, a, b


def oracle_equivalence(
    n_list, dim_list, n_seeds: int, seed: int, tol: float, inject_fault: bool = False, dtype=np.float64
) -> CheckResult:
    res = CheckResult("oracle_equivalence", 0.0, tol)
    for n in n_list:
        for dim in dim_list:
            for s in range(seed, seed + n_seeds):
                q, k, v, a, b = gated_inputs(n, dim, dim, s, dtype)
                ref, _, _ = gated_attention_naive(q, k, v, a, b)
                a_fast = a
                if inject_fault:
                    a_fast = a.copy()
                    a_fast[np.unravel_index(np.argmin(a_fast), a_fast.shape)] *= 2
                case = f"seed={s} N={n} dk=dv={dim}"
                try:
                    got, _, _ = gated_attention_decomposed(q, k, v, a_fast, b)
                except ContractError as exc:
                    res.failing_case = res.failing_case or f"{case} ({exc})"
                    continue
                err = _max_abs(ref, got)
                res.max_error = max(res.max_error, err)
                if err > tol and res.failing_case is None:
                    res.failing_case = case
    return res


def reduction_identities(n_list, dim_list, n_seeds: int, seed: int, tol: float, dtype=np.float64) -> list[CheckResult]:
    gate = CheckResult("identity_gate_reduction", 0.0, tol)
    causal = CheckResult("causal_last_row", 0.0, tol)
    single = CheckResult("softmax_single_token", 0.0, 0.0)
    for n in n_list:
        for dim in dim_list:
            for s in range(seed, seed + n_seeds):
                q, k, v, _, _ = gated_inputs(n, dim, dim, s, dtype)
                case = f"seed={s} N={n} dk=dv={dim}"
                plain, _ = linear_attention_unnormalized(q, k, v)
                ones = np.ones_like(k)
                gated, _, _ = gated_attention_decomposed(q, k, v, ones, np.ones_like(v))
                for res, err in (
                    (gate, _max_abs(plain, gated)),
                    (causal, _max_abs(causal_recurrence(q, k, v)[-1], plain[-1])),
                    (single, _max_abs(softmax_attention(q[:1], k[:1], v[:1]), v[:1])),
                ):
                    res.max_error = max(res.max_error, err)
                    if err > res.tol and res.failing_case is None:
                        res.failing_case = case
    return [gate, causal, single]


def gradcheck_suite(
    n_seeds: int, seed: int, cfg: AttnConfig, step: float, threshold: float, dtype=np.float64
) -> CheckResult:
    res = CheckResult("saga_block_gradcheck", 0.0, threshold)
    for s in range(seed, seed + n_seeds):
        params = SagaParams.init(cfg, s, dtype=dtype)
        x = _normal(cfg.n_tokens, cfg.model_dim, s, "gradcheck/x", dtype)
        d_out = _normal(cfg.n_tokens, cfg.model_dim, s, "gradcheck/d_out", dtype)
        errors = gradcheck_saga_block(x, params, cfg, d_out, step)
        worst_name = max(errors, key=errors.get)
        res.max_error = max(res.max_error, errors[worst_name])
        if errors[worst_name] > threshold and res.failing_case is None:
            res.failing_case = (
                f"seed={s} N={cfg.n_tokens} d={cfg.model_dim} h={cfg.heads} tensor={worst_name}"
            )
    return res
