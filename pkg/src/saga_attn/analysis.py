"""Cost model, instrumented multiply counts and KV-state rank analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttnConfig, SagaParams, multi_head_split, saga_block_forward
from .errors import ContractError
from .instrument import count_multiplies
from .linalg import matmul, numerical_rank, random_matrix, sigmoid_map, stream_rng, transpose

COST_TERMS = ("proj", "hadamard", "attn", "dwc", "gate_aug")


@dataclass(frozen=True)
class CostReport:
    n_tokens: int
    model_dim: int
    kernel: int
    proj_flops: int
    hadamard_flops: int
    attn_flops: int
    dwc_flops: int
    gate_aug_flops: int
    naive_workspace: int
    decomposed_workspace: int

    @property
    def total(self) -> int:
        return self.proj_flops + self.hadamard_flops + self.attn_flops + self.dwc_flops + self.gate_aug_flops

    def terms(self) -> dict[str, int]:
        return {
            "proj": self.proj_flops,
            "hadamard": self.hadamard_flops,
            "attn": self.attn_flops,
            "dwc": self.dwc_flops,
            "gate_aug": self.gate_aug_flops,
        }


def cost_terms(n: int, d: int, k: int, key_dim: int | None = None, value_dim: int | None = None) -> CostReport:
    """Analytic cost 9Nd^2 + k^2Nd + 3Nd, itemized.

    Counts multiplies only (an N x d by d x d product costs Nd^2). ``k = 0``
    switches the convolution term off. Workspace counts are per head.
    """
    dk = d if key_dim is None else key_dim
    dv = d if value_dim is None else value_dim
    return CostReport(
        n_tokens=n,
        model_dim=d,
        kernel=k,
        proj_flops=7 * n * d * d,
        hadamard_flops=2 * n * d,
        attn_flops=2 * n * d * d,
        dwc_flops=k * k * n * d,
        gate_aug_flops=n * d,
        naive_workspace=2 * n * dk * dv,
        decomposed_workspace=n * (dk + dv),
    )


def flop_model(cfg: AttnConfig) -> CostReport:
    return cost_terms(cfg.n_tokens, cfg.model_dim, cfg.dwc_kernel, cfg.key_dim, cfg.value_dim)


def measured_flops(cfg: AttnConfig, seed: int = 0, dtype=np.float32) -> dict[str, int]:
    """Multiplies executed by one block forward, per cost term plus ``"total"``.

    The attention term equals the single-head model value only for
    ``cfg.heads == 1``; with h heads it is 2Nd^2 / h.
    """
    params = SagaParams.init(cfg, seed, dtype=dtype)
    x = random_matrix(cfg.n_tokens, cfg.model_dim, seed, "normal", label="flops/x", dtype=dtype)
    with count_multiplies() as counter:
        saga_block_forward(x, params, cfg)
    counts = {term: counter[term] for term in COST_TERMS}
    counts["total"] = counter.total
    return counts


@dataclass(frozen=True)
class RankEntry:
    head: int
    rank_ungated: int
    rank_gated: int
    full_rank_bound: int


@dataclass
class RankTrace:
    label: str
    entries: list[RankEntry] = field(default_factory=list)


def rank_scan(
    s_ungated: list[np.ndarray], s_gated: list[np.ndarray], rel_tol: float = 1e-8, label: str = ""
) -> RankTrace:
    if len(s_ungated) != len(s_gated):
        raise ContractError(f"got {len(s_ungated)} ungated but {len(s_gated)} gated states")
    trace = RankTrace(label)
    for head, (su, sg) in enumerate(zip(s_ungated, s_gated)):
        trace.entries.append(
            RankEntry(head, numerical_rank(su, rel_tol), numerical_rank(sg, rel_tol), min(su.shape))
        )
    return trace


def degenerate_token_generator(n_distinct: int, cfg: AttnConfig, seed: int) -> np.ndarray:
    """Tokens drawn from only ``n_distinct`` distinct rows.

    Every distinct row is used at least once and the rest are repeats in
    random order, so any row-wise projection has exactly ``n_distinct``
    distinct rows (for generic weights) and rank at most ``n_distinct``.
    """
    n = cfg.n_tokens
    if not 1 <= n_distinct <= n:
        raise ContractError(f"n_distinct must lie in [1, {n}], got {n_distinct}")
    base = random_matrix(n_distinct, cfg.model_dim, seed, "normal", label="degenerate/base")
    rng = stream_rng(seed, "degenerate/assign")
    assign = np.concatenate([np.arange(n_distinct), rng.integers(0, n_distinct, n - n_distinct)])
    rng.shuffle(assign)
    return base[assign]


def duplicated_key_family(n_tokens: int, key_dim: int, value_dim: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """K with one key row shared by all tokens, V with distinct rows."""
    key = random_matrix(1, key_dim, seed, "normal", label="dupkey/key")
    k = np.repeat(key, n_tokens, axis=0)
    v = random_matrix(n_tokens, value_dim, seed, "normal", label="dupkey/values")
    return k, v


def random_gates(n_tokens: int, width: int, seed: int, label: str) -> np.ndarray:
    return sigmoid_map(random_matrix(n_tokens, width, seed, "normal", label=label))


def gated_rank_pair(
    k: np.ndarray, v: np.ndarray, a: np.ndarray, b: np.ndarray, rel_tol: float = 1e-8
) -> tuple[int, int]:
    """Ranks of K^T V and (K*A)^T (V*B)."""
    s_plain = matmul(transpose(k), v)
    s_gated = matmul(transpose(k * a), v * b)
    return numerical_rank(s_plain, rel_tol), numerical_rank(s_gated, rel_tol)


def block_rank_trace(
    n_distinct: int,
    cfg: AttnConfig,
    params: SagaParams,
    seed: int,
    rel_tol: float = 1e-8,
    gate_source: str = "random",
) -> RankTrace:
    """Per-head KV-state ranks of the block on a duplicated-token input.

    ``gate_source="input"`` uses the block's own gates sigmoid(X W_A),
    sigmoid(X W_B); these repeat along with the tokens, so they cannot lift
    the rank above ``n_distinct``. ``gate_source="random"`` draws per-token
    sigmoid gates independent of the duplication.
    """
    x = degenerate_token_generator(n_distinct, cfg, seed)
    k = matmul(x, params.w_k)
    v = matmul(x, params.w_v)
    if gate_source == "input":
        a = sigmoid_map(matmul(x, params.w_a))
        b = sigmoid_map(matmul(x, params.w_b))
    elif gate_source == "random":
        a = random_gates(cfg.n_tokens, cfg.model_dim, seed, "rank/key_gate")
        b = random_gates(cfg.n_tokens, cfg.model_dim, seed, "rank/value_gate")
    else:
        raise ContractError(f"gate_source must be 'random' or 'input', got {gate_source!r}")
    plain, gated = [], []
    for kh, vh, ah, bh in zip(*(multi_head_split(m, cfg.heads) for m in (k, v, a, b))):
        plain.append(kh.T @ vh)
        gated.append((kh * ah).T @ (vh * bh))
    return rank_scan(plain, gated, rel_tol, label=f"n_distinct={n_distinct}")
