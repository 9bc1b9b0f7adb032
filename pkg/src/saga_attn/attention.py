"""Forward attention operators: softmax, linear, gated and the full SAGA block."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ContractError, DimensionError
from .instrument import Workspace, cost_term, record_multiplies
from .linalg import hadamard, matmul, random_matrix, relu, row_softmax, sigmoid_map, transpose

NORMALIZER_EPS = 1e-6


def square_grid(n: int) -> tuple[int, int]:
    """Most nearly square ``(h, w)`` with ``h * w == n`` and ``h <= w``."""
    h = math.isqrt(n)
    while n % h:
        h -= 1
    return h, n // h


@dataclass(frozen=True)
class AttnConfig:
    """Block shape. The token grid defaults to the most nearly square factorization of N."""

    n_tokens: int
    model_dim: int
    heads: int = 1
    grid_h: int = 0
    grid_w: int = 0
    dwc_kernel: int = 3
    kernel_phi: str = "relu"

    def __post_init__(self) -> None:
        if self.n_tokens < 1:
            raise DimensionError(f"need at least one token, got {self.n_tokens}")
        if self.grid_h == 0 and self.grid_w == 0:
            gh, gw = square_grid(self.n_tokens)
            object.__setattr__(self, "grid_h", gh)
            object.__setattr__(self, "grid_w", gw)
        if self.grid_h * self.grid_w != self.n_tokens:
            raise DimensionError(f"grid {self.grid_h}x{self.grid_w} does not hold N={self.n_tokens} tokens")
        if self.heads < 1 or self.model_dim % self.heads:
            raise DimensionError(f"model_dim {self.model_dim} is not divisible into {self.heads} heads")
        if self.dwc_kernel < 1 or self.dwc_kernel % 2 == 0:
            raise ContractError(f"dwc_kernel must be odd and >= 1, got {self.dwc_kernel}")
        if self.kernel_phi not in ("identity", "relu"):
            raise ContractError(f"kernel_phi must be 'identity' or 'relu', got {self.kernel_phi!r}")

    @property
    def key_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def value_dim(self) -> int:
        return self.model_dim // self.heads


@dataclass(frozen=True)
class SagaParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_a: np.ndarray
    w_b: np.ndarray
    w_g: np.ndarray
    w_out: np.ndarray
    dwc_weight: np.ndarray  # (d, k, k)
    dwc_bias: np.ndarray  # (d,)

    PROJECTIONS = ("w_q", "w_k", "w_v", "w_a", "w_b", "w_g", "w_out")

    @classmethod
    def init(cls, cfg: AttnConfig, seed: int, dtype=np.float64) -> "SagaParams":
        """Uniform fan-in/fan-out initialization, one RNG stream per tensor."""
        d, k = cfg.model_dim, cfg.dwc_kernel
        mats = {name: random_matrix(d, d, seed, label=f"params/{name}", dtype=dtype) for name in cls.PROJECTIONS}
        kernel = random_matrix(d, k * k, seed, label="params/dwc_weight", dtype=dtype).reshape(d, k, k)
        return cls(**mats, dwc_weight=kernel, dwc_bias=np.zeros(d, dtype=dtype))

    def validate(self, cfg: AttnConfig) -> None:
        d, k = cfg.model_dim, cfg.dwc_kernel
        for name in self.PROJECTIONS:
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {(d, d)}")
        if self.dwc_weight.shape != (d, k, k):
            raise DimensionError(f"dwc_weight has shape {self.dwc_weight.shape}, expected {(d, k, k)}")
        if self.dwc_bias.shape != (d,):
            raise DimensionError(f"dwc_bias has shape {self.dwc_bias.shape}, expected {(d,)}")
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)).all():
                raise ContractError(f"{f.name} contains non-finite entries")

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_qkv(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> None:
    for name, m in (("Q", q), ("K", k), ("V", v)):
        if m.ndim != 2:
            raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if q.shape != k.shape:
        raise DimensionError(f"Q {q.shape} and K {k.shape} must share shape N x dk")
    if v.shape[0] != k.shape[0]:
        raise DimensionError(f"V has {v.shape[0]} tokens but K has {k.shape[0]}")


def _check_gates(k: np.ndarray, v: np.ndarray, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != k.shape:
        raise DimensionError(f"key gate {a.shape} must match K {k.shape}")
    if b.shape != v.shape:
        raise DimensionError(f"value gate {b.shape} must match V {v.shape}")
    for name, g in (("key gate", a), ("value gate", b)):
        if not (np.all(g >= 0) and np.all(g <= 1)):
            raise ContractError(f"{name} entries must lie in [0, 1]; got range [{g.min():.4g}, {g.max():.4g}]")


def _phi(m: np.ndarray, phi: str) -> np.ndarray:
    if phi == "relu":
        return relu(m)
    if phi == "identity":
        return m
    raise ContractError(f"unknown kernel {phi!r}")


def softmax_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    scale: float | None = None,
    *,
    block_rows: int = 1024,
    ws: Workspace | None = None,
) -> np.ndarray:
    """Quadratic softmax attention, evaluated in row blocks to bound scratch memory."""
    _check_qkv(q, k, v)
    n = q.shape[0]
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    out = np.empty((n, v.shape[1]), dtype=np.result_type(q, v))
    kt = transpose(k)
    for start in range(0, n, block_rows):
        scores = matmul(q[start:start + block_rows], kt)
        if ws is not None:
            ws.track(scores)
        out[start:start + block_rows] = matmul(row_softmax(scores, scale), v)
        if ws is not None:
            ws.free(scores)
    return out


def linear_attention_normalized(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, phi: str = "relu", eps: float = NORMALIZER_EPS
) -> np.ndarray:
    """Kernelized attention phi(q) S / (phi(q) z + eps) with S = phi(K)^T V, z = sum phi(k)."""
    _check_qkv(q, k, v)
    fq, fk = _phi(q, phi), _phi(k, phi)
    state = matmul(transpose(fk), v)
    num = matmul(fq, state)
    den = matmul(fq, fk.sum(axis=0)[:, None])
    return num / (den + eps)


def linear_attention_unnormalized(
    q: np.ndarray, k: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Q S, S)`` with ``S = K^T V``."""
    _check_qkv(q, k, v)
    state = matmul(transpose(k), v)
    return matmul(q, state), state


def causal_recurrence(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Token-by-token state update S_t = S_{t-1} + k_t^T v_t, o_t = q_t S_t."""
    _check_qkv(q, k, v)
    n, dk = k.shape
    state = np.zeros((dk, v.shape[1]), dtype=np.result_type(k, v))
    out = np.empty((n, v.shape[1]), dtype=state.dtype)
    for t in range(n):
        state += np.outer(k[t], v[t])
        out[t] = q[t] @ state
    return out


def gated_attention_naive(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    *,
    ws: Workspace | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Gated attention with every per-token SFM and gate matrix materialized.

    Builds the N x dk x dv stacks of ``k_i^T v_i`` and ``alpha_i^T beta_i``,
    gates elementwise, sums over tokens and reads out with Q. Slow and memory
    hungry by design; it is the reference the decomposed path is checked
    against. Returns ``(O, S_gated, peak_workspace_elements)``.
    """
    _check_qkv(q, k, v)
    _check_gates(k, v, a, b)
    ws = ws or Workspace()
    n, dk = k.shape
    dv = v.shape[1]
    dtype = np.result_type(k, v, a, b)
    sfm = ws.empty((n, dk, dv), dtype)
    np.multiply(k[:, :, None], v[:, None, :], out=sfm)
    gate = ws.empty((n, dk, dv), dtype)
    np.multiply(a[:, :, None], b[:, None, :], out=gate)
    np.multiply(sfm, gate, out=sfm)
    ws.free(gate)
    state = ws.track(sfm.sum(axis=0))
    ws.free(sfm)
    out = q @ state
    return out, state, ws.peak


def gated_attention_decomposed(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    *,
    ws: Workspace | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Gated attention with the gates folded into K and V: ``Q [(K*A)^T (V*B)]``.

    Scratch is the two gated token matrices plus the dk x dv state; nothing
    indexed by both token and feature pair is ever formed.
    Returns ``(O, S_gated, peak_workspace_elements)``.
    """
    _check_qkv(q, k, v)
    _check_gates(k, v, a, b)
    ws = ws or Workspace()
    with cost_term("hadamard"):
        k_gated = ws.track(hadamard(k, a))
        v_gated = ws.track(hadamard(v, b))
    with cost_term("attn"):
        state = ws.track(matmul(transpose(k_gated), v_gated))
        ws.free(k_gated)
        ws.free(v_gated)
        out = matmul(q, state)
    return out, state, ws.peak


def dwc(v: np.ndarray, cfg: AttnConfig, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Depthwise k x k convolution over the token grid, zero padding, stride 1.

    Uses the cross-correlation convention:
    ``out[y, x, c] = bias[c] + sum_{i,j} weight[c, i, j] * pad(V)[y + i, x + j, c]``.
    """
    n, d = v.shape
    if n != cfg.grid_h * cfg.grid_w:
        raise DimensionError(f"V has {n} tokens, grid is {cfg.grid_h}x{cfg.grid_w}")
    ksz = weight.shape[-1]
    if weight.shape != (d, ksz, ksz) or bias.shape != (d,):
        raise DimensionError(f"DWC weight {weight.shape} / bias {bias.shape} do not match {d} channels")
    p = ksz // 2
    grid = v.reshape(cfg.grid_h, cfg.grid_w, d)
    padded = np.zeros((cfg.grid_h + 2 * p, cfg.grid_w + 2 * p, d), dtype=v.dtype)
    padded[p:p + cfg.grid_h, p:p + cfg.grid_w] = grid
    out = np.broadcast_to(bias, grid.shape).astype(np.result_type(v, weight, bias))
    for i in range(ksz):
        for j in range(ksz):
            out += padded[i:i + cfg.grid_h, j:j + cfg.grid_w] * weight[:, i, j]
    record_multiplies(ksz * ksz * n * d)
    return out.reshape(n, d)


def multi_head_split(m: np.ndarray, heads: int) -> list[np.ndarray]:
    d = m.shape[1]
    if heads < 1 or d % heads:
        raise DimensionError(f"width {d} is not divisible into {heads} heads")
    w = d // heads
    return [m[:, i * w:(i + 1) * w] for i in range(heads)]


def multi_head_merge(parts: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts, axis=1)


@dataclass
class SagaCache:
    """Intermediates of one block forward, kept for the backward pass."""

    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    attn: np.ndarray
    conv: np.ndarray
    mixed: np.ndarray
    states: list[np.ndarray]


_ATTENTION_PATHS = {"decomposed": gated_attention_decomposed, "naive": gated_attention_naive}


def saga_forward_with_cache(
    x: np.ndarray, params: SagaParams, cfg: AttnConfig, attention_path: str = "decomposed"
) -> tuple[np.ndarray, SagaCache]:
    if x.shape != (cfg.n_tokens, cfg.model_dim):
        raise DimensionError(f"X has shape {x.shape}, config expects {(cfg.n_tokens, cfg.model_dim)}")
    params.validate(cfg)
    gated = _ATTENTION_PATHS[attention_path]
    with cost_term("proj"):
        q = matmul(x, params.w_q)
        k = matmul(x, params.w_k)
        v = matmul(x, params.w_v)
        a = sigmoid_map(matmul(x, params.w_a))
        b = sigmoid_map(matmul(x, params.w_b))
        g = matmul(x, params.w_g)
    heads_out, states = [], []
    for qh, kh, vh, ah, bh in zip(*(multi_head_split(m, cfg.heads) for m in (q, k, v, a, b))):
        oh, sh, _ = gated(qh, kh, vh, ah, bh)
        heads_out.append(oh)
        states.append(sh)
    attn = multi_head_merge(heads_out)
    with cost_term("dwc"):
        conv = dwc(v, cfg, params.dwc_weight, params.dwc_bias)
    with cost_term("gate_aug"):
        mixed = hadamard(attn + conv, g)
    with cost_term("proj"):
        out = matmul(mixed, params.w_out)
    return out, SagaCache(x, q, k, v, a, b, g, attn, conv, mixed, states)


def saga_block_forward(
    x: np.ndarray, params: SagaParams, cfg: AttnConfig, attention_path: str = "decomposed"
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Full gated linear attention block.

    Q, K, V, G are linear maps of X; the key and value gates are
    sigmoid(X W_A) and sigmoid(X W_B). Each head runs gated attention, heads
    are concatenated, a depthwise convolution of V is added, the sum is
    multiplied elementwise by G and projected by W_out. Returns the output
    and each head's gated state ``(K*A)^T (V*B)``.
    """
    out, cache = saga_forward_with_cache(x, params, cfg, attention_path)
    return out, cache.states
