"""Analytic gradients for the decomposed gated path and the full block.

Gradients are of the scalar surrogate ``<dO, O>`` for a fixed upstream
``dO``, i.e. vector-Jacobian products. Bundles are plain dicts keyed by the
primal's name.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .attention import AttnConfig, SagaParams, multi_head_merge, multi_head_split, saga_forward_with_cache
from .errors import DimensionError, NumericError

GradBundle = dict[str, np.ndarray]


def backward_gated_decomposed(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, a: np.ndarray, b: np.ndarray, d_out: np.ndarray
) -> GradBundle:
    if d_out.shape != (q.shape[0], v.shape[1]):
        raise DimensionError(f"upstream gradient {d_out.shape} does not match output {(q.shape[0], v.shape[1])}")
    if not (q.shape == k.shape == a.shape and v.shape == b.shape and v.shape[0] == k.shape[0]):
        raise DimensionError(f"inconsistent shapes Q{q.shape} K{k.shape} V{v.shape} A{a.shape} B{b.shape}")
    k_g = k * a
    v_g = v * b
    state = k_g.T @ v_g
    d_state = q.T @ d_out
    d_vg = k_g @ d_state
    d_kg = v_g @ d_state.T
    return {
        "q": d_out @ state.T,
        "k": d_kg * a,
        "v": d_vg * b,
        "a": d_kg * k,
        "b": d_vg * v,
    }


def _dwc_backward(
    d_conv: np.ndarray, v: np.ndarray, cfg: AttnConfig, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, d = v.shape
    ksz = weight.shape[-1]
    p = ksz // 2
    gh, gw = cfg.grid_h, cfg.grid_w
    padded = np.zeros((gh + 2 * p, gw + 2 * p, d), dtype=v.dtype)
    padded[p:p + gh, p:p + gw] = v.reshape(gh, gw, d)
    g = d_conv.reshape(gh, gw, d)
    d_weight = np.empty_like(weight)
    d_padded = np.zeros_like(padded)
    for i in range(ksz):
        for j in range(ksz):
            d_weight[:, i, j] = np.einsum("yxc,yxc->c", g, padded[i:i + gh, j:j + gw])
            d_padded[i:i + gh, j:j + gw] += g * weight[:, i, j]
    d_v = d_padded[p:p + gh, p:p + gw].reshape(n, d)
    return d_v, d_weight, g.sum(axis=(0, 1))


def backward_saga_block(x: np.ndarray, params: SagaParams, cfg: AttnConfig, d_out: np.ndarray) -> GradBundle:
    """Gradients with respect to X and every parameter tensor of the block."""
    out, c = saga_forward_with_cache(x, params, cfg)
    if d_out.shape != out.shape:
        raise DimensionError(f"upstream gradient {d_out.shape} does not match output {out.shape}")

    grads: GradBundle = {"w_out": c.mixed.T @ d_out}
    d_mixed = d_out @ params.w_out.T
    d_g = d_mixed * (c.attn + c.conv)
    d_sum = d_mixed * c.g

    per_head = [
        backward_gated_decomposed(qh, kh, vh, ah, bh, dh)
        for qh, kh, vh, ah, bh, dh in zip(
            *(multi_head_split(m, cfg.heads) for m in (c.q, c.k, c.v, c.a, c.b, d_sum))
        )
    ]
    d_q, d_k, d_v, d_a, d_b = (multi_head_merge([h[name] for h in per_head]) for name in "qkvab")

    d_v_conv, grads["dwc_weight"], grads["dwc_bias"] = _dwc_backward(d_sum, c.v, cfg, params.dwc_weight)
    d_v = d_v + d_v_conv

    d_a_logits = d_a * c.a * (1 - c.a)
    d_b_logits = d_b * c.b * (1 - c.b)

    pre = {"w_q": d_q, "w_k": d_k, "w_v": d_v, "w_a": d_a_logits, "w_b": d_b_logits, "w_g": d_g}
    d_x = np.zeros_like(x)
    for name, d_proj in pre.items():
        grads[name] = x.T @ d_proj
        d_x += d_proj @ getattr(params, name).T
    grads["x"] = d_x
    return grads


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    point: np.ndarray,
    analytic_grad: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Max over coordinates of ``|fd - analytic| / max(|fd|, |analytic|, 1e-8)``.

    ``fd`` is the central difference ``(f(x + h e) - f(x - h e)) / 2h``.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    if analytic_grad.shape != point.shape:
        raise DimensionError(f"gradient shape {analytic_grad.shape} != point shape {point.shape}")
    x = np.array(point, dtype=np.float64)
    worst = 0.0
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        f_plus = f(x)
        x[idx] = orig - step
        f_minus = f(x)
        x[idx] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"objective is non-finite at perturbed coordinate {idx}")
        fd = (f_plus - f_minus) / (2 * step)
        an = float(analytic_grad[idx])
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def gradcheck_saga_block(
    x: np.ndarray, params: SagaParams, cfg: AttnConfig, d_out: np.ndarray, step: float = 1e-5
) -> dict[str, float]:
    """Finite-difference check of every gradient of the block; worst error per tensor."""
    grads = backward_saga_block(x, params, cfg, d_out)

    def surrogate(xx: np.ndarray, pp: SagaParams) -> float:
        out, _ = saga_forward_with_cache(xx, pp, cfg)
        return float(np.sum(d_out * out))

    errors = {"x": finite_diff_check(lambda xx: surrogate(xx, params), x, grads["x"], step)}
    fields_ = params.as_dict()
    for name, value in fields_.items():
        def f(p, name=name):
            return surrogate(x, SagaParams(**{**fields_, name: p}))

        errors[name] = finite_diff_check(f, value, grads[name], step)
    return errors
