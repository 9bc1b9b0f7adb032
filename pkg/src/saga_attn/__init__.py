"""Gated linear attention kernels with cost, rank and gradient verification."""

from .attention import (
    AttnConfig,
    SagaParams,
    causal_recurrence,
    dwc,
    gated_attention_decomposed,
    gated_attention_naive,
    linear_attention_normalized,
    linear_attention_unnormalized,
    multi_head_merge,
    multi_head_split,
    saga_block_forward,
    softmax_attention,
)
from .errors import ContractError, DimensionError, NumericError

__version__ = "0.1.0"
