"""Multiply counting and transient-workspace accounting.

Both are opt-in. ``count_multiplies`` installs a counter for the current
context; the primitives in :mod:`saga_attn.linalg` report into it, and callers
attribute work to named cost terms with :func:`cost_term`.
"""

from __future__ import annotations

from collections import defaultdict
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator

import numpy as np

_ACTIVE: ContextVar["MultiplyCounter | None"] = ContextVar("_ACTIVE", default=None)
_TERM: ContextVar[str] = ContextVar("_TERM", default="other")


class MultiplyCounter:
    """Scalar multiplications executed, bucketed by cost term."""

    def __init__(self) -> None:
        self.by_term: dict[str, int] = defaultdict(int)

    def add(self, n: int) -> None:
        self.by_term[_TERM.get()] += int(n)

    @property
    def total(self) -> int:
        return sum(self.by_term.values())

    def __getitem__(self, term: str) -> int:
        return self.by_term.get(term, 0)


@contextmanager
def count_multiplies() -> Iterator[MultiplyCounter]:
    counter = MultiplyCounter()
    token = _ACTIVE.set(counter)
    try:
        yield counter
    finally:
        _ACTIVE.reset(token)


@contextmanager
def cost_term(name: str) -> Iterator[None]:
    token = _TERM.set(name)
    try:
        yield
    finally:
        _TERM.reset(token)


def record_multiplies(n: int) -> None:
    counter = _ACTIVE.get()
    if counter is not None:
        counter.add(n)


class Workspace:
    """Tracks live and peak transient element counts for one kernel call.

    Kernels allocate their scratch arrays through :meth:`empty` (or register
    arrays produced by numpy with :meth:`track`) and release them with
    :meth:`free`. Inputs and returned outputs are never registered.
    """

    def __init__(self) -> None:
        self.live = 0
        self.peak = 0
        self._sizes: dict[int, int] = {}

    def empty(self, shape: tuple[int, ...], dtype) -> np.ndarray:
        return self.track(np.empty(shape, dtype=dtype))

    def track(self, arr: np.ndarray) -> np.ndarray:
        self._sizes[id(arr)] = arr.size
        self.live += arr.size
        self.peak = max(self.peak, self.live)
        return arr

    def free(self, arr: np.ndarray) -> None:
        self.live -= self._sizes.pop(id(arr))
