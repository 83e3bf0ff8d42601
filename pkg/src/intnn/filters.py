"""Persistent change filters for bounded time series.

Four related statistics on a series ``x_1..x_T`` with values in ``[0, 1]``:

* ``naive_persistent_change``: length of the terminal run of ones (binary input only).
* ``continuous_persistent_change``: the jump accumulator ``p_T`` with no smoothing.
* ``symmetric_persistent_change``: ``p_T - q_T`` with no smoothing.
* ``smooth_persistent_change``: ``p_T - q_T`` with smoothing parameter ``k``.

The smoothed recursion is evaluated as::

    p_{t+1} = x_{t+1} + k * x_{t+1} * p_t + (1 - k) * p_t
    q_{t+1} = xbar_{t+1} + k * xbar_{t+1} * q_t + (1 - k) * q_t

with ``xbar = 1 - x``.  Written this way the ``k = 1`` case reduces to the
unsmoothed recursion bit-for-bit, and swapping ``x`` with ``xbar`` swaps
``p`` with ``q`` exactly, so the filter is exactly antisymmetric whenever the
complement is exact.

All batched helpers vectorise over leading axes; time is the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "FilterAccumulators",
    "FilterTrace",
    "validate_series",
    "validate_k",
    "naive_persistent_change",
    "continuous_persistent_change",
    "symmetric_persistent_change",
    "smooth_persistent_change",
    "filter_accumulators",
    "filter_series",
    "smooth_filter_gradient",
    "run_filter",
    "filter_backward",
]


@dataclass(frozen=True)
class FilterAccumulators:
    """Terminal jump (``p``) and drop (``q``) accumulators."""

    p: float
    q: float

    @property
    def value(self) -> float:
        return self.p - self.q


@dataclass
class FilterTrace:
    """Forward pass state kept for back-propagation.

    ``p`` and ``q`` have shape ``(..., T)``; column ``t`` holds the
    accumulators after consuming ``x_t``.
    """

    x: np.ndarray
    xbar: np.ndarray
    k: np.ndarray
    p: np.ndarray
    q: np.ndarray

    @property
    def value(self) -> np.ndarray:
        return self.p[..., -1] - self.q[..., -1]


def validate_series(x, *, allow_empty: bool = False) -> np.ndarray:
    """Return ``x`` as a 1-D float array, rejecting values outside [0, 1]."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"series must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise ValueError("series must contain at least one value")
    bad = np.flatnonzero(~((arr >= 0.0) & (arr <= 1.0)))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"series value at index {i} is {arr[i]!r}, outside [0, 1]")
    return arr


def validate_k(k: float) -> float:
    k = float(k)
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"smoothing parameter k={k!r} outside [0, 1]")
    return k


def naive_persistent_change(x: Sequence[float]) -> int:
    """Length of the run of ones that ends at the last period."""
    arr = validate_series(x)
    bad = np.flatnonzero((arr != 0.0) & (arr != 1.0))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"naive persistent change needs binary input; index {i} is {arr[i]!r}")
    zeros = np.flatnonzero(arr == 0.0)
    if zeros.size == 0:
        return int(arr.size)
    return int(arr.size - 1 - zeros[-1])


def run_filter(x: np.ndarray, xbar: np.ndarray, k) -> FilterTrace:
    """Batched forward recursion.

    ``x`` and ``xbar`` have shape ``(..., T)``; ``k`` broadcasts against
    ``x[..., 0]``.  No validation is done here.
    """
    x = np.asarray(x, dtype=np.float64)
    xbar = np.asarray(xbar, dtype=np.float64)
    k = np.broadcast_to(np.asarray(k, dtype=np.float64), x.shape[:-1])
    keep = 1.0 - k
    if x.ndim == 1:
        return _run_filter_1d(x, xbar, k)
    p = np.empty_like(x)
    q = np.empty_like(x)
    p[..., 0] = x[..., 0]
    q[..., 0] = xbar[..., 0]
    for t in range(1, x.shape[-1]):
        xt = x[..., t]
        xbt = xbar[..., t]
        pp = p[..., t - 1]
        qq = q[..., t - 1]
        p[..., t] = xt + k * xt * pp + keep * pp
        q[..., t] = xbt + k * xbt * qq + keep * qq
    return FilterTrace(x=x, xbar=xbar, k=k, p=p, q=q)


def _run_filter_1d(x: np.ndarray, xbar: np.ndarray, k: np.ndarray) -> FilterTrace:
    # same operation order as the batched loop, on Python floats: numpy's
    # per-call overhead dominates for a single series
    kk = float(k)
    keep = 1.0 - kk
    ps, qs = [0.0] * x.size, [0.0] * x.size
    pp, qq = float(x[0]), float(xbar[0])
    ps[0], qs[0] = pp, qq
    for t, (xt, xbt) in enumerate(zip(x[1:].tolist(), xbar[1:].tolist()), start=1):
        pp = xt + kk * xt * pp + keep * pp
        qq = xbt + kk * xbt * qq + keep * qq
        ps[t], qs[t] = pp, qq
    return FilterTrace(x=x, xbar=xbar, k=k, p=np.array(ps), q=np.array(qs))


def filter_backward(trace: FilterTrace, upstream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Back-propagate ``upstream * d(p_T - q_T)`` through a forward trace.

    Returns gradients with respect to ``x``, ``xbar`` (treated as independent
    inputs) and ``k``.  Shapes follow the trace.
    """
    x, xbar, k, p, q = trace.x, trace.xbar, trace.k, trace.p, trace.q
    gp = np.broadcast_to(np.asarray(upstream, dtype=np.float64), k.shape).copy()
    gq = -gp
    gx = np.zeros_like(x)
    gxbar = np.zeros_like(xbar)
    gk = np.zeros(k.shape)
    keep = 1.0 - k
    for t in range(x.shape[-1] - 1, 0, -1):
        xt = x[..., t]
        xbt = xbar[..., t]
        pp = p[..., t - 1]
        qq = q[..., t - 1]
        gx[..., t] = gp * (1.0 + k * pp)
        gxbar[..., t] = gq * (1.0 + k * qq)
        gk += gp * (xt * pp - pp) + gq * (xbt * qq - qq)
        gp = gp * (k * xt + keep)
        gq = gq * (k * xbt + keep)
    gx[..., 0] = gp
    gxbar[..., 0] = gq
    return gx, gxbar, gk


def _trace(x, k) -> FilterTrace:
    arr = validate_series(x)
    return run_filter(arr, 1.0 - arr, validate_k(k))


def filter_accumulators(x: Sequence[float], k: float) -> FilterAccumulators:
    tr = _trace(x, k)
    return FilterAccumulators(p=float(tr.p[-1]), q=float(tr.q[-1]))


def continuous_persistent_change(x: Sequence[float]) -> float:
    """Unsmoothed jump accumulator; extends the naive measure to [0, 1] inputs."""
    return filter_accumulators(x, 1.0).p


def symmetric_persistent_change(x: Sequence[float]) -> float:
    return filter_accumulators(x, 1.0).value


def smooth_persistent_change(x: Sequence[float], k: float) -> float:
    """The persistent change filter value ``p_T - q_T`` at smoothing ``k``."""
    return filter_accumulators(x, k).value


def filter_series(x: Sequence[float], k: float) -> np.ndarray:
    """Running filter values ``z_t`` for every prefix, in one pass."""
    tr = _trace(x, k)
    return tr.p - tr.q


def smooth_filter_gradient(x: Sequence[float], k: float, upstream: float = 1.0) -> tuple[np.ndarray, float]:
    """Exact ``upstream * dD/dx_t`` for every ``t`` and ``upstream * dD/dk``."""
    tr = _trace(x, k)
    gx, gxbar, gk = filter_backward(tr, upstream)
    # xbar = 1 - x
    return gx - gxbar, float(gk)
