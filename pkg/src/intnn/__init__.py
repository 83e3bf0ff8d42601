"""Interpretable neural networks with persistent change filters for panel data."""

from .filters import (
    continuous_persistent_change,
    filter_series,
    naive_persistent_change,
    smooth_filter_gradient,
    smooth_persistent_change,
    symmetric_persistent_change,
)
from .network import NetworkParams, WindowSample, forward, gradient, interpret, loss

__version__ = "0.1.0"
