"""Kernel association tests for left-truncated competing-risks data."""

from ._core import (
    __version__,
    association_test,
    calibrate,
    davies_pvalue,
    fit_null,
    kernel_matrix,
    simulate,
)

__all__ = [
    "__version__",
    "association_test",
    "calibrate",
    "davies_pvalue",
    "fit_null",
    "kernel_matrix",
    "simulate",
]
