"""Mixed-precision matrix-computation toolkit.

Emulated low-precision formats, dense kernels with per-operation rounding,
GMRES-based iterative refinement, sparse approximate inverse preconditioners,
single-pass randomized Nystrom approximation, and adaptive-precision HODLR
matrices, plus a CLI harness that runs the bundled experiments.
"""

from .formats import (
    FloatFormat,
    RoundEvents,
    builtin_formats,
    format_range,
    get_format,
    round_matrix,
    round_scalar,
)

__version__ = "0.1.0"

__all__ = [
    "FloatFormat",
    "RoundEvents",
    "builtin_formats",
    "format_range",
    "get_format",
    "round_matrix",
    "round_scalar",
    "__version__",
]
