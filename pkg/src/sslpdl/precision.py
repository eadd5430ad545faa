"""Floating-point precision selection.

Training and evaluation run at the dtype selected by the SSLPDL_PRECISION
environment variable ("f32" or "f64"). The default is f64 so that runs,
checkpoints, and reports are bit-reproducible; f32 trades that for speed.
Grid files on disk are always float32, checkpoints always float64.
"""

import os

import numpy as np

from .errors import ConfigError

_DTYPES = {"f32": np.float32, "f64": np.float64}


def active_dtype() -> np.dtype:
    """Return the dtype selected by SSLPDL_PRECISION (default f64)."""
    name = os.environ.get("SSLPDL_PRECISION", "f64").lower()
    try:
        return np.dtype(_DTYPES[name])
    except KeyError:
        raise ConfigError(
            f"SSLPDL_PRECISION must be 'f32' or 'f64', got {name!r}"
        ) from None
