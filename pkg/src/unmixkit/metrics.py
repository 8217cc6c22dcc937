import numpy as np

from .errors import DimensionError


def rmse(y, yhat):
    """Root mean squared error between two equal-length spectra."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise DimensionError(f"rmse operands differ in shape: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        return 0.0
    d = y - yhat
    return float(np.sqrt(np.dot(d, d) / d.size))
