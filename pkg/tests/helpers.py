import numpy as np


def central_difference(fun, X, h=1e-6):
    """Numerical gradient of scalar ``fun`` at ``X`` by central differences."""
    X = np.asarray(X, dtype=np.float64)
    grad = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        plus = X.copy()
        minus = X.copy()
        plus[idx] += h
        minus[idx] -= h
        grad[idx] = (fun(plus) - fun(minus)) / (2 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-6):
    """Coordinate-wise relative error; ``floor`` guards coordinates that are ~0."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def relative_error(analytic, numeric):
    """Norm-wise ``|a - n| / max(|a|, |n|)`` over the whole gradient array."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / denom)
