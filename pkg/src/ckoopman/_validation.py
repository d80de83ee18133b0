"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import InputError


def as_matrix(a, name, n_cols=None, allow_empty=False):
    """Return ``a`` as a finite 2-D float64 array.

    1-D input becomes a column when ``n_cols == 1`` and a single row
    otherwise.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if n_cols == 1 else arr.reshape(1, -1)
    if arr.ndim != 2:
        raise InputError(f'{name} must be 2-D, got shape {arr.shape}')
    if not allow_empty and arr.shape[0] == 0:
        raise InputError(f'{name} has no rows')
    if n_cols is not None and arr.shape[1] != n_cols:
        raise InputError(
            f'{name} has {arr.shape[1]} columns, expected {n_cols}')
    if not np.all(np.isfinite(arr)):
        raise InputError(f'{name} contains non-finite values')
    return arr


def as_vector(a, name, size=None):
    """Return ``a`` as a finite 1-D float64 array."""
    arr = np.atleast_1d(np.asarray(a, dtype=np.float64))
    if arr.ndim != 1:
        raise InputError(f'{name} must be 1-D, got shape {arr.shape}')
    if size is not None and arr.size != size:
        raise InputError(f'{name} has length {arr.size}, expected {size}')
    if not np.all(np.isfinite(arr)):
        raise InputError(f'{name} contains non-finite values')
    return arr


def check_same_rows(**arrays):
    """Raise unless every keyword array has the same number of rows."""
    rows = {k: np.shape(v)[0] for k, v in arrays.items()}
    if len(set(rows.values())) > 1:
        desc = ', '.join(f'{k}={v}' for k, v in rows.items())
        raise InputError(f'row counts differ: {desc}')


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise InputError(f'{name} must be positive, got {value!r}')
    return float(value)


def check_symmetric(M, name, rtol=1e-8):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f'{name} must be square, got shape {M.shape}')
    scale = max(np.max(np.abs(M)), 1.0) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > rtol * scale:
        raise InputError(f'{name} is not symmetric')
    return M
