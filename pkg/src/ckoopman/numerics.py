"""Dense linear algebra shared by the estimators, POD and MPC."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._validation import check_positive, check_symmetric
from .exceptions import InputError, NumericalError

log = logging.getLogger(__name__)

__all__ = ['TruncatedSvd', 'ridge_solve', 'cho_factor_jittered', 'pinv',
           'psd_pinv_factor', 'truncated_svd', 'DEFAULT_PINV_RTOL']

DEFAULT_PINV_RTOL = 1e-12
JITTER_LEVELS = (1e-12, 1e-10, 1e-8)


@dataclass(frozen=True)
class TruncatedSvd:
    """Leading eigen/singular pairs of a symmetric PSD matrix."""

    V_r: np.ndarray
    sigma_r: np.ndarray
    energy_fraction: float

    @property
    def rank(self):
        return self.sigma_r.size


def cho_factor_jittered(K, lam):
    """Cholesky factor of ``K + lam I`` with jitter escalation.

    Returns the lower-triangular factor and the jitter actually added
    (relative to the mean diagonal).
    """
    K = check_symmetric(K, 'K')
    lam = check_positive(lam, 'lam')
    n = K.shape[0]
    M = K + lam * np.eye(n)
    scale = float(np.mean(np.diag(M))) if n else 1.0
    tried = []
    for jitter in (0.0,) + JITTER_LEVELS:
        if jitter:
            tried.append(jitter)
            log.debug('retrying Cholesky with relative jitter %g', jitter)
        try:
            L = linalg.cholesky(M + jitter * scale * np.eye(n), lower=True,
                                check_finite=False)
        except linalg.LinAlgError:
            continue
        return L, jitter
    raise NumericalError(
        f'Cholesky of K + {lam:g} I failed at jitter levels {tried}',
        jitter_levels=tried)


def ridge_solve(K, B, lam):
    """Solve ``(K + lam I) X = B`` for symmetric PSD ``K``."""
    B = np.asarray(B, dtype=np.float64)
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    if B.shape[0] != np.shape(K)[0]:
        raise InputError(
            f'right-hand side has {B.shape[0]} rows, K has {np.shape(K)[0]}')
    L, _ = cho_factor_jittered(K, lam)
    X = linalg.cho_solve((L, True), B, check_finite=False)
    return X[:, 0] if squeeze else X


def pinv(M, rtol=DEFAULT_PINV_RTOL):
    """Moore-Penrose pseudoinverse, dropping ``sigma < rtol * sigma_max``."""
    if rtol < 0:
        raise InputError(f'rtol must be non-negative, got {rtol}')
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise InputError(f'pinv expects a matrix, got shape {M.shape}')
    if M.size == 0 or not np.any(M):
        return np.zeros(M.shape[::-1])
    return np.linalg.pinv(M, rcond=rtol)


def psd_pinv_factor(K, rtol=DEFAULT_PINV_RTOL):
    """Factor ``T`` with ``T @ T.T == pinv(K, rtol)`` for symmetric PSD ``K``.

    ``T = Q_r diag(lambda_r)^(-1/2)`` over the eigenpairs kept by the same
    ``rtol * lambda_max`` rule as :func:`pinv`. Working in these whitened
    coordinates avoids forming products whose condition number is squared.
    """
    if rtol < 0:
        raise InputError(f'rtol must be non-negative, got {rtol}')
    K = check_symmetric(K, 'K')
    if K.size == 0:
        return np.zeros((0, 0))
    evals, evecs = linalg.eigh(K, check_finite=False)
    top = evals[-1]
    if top <= 0.0:
        return np.zeros((K.shape[0], 0))
    keep = evals > rtol * top
    return evecs[:, keep] / np.sqrt(evals[keep])


def truncated_svd(K, tau=None, rank=None, psd_tol=1e-8):
    """Energy-truncated decomposition ``K ~ V_r diag(sigma_r) V_r^T``.

    With ``tau`` (percent) the rank is the smallest ``r`` whose cumulative
    squared-singular-value energy reaches ``tau``; ties at the cut are all
    kept. ``rank`` fixes ``r`` directly instead.
    """
    if (tau is None) == (rank is None):
        raise InputError('give exactly one of tau and rank')
    K = check_symmetric(K, 'K')
    N = K.shape[0]
    evals, evecs = linalg.eigh(K, check_finite=False)
    top = max(abs(evals[-1]), abs(evals[0])) if N else 0.0
    if N and evals[0] < -psd_tol * top:
        raise NumericalError(
            f'matrix is not PSD: min eigenvalue {evals[0]:.3e}, '
            f'max {evals[-1]:.3e}')
    order = np.argsort(-np.abs(evals), kind='stable')
    sigma = np.abs(evals[order])
    V = evecs[:, order]
    energy = np.cumsum(sigma ** 2)
    total = energy[-1] if N else 0.0
    if total == 0.0:
        raise NumericalError('cannot truncate a zero matrix')
    if rank is not None:
        r = int(rank)
        if not 1 <= r <= N:
            raise InputError(f'rank must lie in [1, {N}], got {rank}')
    else:
        tau = float(tau)
        if not 0.0 < tau <= 100.0:
            raise InputError(f'tau must lie in (0, 100], got {tau}')
        ratio = energy / total * 100.0
        r = int(np.searchsorted(ratio, tau, side='left')) + 1
        r = min(r, N)
        # keep every singular value tied with the last retained one
        while r < N and sigma[r] == sigma[r - 1]:
            r += 1
    return TruncatedSvd(V_r=V[:, :r].copy(), sigma_r=sigma[:r].copy(),
                        energy_fraction=float(energy[r - 1] / total))
