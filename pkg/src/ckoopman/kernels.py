"""Scalar kernels and the control-affine product kernel.

The state kernel ``k_X`` and control kernel ``k_U`` combine into

    k_Z((x, u), (x', u')) = k_X(x, x') * (1 + k_U(u, u'))

whose RKHS contains every function affine in the (lifted) input.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from ._validation import as_matrix, as_vector, check_same_rows
from .exceptions import InputError

__all__ = [
    'KernelFamily',
    'KernelSpec',
    'CompositeControlKernel',
    'eval_kernel',
    'gram',
    'composite_gram',
]


class KernelFamily(str, Enum):
    GAUSSIAN = 'gaussian'
    LINEAR = 'linear'
    # Gaussian base plus a linear term; lets the state itself be read out
    # exactly from kernel sections.
    LINEAR_PLUS_IDENTITY = 'linear+identity'


@dataclass(frozen=True)
class KernelSpec:
    """Declarative scalar kernel.

    Parameters
    ----------
    family : KernelFamily or str
        ``'gaussian'``, ``'linear'`` or ``'linear+identity'``.
    bandwidth : float, optional
        Gaussian width ``mu`` in ``exp(-||a - b||^2 / mu)``. Required for
        ``'gaussian'`` and ``'linear+identity'``.
    """

    family: KernelFamily
    bandwidth: float = None

    def __post_init__(self):
        try:
            family = KernelFamily(self.family)
        except ValueError:
            raise InputError(f'unknown kernel family {self.family!r}') from None
        object.__setattr__(self, 'family', family)
        if family is KernelFamily.LINEAR:
            if self.bandwidth is not None:
                raise InputError('linear kernel takes no bandwidth')
            return
        if self.bandwidth is None:
            raise InputError(f'{family.value} kernel requires a bandwidth')
        mu = float(self.bandwidth)
        if not np.isfinite(mu) or mu <= 0:
            raise InputError(f'bandwidth must be positive, got {self.bandwidth!r}')
        object.__setattr__(self, 'bandwidth', mu)

    @classmethod
    def gaussian(cls, bandwidth):
        return cls(KernelFamily.GAUSSIAN, bandwidth)

    @classmethod
    def linear(cls):
        return cls(KernelFamily.LINEAR)

    @classmethod
    def linear_plus_identity(cls, bandwidth):
        return cls(KernelFamily.LINEAR_PLUS_IDENTITY, bandwidth)

    @property
    def is_linear(self):
        return self.family is KernelFamily.LINEAR

    def to_dict(self):
        out = {'family': self.family.value}
        if self.bandwidth is not None:
            out['bandwidth'] = self.bandwidth
        return out

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {'family', 'bandwidth'}
        if unknown:
            raise InputError(f'unknown kernel fields: {sorted(unknown)}')
        if 'family' not in d:
            raise InputError('kernel spec needs a family')
        return cls(d['family'], d.get('bandwidth'))

    @classmethod
    def coerce(cls, value, bandwidth=None):
        """Build a spec from a spec, a dict, or a family name."""
        if isinstance(value, KernelSpec):
            return value
        if isinstance(value, dict):
            return cls.from_dict(value)
        family = KernelFamily(value)
        if family is KernelFamily.LINEAR:
            return cls(family)
        return cls(family, bandwidth)


@dataclass(frozen=True)
class CompositeControlKernel:
    state_kernel: KernelSpec
    control_kernel: KernelSpec


def eval_kernel(spec, a, b):
    """Evaluate ``k(a, b)`` for two vectors of equal length."""
    a = as_vector(a, 'a')
    b = as_vector(b, 'b')
    if a.size != b.size:
        raise InputError(f'dimension mismatch: {a.size} vs {b.size}')
    if spec.family is KernelFamily.LINEAR:
        return float(np.dot(a, b))
    diff = a - b
    value = float(np.exp(-np.dot(diff, diff) / spec.bandwidth))
    if spec.family is KernelFamily.LINEAR_PLUS_IDENTITY:
        value += float(np.dot(a, b))
    return value


def gram(spec, A, B=None):
    """Kernel matrix ``K[i, j] = k(A[i], B[j])``.

    With ``B`` omitted the self-Gram is built from one triangle, so it is
    exactly symmetric.
    """
    A = as_matrix(A, 'A', allow_empty=True)
    if B is None:
        return _self_gram(spec, A)
    B = as_matrix(B, 'B', allow_empty=True)
    if A.shape[1] != B.shape[1]:
        raise InputError(
            f'dimension mismatch: A has {A.shape[1]} columns, '
            f'B has {B.shape[1]}')
    if spec.family is KernelFamily.LINEAR:
        return A @ B.T
    K = np.exp(-cdist(A, B, 'sqeuclidean') / spec.bandwidth)
    if spec.family is KernelFamily.LINEAR_PLUS_IDENTITY:
        K += A @ B.T
    return K


def _self_gram(spec, A):
    n = A.shape[0]
    if spec.family is KernelFamily.LINEAR:
        K = A @ A.T
    else:
        if n < 2:
            K = np.ones((n, n))
        else:
            K = squareform(np.exp(-pdist(A, 'sqeuclidean') / spec.bandwidth))
            np.fill_diagonal(K, 1.0)
        if spec.family is KernelFamily.LINEAR_PLUS_IDENTITY:
            K = K + A @ A.T
    iu = np.triu_indices(n, 1)
    K[iu[1], iu[0]] = K[iu]
    return K


def composite_gram(ck, X, U, X2=None, U2=None):
    """Control-affine Gram ``K_X * (1 + K_U)`` (Hadamard product)."""
    X = as_matrix(X, 'X')
    U = as_matrix(U, 'U')
    check_same_rows(X=X, U=U)
    if X2 is None and U2 is None:
        return gram(ck.state_kernel, X) * (1.0 + gram(ck.control_kernel, U))
    if X2 is None or U2 is None:
        raise InputError('X2 and U2 must be given together')
    X2 = as_matrix(X2, 'X2')
    U2 = as_matrix(U2, 'U2')
    check_same_rows(X2=X2, U2=U2)
    return (gram(ck.state_kernel, X, X2)
            * (1.0 + gram(ck.control_kernel, U, U2)))
