"""Multi-step prediction with fitted lifted models.

Prediction follows the nonparametric state-space recursion::

    z_1 = lift(x_0, u_0)
    z_{k+1} = step(z_k, u_k)        k = 1 .. H-1
    y_k = C z_k                      k = 1 .. H

so ``y_k`` estimates the observable at sample ``k``; the known initial
sample is never predicted.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, as_vector
from .exceptions import InputError, PredictionError, \
    UnsupportedConfigurationError

__all__ = ['Rollout', 'rollout', 'rollout_batch', 'lpv_matrices',
           'predict_observable', 'LIFTED_LIMIT']

LIFTED_LIMIT = 1e12


@dataclass(frozen=True)
class Rollout:
    """Lifted states ``Z[k-1] = z_k`` and predictions ``Y[k-1] = y_k``."""

    Z: np.ndarray
    Y: np.ndarray

    @property
    def horizon(self):
        return self.Z.shape[0]


def _check_inputs(model, inputs):
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1) if model.n_inputs_in_ == 1 else U[None, :]
    U = as_matrix(U, 'inputs', n_cols=model.n_inputs_in_)
    return U


def _lifted_trajectory(model, x0, U):
    z = model.lift(x0[None, :], U[:1])[0]
    Z = np.empty((U.shape[0], z.size))
    for k in range(U.shape[0]):
        if k:
            z = model.step(z, U[k])
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > LIFTED_LIMIT:
            raise PredictionError(f'lifted state diverged at step {k + 1}',
                                  step=k + 1)
        Z[k] = z
    return Z


def rollout(model, x0, inputs):
    """Predict ``H = len(inputs)`` steps ahead from ``x0``."""
    x0 = as_vector(x0, 'x0', model.n_states_in_)
    U = _check_inputs(model, inputs)
    Z = _lifted_trajectory(model, x0, U)
    return Rollout(Z, Z @ model.C_.T)


def rollout_batch(model, X0, inputs):
    """Roll out many initial conditions at once.

    ``inputs`` has shape ``(B, H, n_u)``. Returns predictions of shape
    ``(B, H, n_y)`` and a boolean mask of diverged rollouts, whose
    predictions are set to ``inf``.
    """
    X0 = as_matrix(X0, 'X0', n_cols=model.n_states_in_)
    U = np.asarray(inputs, dtype=float)
    if U.ndim != 3 or U.shape[0] != X0.shape[0] \
            or U.shape[2] != model.n_inputs_in_:
        raise InputError(f'inputs must have shape (B, H, n_u), got {U.shape}')
    B, H, _ = U.shape
    Y = np.empty((B, H, model.C_.shape[0]))
    diverged = np.zeros(B, dtype=bool)
    with np.errstate(over='ignore', invalid='ignore'):
        Z = model.lift(X0, U[:, 0])
        for k in range(H):
            if k:
                Z = model.step(Z, U[:, k])
            bad = ~np.all(np.isfinite(Z), axis=1) | (
                np.max(np.abs(Z), axis=1) > LIFTED_LIMIT)
            diverged |= bad
            Z[diverged] = 0.0
            Y[:, k] = Z @ model.C_.T
    Y[diverged] = np.inf
    return Y, diverged


def lpv_matrices(model, schedule):
    """Constant ``A`` and scheduled input matrices ``B(p_k)``.

    Returns ``(A, B)`` with ``B[k] = [B_1 p_k | ... | B_nu p_k]`` of shape
    ``(T, N, n_u)``.
    """
    if not hasattr(model, 'input_matrix'):
        raise UnsupportedConfigurationError(
            f'{type(model).__name__} has no bilinear input structure')
    P = np.asarray(schedule, dtype=float)
    if P.ndim == 1:
        P = P[None, :]
    if P.shape[1] != model.n_lifted_:
        raise InputError(
            f'schedule entries have length {P.shape[1]}, model lifts to '
            f'{model.n_lifted_}')
    B = np.stack([model.input_matrix(p) for p in P])
    return model.A_, B


def predict_observable(model, x0, inputs, observable_values):
    """Roll out a different observable without refitting the dynamics.

    ``observable_values`` holds the observable evaluated at the model's
    successor anchors, shape ``(N, n_y)`` (``N`` training rows for the full
    model, ``m`` inducing rows for the sketched one).
    """
    C = model.readout_for(observable_values)
    x0 = as_vector(x0, 'x0', model.n_states_in_)
    U = _check_inputs(model, inputs)
    return _lifted_trajectory(model, x0, U) @ C.T
