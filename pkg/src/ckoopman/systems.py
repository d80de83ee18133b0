"""Benchmark control-affine systems, RK4 with zero-order hold, data sets."""

import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, as_vector
from .data import SnapshotDataset, make_rng
from .exceptions import InputError, SimulationError

__all__ = [
    'ControlAffineOde', 'SimConfig', 'duffing', 'van_der_pol',
    'van_der_pol_optimal_feedback', 'linear_ode', 'rk4_step', 'simulate',
    'grid_initial_conditions', 'random_initial_conditions',
    'UniformRandomInput', 'SignalInput', 'FeedbackInput',
    'generate_snapshots', 'DIVERGENCE_LIMIT',
]

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class ControlAffineOde:
    """``xdot = drift(x) + input_matrix(x) @ u``.

    Both callables accept a state array of shape ``(..., n_x)``;
    ``input_matrix`` returns shape ``(..., n_x, n_u)``.
    """

    name: str
    n_x: int
    n_u: int
    drift: callable
    input_matrix: callable

    def vector_field(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.drift(x) + np.einsum('...ij,...j->...i',
                                         self.input_matrix(x), u)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    substeps: int = 1
    state_bounds: tuple = None
    input_bounds: tuple = None

    def __post_init__(self):
        if not self.dt > 0:
            raise InputError(f'dt must be positive, got {self.dt}')
        if int(self.substeps) < 1:
            raise InputError(f'substeps must be >= 1, got {self.substeps}')


def _duffing_drift(x):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, x1 - x1 ** 3 - 0.5 * x2], axis=-1)


def _duffing_input(x):
    x1 = x[..., 0]
    g = np.stack([np.zeros_like(x1), 2.0 + np.sin(x1)], axis=-1)
    return g[..., None]


def duffing():
    """Controlled damped Duffing oscillator."""
    return ControlAffineOde('duffing', 2, 1, _duffing_drift, _duffing_input)


def _vdp_drift(x):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([x2, -x1 - 0.5 * x2 * (1.0 - x1 ** 2)], axis=-1)


def _vdp_input(x):
    x1 = x[..., 0]
    return np.stack([np.zeros_like(x1), x1], axis=-1)[..., None]


def van_der_pol():
    """Van der Pol oscillator whose input enters through ``x1 * u``.

    The origin is an unstable equilibrium that is not linearly controllable.
    """
    return ControlAffineOde('van_der_pol', 2, 1, _vdp_drift, _vdp_input)


def van_der_pol_optimal_feedback(x):
    """Infinite-horizon optimal law ``u = -x1 x2`` for cost ``x2^2 + u^2``."""
    x = np.asarray(x, dtype=float)
    return (-x[..., 0] * x[..., 1])[..., None]


def linear_ode(A, B, name='linear'):
    """``xdot = A x + B u`` as a :class:`ControlAffineOde`."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)

    def drift(x):
        return x @ A.T

    def input_matrix(x):
        return np.broadcast_to(B, x.shape[:-1] + B.shape)

    return ControlAffineOde(name, A.shape[0], B.shape[1], drift, input_matrix)


def rk4_step(ode, x, u, h):
    """One classical Runge-Kutta step with ``u`` held constant."""
    if not h > 0:
        raise InputError(f'step must be positive, got {h}')
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = ode.vector_field(x, u)
    k2 = ode.vector_field(x + 0.5 * h * k1, u)
    k3 = ode.vector_field(x + 0.5 * h * k2, u)
    k4 = ode.vector_field(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _zoh_interval(ode, x, u, cfg):
    h = cfg.dt / cfg.substeps
    for _ in range(int(cfg.substeps)):
        x = rk4_step(ode, x, u, h)
    return x


def _check_bounds(values, bounds, what):
    if bounds is None or values.size == 0:
        return
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    if np.any(values < lo) or np.any(values > hi):
        warnings.warn(f'{what} outside declared bounds', RuntimeWarning,
                      stacklevel=3)


def simulate(ode, x0, inputs, cfg):
    """Sampled ZOH trajectory, shape ``(len(inputs) + 1, n_x)``."""
    x = as_vector(x0, 'x0', ode.n_x)
    U = np.asarray(inputs, dtype=float).reshape(-1, ode.n_u)
    _check_bounds(U, cfg.input_bounds, 'inputs')
    out = np.empty((U.shape[0] + 1, ode.n_x))
    out[0] = x
    for k, u in enumerate(U):
        x = _zoh_interval(ode, x, u, cfg)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f'non-finite state at step {k + 1}',
                                  step=k + 1)
        if np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise SimulationError(f'state diverged at step {k + 1}',
                                  step=k + 1)
        out[k + 1] = x
    return out


def grid_initial_conditions(n_per_dim, bounds):
    """Tensor grid; ``bounds`` is a sequence of ``(low, high)`` per state."""
    axes = [np.linspace(lo, hi, n_per_dim) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing='ij')
    return np.stack([m.ravel() for m in mesh], axis=-1)


def random_initial_conditions(count, bounds, seed):
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    return make_rng(seed).uniform(lo, hi, size=(int(count), lo.size))


class UniformRandomInput:
    """I.i.d. uniform inputs in ``[low, high]``, one stream per trajectory."""

    def __init__(self, low, high):
        self.low = np.atleast_1d(np.asarray(low, dtype=float))
        self.high = np.atleast_1d(np.asarray(high, dtype=float))

    def draw(self, n_traj, length, n_u, seed):
        out = np.empty((n_traj, length, n_u))
        for i in range(n_traj):
            out[i] = make_rng((seed, i)).uniform(self.low, self.high,
                                                 size=(length, n_u))
        return out

    def __call__(self, k, t, x, pre):
        return pre[:, k]


class SignalInput:
    """Open-loop signal ``u(t)`` evaluated at the sample instants."""

    def __init__(self, fn):
        self.fn = fn

    def draw(self, n_traj, length, n_u, seed):
        return None

    def __call__(self, k, t, x, pre):
        u = np.asarray(self.fn(t), dtype=float).reshape(-1)
        return np.broadcast_to(u, (x.shape[0], u.size))


class FeedbackInput:
    """State feedback ``policy(x)`` plus uniform exploration noise."""

    def __init__(self, policy, low, high):
        self.policy = policy
        self.noise = UniformRandomInput(low, high)

    def draw(self, n_traj, length, n_u, seed):
        return self.noise.draw(n_traj, length, n_u, seed)

    def __call__(self, k, t, x, pre):
        return np.asarray(self.policy(x), dtype=float) + pre[:, k]


def generate_snapshots(ode, initial_conditions, input_law, length, cfg, seed):
    """Simulate one trajectory per initial condition and stack the triples.

    Every trajectory is integrated in lock-step; the random input stream of
    trajectory ``i`` depends only on ``(seed, i)``.
    """
    X0 = as_matrix(initial_conditions, 'initial_conditions', n_cols=ode.n_x)
    length = int(length)
    if length < 1:
        raise InputError(f'length must be >= 1, got {length}')
    n_traj = X0.shape[0]
    pre = input_law.draw(n_traj, length, ode.n_u, seed)
    states = np.empty((n_traj, length + 1, ode.n_x))
    inputs = np.empty((n_traj, length, ode.n_u))
    x = X0.copy()
    states[:, 0] = x
    for k in range(length):
        u = np.broadcast_to(input_law(k, k * cfg.dt, x, pre),
                            (n_traj, ode.n_u))
        inputs[:, k] = u
        x = _zoh_interval(ode, x, u, cfg)
        bad = ~np.all(np.isfinite(x), axis=1) | (
            np.max(np.abs(x), axis=1) > DIVERGENCE_LIMIT)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise SimulationError(
                f'trajectory {i} diverged at step {k + 1}', step=k + 1,
                trajectory=i)
        states[:, k + 1] = x
    _check_bounds(inputs, cfg.input_bounds, 'inputs')
    return SnapshotDataset(states[:, :-1].reshape(-1, ode.n_x),
                           inputs.reshape(-1, ode.n_u),
                           states[:, 1:].reshape(-1, ode.n_x),
                           (length,) * n_traj)
