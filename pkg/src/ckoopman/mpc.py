"""Iterated LPV model predictive control on fitted bilinear models.

At every sample the measured state is lifted, the bilinear prediction
model is frozen along a scheduling sequence ``p_0 .. p_{T-1}`` into a
linear time-varying one, and a single condensed QP over the inputs is
solved. The optimal inputs are then pushed through the true bilinear model
to produce the schedule for the next sample.

Prediction convention (consistent with :mod:`ckoopman.predictor`)::

    z_1 = lift(x, 0) + J(x) u_0                 (J = d lift / d u)
    z_{i+1} = A z_i + B(p_i) u_i,   i >= 1
    y_i = C z_i  estimates  x(t + i)
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_vector, check_symmetric
from .exceptions import InputError, NumericalError, SimulationError
from .qp import QpSolution, QuadraticProgram, kkt_residuals, solve_qp
from .systems import SimConfig, simulate

log = logging.getLogger(__name__)

__all__ = [
    'MpcProblem', 'SchedulingSequence', 'QpSolution', 'QuadraticProgram',
    'solve_qp', 'kkt_residuals', 'LpvMpcController', 'LinearStateSpace',
    'ClosedLoopResult', 'build_qp', 'lpv_mpc_step', 'closed_loop',
    'lmpc_baseline', 'discretize_rk4', 'jacobians',
]


def _weight(M, n, name, definite=False):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape == (1, 1) and n > 1:
        M = M[0, 0] * np.eye(n)
    if M.shape != (n, n):
        raise InputError(f'{name} must be {n}x{n}, got {M.shape}')
    M = check_symmetric(M, name)
    low = np.linalg.eigvalsh(M)[0]
    if definite and low <= 0:
        raise InputError(f'{name} must be positive definite')
    if low < -1e-10 * max(1.0, np.abs(M).max()):
        raise InputError(f'{name} must be positive semidefinite')
    return M


def _bounds(lo, hi, n, name):
    lo = np.full(n, -np.inf) if lo is None else np.broadcast_to(
        np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.full(n, np.inf) if hi is None else np.broadcast_to(
        np.asarray(hi, dtype=float), (n,)).copy()
    if np.any(lo > hi):
        raise InputError(f'{name} bounds need min <= max')
    return lo, hi


@dataclass(frozen=True)
class MpcProblem:
    """Weights, horizon, bounds and references of the tracking problem.

    ``x_ref`` and ``u_ref`` are either one vector (constant reference) or
    one row per absolute sample index; indices past the last row hold the
    last row.
    """

    Q: np.ndarray
    R: np.ndarray
    horizon: int
    Q_T: np.ndarray = None
    x_min: np.ndarray = None
    x_max: np.ndarray = None
    u_min: np.ndarray = None
    u_max: np.ndarray = None
    x_ref: np.ndarray = None
    u_ref: np.ndarray = None

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n_x = Q.shape[0]
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n_u = R.shape[0]
        set_ = object.__setattr__
        set_(self, 'Q', _weight(Q, n_x, 'Q'))
        set_(self, 'R', _weight(R, n_u, 'R', definite=True))
        set_(self, 'Q_T', _weight(
            np.zeros((n_x, n_x)) if self.Q_T is None else self.Q_T, n_x,
            'Q_T'))
        if int(self.horizon) < 1:
            raise InputError(f'horizon must be >= 1, got {self.horizon}')
        set_(self, 'horizon', int(self.horizon))
        x_min, x_max = _bounds(self.x_min, self.x_max, n_x, 'state')
        u_min, u_max = _bounds(self.u_min, self.u_max, n_u, 'input')
        set_(self, 'x_min', x_min)
        set_(self, 'x_max', x_max)
        set_(self, 'u_min', u_min)
        set_(self, 'u_max', u_max)
        xr = np.zeros(n_x) if self.x_ref is None else self.x_ref
        ur = np.zeros(n_u) if self.u_ref is None else self.u_ref
        set_(self, 'x_ref', as_matrix(np.atleast_2d(xr), 'x_ref',
                                      n_cols=n_x))
        set_(self, 'u_ref', as_matrix(np.atleast_2d(ur), 'u_ref',
                                      n_cols=n_u))

    @property
    def n_x(self):
        return self.Q.shape[0]

    @property
    def n_u(self):
        return self.R.shape[0]

    def references(self, t):
        """``x_ref`` for samples ``t+1 .. t+T`` and ``u_ref`` for ``t ..
        t+T-1``."""
        T = self.horizon
        xi = np.minimum(np.arange(t + 1, t + T + 1), len(self.x_ref) - 1)
        ui = np.minimum(np.arange(t, t + T), len(self.u_ref) - 1)
        return self.x_ref[xi], self.u_ref[ui]


@dataclass(frozen=True)
class SchedulingSequence:
    """Lifted scheduling points ``p_0 .. p_{T-1}`` (rows of ``P``)."""

    P: np.ndarray

    @classmethod
    def constant(cls, z, horizon):
        z = np.asarray(z, dtype=float).reshape(1, -1)
        return cls(np.repeat(z, int(horizon), axis=0))

    @property
    def horizon(self):
        return self.P.shape[0]

    def shifted(self):
        """Advance by one sample, duplicating the last entry."""
        return SchedulingSequence(np.vstack([self.P[1:], self.P[-1:]]))


class LinearStateSpace:
    """Affine discrete model ``x+ = A_d x + B_d u + c`` in the lifted API.

    The lifted state is ``z = [x; 1]``; ``lift(x, u)`` already returns the
    successor so that ``C z_k`` estimates ``x_k`` as for the kernel models.
    """

    flavor = 'linear'

    def __init__(self, A_d, B_d, c=None):
        A_d = np.atleast_2d(np.asarray(A_d, dtype=float))
        n_x = A_d.shape[0]
        B_d = np.asarray(B_d, dtype=float).reshape(n_x, -1)
        c = np.zeros(n_x) if c is None else as_vector(c, 'c', n_x)
        self.A_d, self.B_d, self.c = A_d, B_d, c
        self.n_states_in_, self.n_inputs_in_ = n_x, B_d.shape[1]
        self.A_ = np.block([[A_d, c[:, None]],
                            [np.zeros((1, n_x)), np.ones((1, 1))]])
        self.B_ = np.vstack([B_d, np.zeros((1, B_d.shape[1]))])
        self.C_ = np.hstack([np.eye(n_x), np.zeros((n_x, 1))])

    @property
    def n_lifted_(self):
        return self.A_.shape[0]

    def lift(self, X, U):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.asarray(U, dtype=float).reshape(X.shape[0], -1)
        Z = np.hstack([X, np.ones((X.shape[0], 1))])
        return Z @ self.A_.T + U @ self.B_.T

    def step(self, z, u):
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        Z = np.atleast_2d(z)
        out = Z @ self.A_.T + u.reshape(Z.shape[0], -1) @ self.B_.T
        return out[0] if z.ndim == 1 else out

    def lift_affine(self, x):
        x = as_vector(x, 'x', self.n_states_in_)
        return self.A_ @ np.append(x, 1.0), self.B_.copy()

    def input_matrix(self, p):
        return self.B_.copy()

    def input_matrices(self, P):
        return np.repeat(self.B_[None], np.atleast_2d(P).shape[0], axis=0)

    def controllability_rank(self, tol=1e-9):
        blocks, M = [], self.B_d
        for _ in range(self.n_states_in_):
            blocks.append(M)
            M = self.A_d @ M
        Ctrb = np.hstack(blocks)
        if not np.any(Ctrb):
            return 0
        return int(np.linalg.matrix_rank(Ctrb, tol=tol * np.abs(Ctrb).max()))


class LpvMpcController:
    """Receding-horizon controller holding the schedule between samples.

    Powers ``C A^k`` are cached once per model, so each sample costs one
    condensed QP assembly, one QP solve and one model forward pass.
    """

    def __init__(self, model, problem, tol=1e-6, max_iter=20000):
        self.model = model
        self.problem = problem
        self.tol = tol
        self.max_iter = max_iter
        C = np.asarray(model.C_, dtype=float)
        if C.shape[0] != problem.n_x:
            raise InputError(
                f'model reads out {C.shape[0]} outputs, problem weights '
                f'{problem.n_x} states')
        if model.n_inputs_in_ != problem.n_u:
            raise InputError(
                f'model has {model.n_inputs_in_} inputs, problem has '
                f'{problem.n_u}')
        T = problem.horizon
        M = np.empty((T, C.shape[0], C.shape[1]))
        M[0] = C
        for k in range(1, T):
            M[k] = M[k - 1] @ model.A_
        self._powers = M
        self.schedule = None
        self._warm = None
        self.u_prev = np.zeros(problem.n_u)

    def reset(self, x0=None):
        self.schedule = None
        self._warm = None
        self.u_prev = np.zeros(self.problem.n_u)
        if x0 is not None:
            z0, _ = self.model.lift_affine(x0)
            self.schedule = SchedulingSequence.constant(
                z0, self.problem.horizon)

    def prediction_matrices(self, x, schedule):
        """``F, G`` with stacked predictions ``Y = F + G u`` (``T n_y``)."""
        pr, model = self.problem, self.model
        T, n_u = pr.horizon, pr.n_u
        if schedule.horizon != T:
            raise InputError(
                f'schedule has {schedule.horizon} entries, horizon is {T}')
        z0, J = model.lift_affine(x)
        Bs = model.input_matrices(schedule.P)
        Bs[0] = J
        M = self._powers
        n_y = M.shape[1]
        F = (M @ z0).reshape(T * n_y)
        G = np.zeros((T, n_y, T, n_u))
        for j in range(T):
            # block (k, j) = C A^(k-1-j) B_j for k = j+1 .. T
            G[j:, :, j, :] = M[:T - j] @ Bs[j]
        return F, G.reshape(T * n_y, T * n_u), z0

    def build_qp(self, x, schedule, t=0):
        pr = self.problem
        T, n_x, n_u = pr.horizon, pr.n_x, pr.n_u
        F, G, _ = self.prediction_matrices(x, schedule)
        x_ref, u_ref = pr.references(t)
        Qs = np.repeat(pr.Q[None], T, axis=0)
        Qs[-1] = Qs[-1] + pr.Q_T
        Qbar = _block_diag(Qs)
        Rbar = _block_diag(np.repeat(pr.R[None], T, axis=0))
        e = F - x_ref.reshape(-1)
        ub = u_ref.reshape(-1)
        GQ = G.T @ Qbar
        P = 2.0 * (GQ @ G + Rbar)
        q = 2.0 * (GQ @ e - Rbar @ ub)
        const = float(e @ Qbar @ e + ub @ Rbar @ ub)
        bounded = np.isfinite(pr.x_min) | np.isfinite(pr.x_max)
        rows = np.tile(bounded, T)
        Gx = G[rows] if np.any(rows) else None
        lo = (np.tile(pr.x_min, T) - F)[rows] if np.any(rows) else None
        hi = (np.tile(pr.x_max, T) - F)[rows] if np.any(rows) else None
        boxed = np.isfinite(pr.u_min).any() or np.isfinite(pr.u_max).any()
        return QuadraticProgram.from_parts(
            P, q,
            np.tile(pr.u_min, T) if boxed else None,
            np.tile(pr.u_max, T) if boxed else None,
            Gx, lo, hi, constant=const)

    def forward(self, x, inputs):
        """Lifted states ``z_1 .. z_T`` of the bilinear model under
        ``inputs``."""
        z0, J = self.model.lift_affine(x)
        U = np.asarray(inputs, dtype=float).reshape(-1, self.problem.n_u)
        Z = np.empty((U.shape[0], z0.size))
        z = z0 + J @ U[0]
        Z[0] = z
        for k in range(1, U.shape[0]):
            z = self.model.step(z, U[k])
            Z[k] = z
        return z0, Z

    def step(self, x, t=0):
        """One control cycle at sample ``t``: returns ``(u, solution)``."""
        pr = self.problem
        x = as_vector(x, 'x', pr.n_x)
        if self.schedule is None:
            self.reset(x)
        qp = self.build_qp(x, self.schedule, t)
        sol = solve_qp(qp, self.tol, self.max_iter, warm_start=self._warm)
        U = np.clip(sol.x.reshape(pr.horizon, pr.n_u), pr.u_min, pr.u_max)
        if sol.converged:
            z0, Z = self.forward(x, U)
            seq = np.vstack([z0[None], Z[:-1]])
            self.schedule = SchedulingSequence(seq).shifted()
            self._warm = (np.vstack([U[1:], U[-1:]]).reshape(-1), None)
            self.u_prev = U[0].copy()
        return U[0].copy(), sol


def _block_diag(blocks):
    T, a, b = blocks.shape
    out = np.zeros((T * a, T * b))
    for k in range(T):
        out[k * a:(k + 1) * a, k * b:(k + 1) * b] = blocks[k]
    return out


def build_qp(model, problem, x0, schedule, t=0):
    """Condensed QP over ``u_0 .. u_{T-1}`` for a frozen schedule."""
    return LpvMpcController(model, problem).build_qp(x0, schedule, t)


def lpv_mpc_step(model, problem, x_measured, schedule_prev=None, t=0):
    """Solve one cycle; returns ``(u_applied, next_schedule, solution)``.

    A new controller is set up on every call; closed-loop simulations should
    reuse an :class:`LpvMpcController` instead.
    """
    ctrl = LpvMpcController(model, problem)
    ctrl.reset(x_measured)
    if schedule_prev is not None:
        ctrl.schedule = schedule_prev
    u, sol = ctrl.step(x_measured, t)
    return u, ctrl.schedule, sol


@dataclass
class ClosedLoopResult:
    """Logged closed-loop run; ``failed`` marks an aborted simulation."""

    t: np.ndarray
    X: np.ndarray
    U: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    solve_time: np.ndarray
    failed: bool = False
    reason: str = ''
    extra: dict = field(default_factory=dict)

    def final_state_norm(self):
        return float(np.max(np.abs(self.X[-1]))) if len(self.X) else np.inf

    def stabilized(self, tol):
        """``True`` when the run finished and ``|x(end)|_inf <= tol``."""
        return (not self.failed and len(self.U) > 0
                and self.final_state_norm() <= tol)

    def to_rows(self):
        """Rows for the closed-loop CSV log."""
        n_x, n_u = self.X.shape[1], self.U.shape[1]
        header = (['time'] + [f'x{i + 1}' for i in range(n_x)]
                  + [f'u{i + 1}' for i in range(n_u)]
                  + ['objective', 'iterations', 'converged'])
        rows = []
        for k in range(len(self.U)):
            rows.append([self.t[k], *self.X[k], *self.U[k],
                         self.objective[k], int(self.iterations[k]),
                         int(self.converged[k])])
        return header, rows


def closed_loop(controller, ode, x0, duration, cfg, problem=None,
                divergence_limit=1e6):
    """Simulate ``ode`` under receding-horizon control for ``duration`` s.

    ``controller`` is an :class:`LpvMpcController`, or a fitted model
    together with ``problem``. A failed QP holds
    the previous input; two failures in a row, or a diverging plant, stop
    the run with ``failed=True``.
    """
    if not isinstance(controller, LpvMpcController):
        if problem is None:
            raise InputError('a bare model needs an MpcProblem')
        controller = LpvMpcController(controller, problem)
    if not isinstance(cfg, SimConfig):
        cfg = SimConfig(float(cfg))
    x = as_vector(x0, 'x0', ode.n_x).copy()
    steps = int(round(float(duration) / cfg.dt))
    if steps < 0:
        raise InputError(f'duration must be non-negative, got {duration}')
    controller.reset(x)
    X, Us, objs, iters, conv, times = [x.copy()], [], [], [], [], []
    failures = 0
    failed, reason = False, ''
    for k in range(steps):
        tic = time.perf_counter()
        u, sol = controller.step(x, k)
        times.append(time.perf_counter() - tic)
        if sol.converged:
            failures = 0
        else:
            failures += 1
            u = controller.u_prev.copy()
            log.warning('QP failed at step %d; holding previous input', k)
        Us.append(u)
        objs.append(sol.objective)
        iters.append(sol.iterations)
        conv.append(sol.converged)
        if failures >= 2:
            failed, reason = True, f'two consecutive QP failures at step {k}'
            break
        try:
            x = simulate(ode, x, u[None, :], cfg)[-1]
        except SimulationError as exc:
            failed, reason = True, f'plant diverged at step {k + 1}: {exc}'
            break
        if np.max(np.abs(x)) > divergence_limit:
            failed, reason = True, f'plant diverged at step {k + 1}'
            break
        X.append(x.copy())
    n = len(Us)
    return ClosedLoopResult(
        t=np.arange(len(X)) * cfg.dt,
        X=np.array(X),
        U=np.array(Us).reshape(n, ode.n_u),
        objective=np.array(objs),
        iterations=np.array(iters, dtype=int),
        converged=np.array(conv, dtype=bool),
        solve_time=np.array(times),
        failed=failed, reason=reason)


def jacobians(ode, x, u, eps=1e-6):
    """Central finite-difference Jacobians of the vector field."""
    x = as_vector(x, 'x', ode.n_x)
    u = as_vector(u, 'u', ode.n_u)
    Ac = np.empty((ode.n_x, ode.n_x))
    Bc = np.empty((ode.n_x, ode.n_u))
    for i in range(ode.n_x):
        d = np.zeros(ode.n_x)
        d[i] = eps
        Ac[:, i] = (ode.vector_field(x + d, u) - ode.vector_field(x - d, u)) \
            / (2 * eps)
    for i in range(ode.n_u):
        d = np.zeros(ode.n_u)
        d[i] = eps
        Bc[:, i] = (ode.vector_field(x, u + d) - ode.vector_field(x, u - d)) \
            / (2 * eps)
    return Ac, Bc


def discretize_rk4(Ac, Bc, h, f0=None):
    """One RK4 step of ``x' = Ac x + Bc u + f0`` with ``u`` held constant.

    Returns ``(A_d, B_d, c)``; exactly what :func:`rk4_step` produces on the
    linear system.
    """
    n = Ac.shape[0]
    hA = h * Ac
    I = np.eye(n)
    A_d = I + hA + hA @ hA / 2 + hA @ hA @ hA / 6 + hA @ hA @ hA @ hA / 24
    S = h * (I + hA / 2 + hA @ hA / 6 + hA @ hA @ hA / 24)
    c = S @ f0 if f0 is not None else np.zeros(n)
    if not np.all(np.isfinite(A_d)) or np.linalg.cond(A_d) > 1e12:
        raise NumericalError('RK4 discretization is singular')
    return A_d, S @ Bc, c


def lmpc_baseline(ode, linearization_point, problem, dt, u_lin=None):
    """Linear MPC on the RK4-discretized Jacobian linearization.

    The returned controller exposes ``model.controllability_rank()``; a
    rank below ``n_x`` means the linearization cannot steer every state.
    """
    x_lin = as_vector(linearization_point, 'linearization_point', ode.n_x)
    u_lin = np.zeros(ode.n_u) if u_lin is None else as_vector(
        u_lin, 'u_lin', ode.n_u)
    Ac, Bc = jacobians(ode, x_lin, u_lin)
    f0 = ode.vector_field(x_lin, u_lin) - Ac @ x_lin - Bc @ u_lin
    A_d, B_d, c = discretize_rk4(Ac, Bc, dt, f0)
    model = LinearStateSpace(A_d, B_d, c)
    rank = model.controllability_rank()
    if rank < ode.n_x:
        log.warning('linearization at %s is uncontrollable (rank %d < %d)',
                    x_lin, rank, ode.n_x)
    return LpvMpcController(model, problem)
