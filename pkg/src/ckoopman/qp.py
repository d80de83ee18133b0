"""Dense convex QP solver used by the MPC layer.

Problems have the form::

    minimize    0.5 x^T P x + q^T x
    subject to  l <= A x <= u

with ``P`` symmetric PSD. Box constraints on ``x`` are ordinary rows of
``A``; ``l_i = u_i`` expresses an equality. The solver is an ADMM operator
splitting (the scheme popularized by OSQP) on a Ruiz-equilibrated copy of
the problem, with step-size adaptation and an active-set polishing step
that usually lands on the exact KKT point.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._validation import as_matrix, as_vector
from .exceptions import InputError

log = logging.getLogger(__name__)

__all__ = ['QuadraticProgram', 'QpSolution', 'solve_qp', 'kkt_residuals']

INF = np.inf
SIGMA = 1e-6
ALPHA = 1.6
RHO0 = 0.1
RHO_EQ_SCALE = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6
RUIZ_ITERS = 15
CHECK_EVERY = 10
ADAPT_EVERY = 50
POLISH_BELOW = 1e-3


@dataclass(frozen=True)
class QuadraticProgram:
    """``min 0.5 x'Px + q'x  s.t.  l <= Ax <= u`` plus a constant offset."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    constant: float = 0.0

    def __post_init__(self):
        P = as_matrix(self.P, 'P')
        n = P.shape[0]
        if P.shape != (n, n):
            raise InputError(f'P must be square, got {P.shape}')
        q = as_vector(self.q, 'q', n)
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = A.shape[0]
        lo = np.asarray(self.l, dtype=float).reshape(m)
        hi = np.asarray(self.u, dtype=float).reshape(m)
        if np.any(lo > hi):
            raise InputError('constraint bounds need l <= u')
        for name, v in (('P', P), ('q', q), ('A', A)):
            if not np.all(np.isfinite(v)):
                raise InputError(f'{name} has non-finite entries')
        object.__setattr__(self, 'P', 0.5 * (P + P.T))
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'l', lo)
        object.__setattr__(self, 'u', hi)

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def m(self):
        return self.A.shape[0]

    @classmethod
    def from_parts(cls, P, q, lb=None, ub=None, G=None, g_lo=None,
                   g_hi=None, constant=0.0):
        """Assemble from variable bounds ``lb <= x <= ub`` and rows
        ``g_lo <= G x <= g_hi``; missing bounds are infinite."""
        n = np.shape(P)[0]
        rows, lo, hi = [], [], []
        if lb is not None or ub is not None:
            rows.append(np.eye(n))
            lo.append(np.full(n, -INF) if lb is None
                      else np.broadcast_to(lb, (n,)).astype(float))
            hi.append(np.full(n, INF) if ub is None
                      else np.broadcast_to(ub, (n,)).astype(float))
        if G is not None:
            G = np.asarray(G, dtype=float).reshape(-1, n)
            k = G.shape[0]
            rows.append(G)
            lo.append(np.full(k, -INF) if g_lo is None
                      else np.broadcast_to(g_lo, (k,)).astype(float))
            hi.append(np.full(k, INF) if g_hi is None
                      else np.broadcast_to(g_hi, (k,)).astype(float))
        if rows:
            A, l, u = np.vstack(rows), np.concatenate(lo), np.concatenate(hi)
        else:
            A, l, u = np.zeros((0, n)), np.zeros(0), np.zeros(0)
        return cls(P, q, A, l, u, constant)

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x + self.constant)


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool
    polished: bool = False
    status: str = 'solved'
    rho: float = field(default=RHO0, repr=False)


def kkt_residuals(qp, x, y):
    """Primal infeasibility, stationarity and complementarity (inf-norms).

    Multipliers follow the sign convention ``y_i > 0`` for an active upper
    bound and ``y_i < 0`` for an active lower bound.
    """
    Ax = qp.A @ x
    prim = np.max(np.maximum(Ax - qp.u, 0.0), initial=0.0)
    prim = max(prim, np.max(np.maximum(qp.l - Ax, 0.0), initial=0.0))
    dual = np.max(np.abs(qp.P @ x + qp.q + qp.A.T @ y), initial=0.0)
    with np.errstate(invalid='ignore'):
        up = np.where(np.isfinite(qp.u), qp.u - Ax, INF)
        lo = np.where(np.isfinite(qp.l), Ax - qp.l, INF)
    comp_u = np.minimum(np.maximum(y, 0.0), np.abs(up))
    comp_l = np.minimum(np.maximum(-y, 0.0), np.abs(lo))
    comp = np.max(np.maximum(comp_u, comp_l), initial=0.0)
    return float(prim), float(dual), float(comp)


class _Scaled:
    """Ruiz-equilibrated problem data and the maps back to the original."""

    def __init__(self, qp):
        P, q, A = qp.P.copy(), qp.q.copy(), qp.A.copy()
        n, m = qp.n, qp.m
        D, E = np.ones(n), np.ones(m)
        for _ in range(RUIZ_ITERS):
            col = np.max(np.abs(P), axis=0, initial=0.0)
            if m:
                col = np.maximum(col, np.max(np.abs(A), axis=0))
                row = np.max(np.abs(A), axis=1)
            else:
                row = np.zeros(0)
            d = 1.0 / np.sqrt(np.where(col > 1e-8, col, 1.0))
            e = 1.0 / np.sqrt(np.where(row > 1e-8, row, 1.0))
            P = d[:, None] * P * d[None, :]
            A = e[:, None] * A * d[None, :]
            q = d * q
            D, E = D * d, E * e
        scale = np.mean(np.max(np.abs(P), axis=0, initial=0.0)) if n else 1.0
        scale = max(scale, np.max(np.abs(q), initial=0.0))
        c = 1.0 / scale if scale > 1e-8 else 1.0
        c = min(c, 1e4)
        self.P, self.q, self.A = c * P, c * q, A
        self.l, self.u = E * qp.l, E * qp.u
        self.D, self.E, self.c = D, E, c


def solve_qp(qp, tol=1e-6, max_iter=20000, warm_start=None, polish=True):
    """Solve a :class:`QuadraticProgram` to absolute KKT tolerance ``tol``.

    Convergence requires the unscaled primal and dual residuals to fall
    below ``tol``. When ``max_iter`` is reached the best iterate is returned
    with ``converged=False``.
    """
    if tol <= 0:
        raise InputError(f'tol must be positive, got {tol}')
    n, m = qp.n, qp.m
    s = _Scaled(qp)
    eq = np.isclose(s.l, s.u) & np.isfinite(s.l)
    rho = RHO0

    def rho_vec(r):
        v = np.full(m, r)
        v[eq] *= RHO_EQ_SCALE
        v[~np.isfinite(s.l) & ~np.isfinite(s.u)] = RHO_MIN
        return v

    def factor(r):
        K = s.P + SIGMA * np.eye(n) + s.A.T @ (rho_vec(r)[:, None] * s.A)
        return linalg.cho_factor(K, lower=True, check_finite=False)

    x = np.zeros(n)
    y = np.zeros(m)
    if warm_start is not None:
        x0, y0 = warm_start
        x = np.asarray(x0, dtype=float) / s.D
        if y0 is not None and np.size(y0) == m:
            y = np.asarray(y0, dtype=float) * s.c / s.E
    z = np.clip(s.A @ x, s.l, s.u)
    rv = rho_vec(rho)
    L = factor(rho)

    best = None
    it = 0
    status = 'max_iter'
    for it in range(1, max_iter + 1):
        rhs = SIGMA * x - s.q + s.A.T @ (rv * z - y)
        x_t = linalg.cho_solve(L, rhs, check_finite=False)
        z_t = s.A @ x_t
        x = ALPHA * x_t + (1.0 - ALPHA) * x
        z_relax = ALPHA * z_t + (1.0 - ALPHA) * z
        z = np.clip(z_relax + y / rv, s.l, s.u)
        y = y + rv * (z_relax - z)

        if it % CHECK_EVERY and it != max_iter:
            continue
        xs, ys = s.D * x, s.E * y / s.c
        Ax = qp.A @ xs
        zs = z / s.E if m else z
        r_prim = float(np.max(np.abs(Ax - zs), initial=0.0))
        r_dual = float(np.max(np.abs(qp.P @ xs + qp.q + qp.A.T @ ys),
                              initial=0.0))
        if best is None or max(r_prim, r_dual) < max(best[2], best[3]):
            best = (xs.copy(), ys.copy(), r_prim, r_dual)
        if polish and max(r_prim, r_dual) < POLISH_BELOW:
            pol = _polish(qp, xs, ys, Ax, tol)
            if pol is not None:
                return _finish(qp, pol[0], pol[1], it, True, True, rho)
        if r_prim <= tol and r_dual <= tol:
            status = 'solved'
            break
        if it % ADAPT_EVERY == 0:
            new = _adapted_rho(s, x, y, z, rho)
            if new is not None:
                rho = new
                rv = rho_vec(rho)
                L = factor(rho)

    xs, ys, r_prim, r_dual = best
    if status != 'solved' and polish:
        pol = _polish(qp, xs, ys, qp.A @ xs, tol)
        if pol is not None:
            return _finish(qp, pol[0], pol[1], it, True, True, rho)
    if status == 'solved':
        xs, ys = s.D * x, s.E * y / s.c
    sol = _finish(qp, xs, ys, it, status == 'solved', False, rho)
    if not sol.converged:
        log.warning('QP did not converge in %d iterations (primal %.2e, '
                    'dual %.2e)', it, sol.primal_residual, sol.dual_residual)
    return sol


def _finish(qp, x, y, it, converged, polished, rho):
    prim, dual, _ = kkt_residuals(qp, x, y)
    return QpSolution(x=x, y=y, objective=qp.objective(x),
                      primal_residual=prim, dual_residual=dual,
                      iterations=it, converged=converged, polished=polished,
                      status='solved' if converged else 'max_iter', rho=rho)


def _adapted_rho(s, x, y, z, rho):
    Ax = s.A @ x
    Px = s.P @ x
    ATy = s.A.T @ y
    prim = np.max(np.abs(Ax - z), initial=0.0) / max(
        np.max(np.abs(Ax), initial=0.0), np.max(np.abs(z), initial=0.0),
        1e-10)
    dual = np.max(np.abs(Px + s.q + ATy), initial=0.0) / max(
        np.max(np.abs(Px), initial=0.0), np.max(np.abs(ATy), initial=0.0),
        np.max(np.abs(s.q), initial=0.0), 1e-10)
    if dual <= 0.0 or prim <= 0.0:
        return None
    new = float(np.clip(rho * np.sqrt(prim / dual), RHO_MIN, RHO_MAX))
    if new > 5.0 * rho or new < 0.2 * rho:
        return new
    return None


def _polish(qp, x, y, Ax, tol):
    """Solve the equality-constrained KKT system on the guessed active set.

    Returns ``(x, y)`` if the candidate satisfies every KKT condition to
    ``tol``, otherwise ``None``.
    """
    n = qp.n
    gap_l = Ax - qp.l
    gap_u = qp.u - Ax
    lower = np.isfinite(qp.l) & (gap_l < -y)
    upper = np.isfinite(qp.u) & (gap_u < y) & ~lower
    act = np.flatnonzero(lower | upper)
    b = np.where(lower, qp.l, qp.u)[act]
    Aa = qp.A[act]
    k = act.size
    K = np.zeros((n + k, n + k))
    K[:n, :n] = qp.P
    K[:n, n:] = Aa.T
    K[n:, :n] = Aa
    rhs = np.concatenate([-qp.q, b])
    try:
        sol = linalg.solve(K, rhs, check_finite=False)
    except (linalg.LinAlgError, ValueError):
        sol = linalg.lstsq(K, rhs, check_finite=False)[0]
    # one step of iterative refinement
    sol = sol + linalg.lstsq(K, rhs - K @ sol, check_finite=False)[0]
    xp = sol[:n]
    yp = np.zeros(qp.m)
    yp[act] = sol[n:]
    eq = qp.l[act] == qp.u[act]
    sign_ok = np.all(yp[act][lower[act] & ~eq] <= tol) and np.all(
        yp[act][upper[act] & ~eq] >= -tol)
    if not sign_ok or not np.all(np.isfinite(xp)):
        return None
    prim, dual, comp = kkt_residuals(qp, xp, yp)
    if max(prim, dual, comp) <= tol:
        return xp, yp
    return None
