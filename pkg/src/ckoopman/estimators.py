"""Kernel control Koopman estimators with a scikit-learn interface.

All estimators regress successor states on ``[state | input]`` rows::

    Z = np.hstack([X, U])          # shape (n, n_x + n_u)
    est = CKOR(mu=0.25, gamma=1e-7, n_inputs=1).fit(Z, X_plus)
    est.predict(Z)                 # one-step prediction of the observable
    est.rollout(x0, inputs)        # multi-step prediction

The fitted model is a finite-dimensional lifted system

    z_1 = lift(x_0, u_0),   z_{k+1} = step(z_k, u_k),   y_k = C z_k

where, for the kernel estimators, ``lift(x, u) = k_X(x) * (1 + k_U(u))``
evaluated at the anchors and ``step(z, u) = (1 + k_U(u)) * (A z)``.
"""

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import numerics
from ._validation import as_matrix, check_positive
from .data import InducingSet, SnapshotDataset, subsample_uniform
from .exceptions import InputError, UnsupportedConfigurationError
from .kernels import CompositeControlKernel, KernelSpec, composite_gram, gram

__all__ = [
    'CKOR', 'NystromCKOR', 'BilinearEDMDc', 'ReducedModel', 'InputScaled',
    'fit_ckor', 'fit_ny_ckor', 'fit_bedmdc', 'pod_reduce',
]


class LiftedModelMixin:
    """Shared prediction interface of every fitted lifted model.

    Subclasses provide ``lift``, ``step``, ``C_`` and, for bilinear models,
    ``input_matrix``.
    """

    _estimator_type = 'regressor'

    @property
    def n_lifted_(self):
        return self.C_.shape[1]

    def _split(self, Z):
        Z = as_matrix(Z, 'X', n_cols=self.n_states_in_ + self.n_inputs_in_)
        return Z[:, :self.n_states_in_], Z[:, self.n_states_in_:]

    def predict(self, X):
        """One-step prediction of the observable from ``[x | u]`` rows."""
        check_is_fitted(self)
        Xs, U = self._split(X)
        return self.lift(Xs, U) @ self.C_.T

    def rollout(self, x0, inputs):
        from .predictor import rollout
        return rollout(self, x0, inputs)

    def lift_affine(self, x):
        """Split ``lift(x, u) = z0 + J u`` for one state ``x``.

        Valid for the bilinear models, whose lifting is affine in ``u``.
        Returns ``z0`` of shape ``(N,)`` and ``J`` of shape ``(N, n_u)``.
        """
        n_u = self.n_inputs_in_
        x = np.asarray(x, dtype=float).reshape(1, -1)
        U = np.vstack([np.zeros((1, n_u)), np.eye(n_u)])
        Z = self.lift(np.repeat(x, n_u + 1, axis=0), U)
        return Z[0], (Z[1:] - Z[0]).T

    def input_matrices(self, P):
        """Stack ``input_matrix(p)`` over the rows of ``P``: ``(T, N, n_u)``."""
        return np.stack([self.input_matrix(p) for p in np.atleast_2d(P)])

    def _check_xu(self, X, U):
        X = as_matrix(X, 'X', n_cols=self.n_states_in_)
        U = as_matrix(U, 'U', n_cols=self.n_inputs_in_)
        if X.shape[0] != U.shape[0]:
            raise InputError(
                f'X has {X.shape[0]} rows but U has {U.shape[0]}')
        return X, U


def _select_observable(observable, X_plus):
    if observable is None:
        return X_plus
    idx = [int(i) for i in observable]
    if not idx or min(idx) < 0 or max(idx) >= X_plus.shape[1]:
        raise InputError(f'observable indices {idx} out of range')
    return X_plus[:, idx]


class _KernelModel(LiftedModelMixin, RegressorMixin, BaseEstimator):
    """Common parameters and lifting of the cKOR family."""

    def __init__(self, mu=1.0, gamma=1e-9, state_kernel='gaussian',
                 control_kernel='linear', control_mu=None, observable=None,
                 n_inputs=1):
        self.mu = mu
        self.gamma = gamma
        self.state_kernel = state_kernel
        self.control_kernel = control_kernel
        self.control_mu = control_mu
        self.observable = observable
        self.n_inputs = n_inputs

    def _kernels(self):
        kx = KernelSpec.coerce(self.state_kernel, self.mu)
        ku = KernelSpec.coerce(self.control_kernel, self.control_mu)
        return kx, ku

    def _check_fit_data(self, X, y):
        X = as_matrix(X, 'X')
        n_u = int(self.n_inputs)
        if not 1 <= n_u < X.shape[1]:
            raise InputError(
                f'n_inputs={n_u} incompatible with {X.shape[1]} columns')
        n_x = X.shape[1] - n_u
        X_plus = as_matrix(y, 'y', n_cols=n_x)
        if X_plus.shape[0] != X.shape[0]:
            raise InputError('X and y have different numbers of rows')
        check_positive(self.gamma, 'gamma')
        self.n_states_in_ = n_x
        self.n_inputs_in_ = n_u
        self.n_features_in_ = X.shape[1]
        self.state_kernel_, self.control_kernel_ = self._kernels()
        return X[:, :n_x], X[:, n_x:], X_plus

    def fit_dataset(self, ds, **fit_params):
        """Fit on a :class:`~ckoopman.data.SnapshotDataset`."""
        self.set_params(n_inputs=ds.n_u)
        return self.fit(np.hstack([ds.X, ds.U]), ds.X_plus, **fit_params)

    @property
    def composite_kernel_(self):
        return CompositeControlKernel(self.state_kernel_, self.control_kernel_)

    def control_vector(self, U):
        """``k_U(u)`` evaluated against the anchor inputs."""
        U = as_matrix(U, 'U', n_cols=self.n_inputs_in_)
        return gram(self.control_kernel_, U, self.U_anchor_)

    def lift(self, X, U):
        """Lifted states ``k_X(x) * (1 + k_U(u))``, one row per query."""
        check_is_fitted(self)
        X, U = self._check_xu(X, U)
        return (gram(self.state_kernel_, X, self.X_anchor_)
                * (1.0 + gram(self.control_kernel_, U, self.U_anchor_)))

    def step(self, z, u):
        """``(A + diag(k_U(u)) A) z`` for one or a batch of lifted states."""
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        v = self.control_vector(u.reshape(-1, self.n_inputs_in_))
        Az = z @ self.A_.T
        return (1.0 + v.reshape(Az.shape)) * Az

    def bilinear_channels(self):
        """Control channels ``B_i = diag(U e_i) A`` (linear ``k_U`` only)."""
        self._require_linear_control()
        return [self.U_anchor_[:, i:i + 1] * self.A_
                for i in range(self.n_inputs_in_)]

    def input_matrix(self, p):
        """``B(p) = [B_1 p | ... | B_nu p]`` for a lifted schedule point."""
        self._require_linear_control()
        return (self.A_ @ np.asarray(p, dtype=float))[:, None] * self.U_anchor_

    def input_matrices(self, P):
        self._require_linear_control()
        AP = np.atleast_2d(P) @ self.A_.T
        return AP[:, :, None] * self.U_anchor_[None, :, :]

    def _require_linear_control(self):
        check_is_fitted(self)
        if not self.control_kernel_.is_linear:
            raise UnsupportedConfigurationError(
                'explicit bilinear channels need a linear control kernel')

    def anchor_gram(self):
        """Self-Gram of the lifting anchors (``K_Z`` or its sketch)."""
        check_is_fitted(self)
        return composite_gram(self.composite_kernel_, self.X_anchor_,
                              self.U_anchor_)


class CKOR(_KernelModel):
    """Full control Koopman operator regression.

    Parameters
    ----------
    mu : float
        Bandwidth of the Gaussian state kernel ``exp(-||x - x'||^2 / mu)``.
    gamma : float
        Ridge parameter; the regularized Gram is ``K_Z + n * gamma * I``.
    state_kernel, control_kernel : str or KernelSpec
        Kernel families. ``control_mu`` is the bandwidth of a Gaussian
        control kernel.
    observable : sequence of int, optional
        State coordinates forming the readout. ``None`` reads out the full
        state.
    n_inputs : int
        Number of trailing input columns in the regressor matrix.

    Attributes
    ----------
    A_ : ndarray of shape (n, n)
        Lifted transition matrix.
    C_ : ndarray of shape (n_y, n)
        Readout matrix.
    X_anchor_, U_anchor_, Xp_anchor_ : ndarray
        Training states, inputs and successors used as lifting anchors.
    """

    flavor = 'full'

    def fit(self, X, y):
        Xs, U, X_plus = self._check_fit_data(X, y)
        n = Xs.shape[0]
        K_Z = composite_gram(self.composite_kernel_, Xs, U)
        K_plus = gram(self.state_kernel_, X_plus, Xs)
        Y_plus = _select_observable(self.observable, X_plus)
        L, self.jitter_ = numerics.cho_factor_jittered(K_Z, n * self.gamma)
        sol = linalg.cho_solve((L, True), np.hstack([K_plus, Y_plus]),
                               check_finite=False)
        self.A_ = np.ascontiguousarray(sol[:, :n].T)
        self.C_ = np.ascontiguousarray(sol[:, n:].T)
        self.X_anchor_, self.U_anchor_, self.Xp_anchor_ = Xs, U, X_plus
        self.n_samples_ = n
        self.cholesky_ = L
        return self

    def readout_for(self, Y_anchor):
        """Readout ``C`` for another observable sampled at the successors."""
        check_is_fitted(self)
        Y = as_matrix(Y_anchor, 'Y_anchor')
        if Y.shape[0] != self.n_samples_:
            raise InputError(
                f'observable matrix needs {self.n_samples_} rows')
        return linalg.cho_solve((self.cholesky_, True), Y,
                                check_finite=False).T


class NystromCKOR(_KernelModel):
    """Sketched cKOR on ``n_inducing`` uniformly sampled inducing points.

    Anchors, ``A_`` and ``C_`` live on the ``m`` inducing points; fitting
    costs ``O(m^3 + m^2 n)`` independently of the input dimension. Pass
    ``inducing=`` to :meth:`fit` to reuse a fixed inducing set.
    """

    flavor = 'nystrom'

    def __init__(self, mu=1.0, gamma=1e-9, n_inducing=200, random_state=0,
                 state_kernel='gaussian', control_kernel='linear',
                 control_mu=None, observable=None, n_inputs=1,
                 pinv_rtol=numerics.DEFAULT_PINV_RTOL):
        super().__init__(mu=mu, gamma=gamma, state_kernel=state_kernel,
                         control_kernel=control_kernel, control_mu=control_mu,
                         observable=observable, n_inputs=n_inputs)
        self.n_inducing = n_inducing
        self.random_state = random_state
        self.pinv_rtol = pinv_rtol

    def fit(self, X, y, inducing=None):
        Xs, U, X_plus = self._check_fit_data(X, y)
        n = Xs.shape[0]
        ds = SnapshotDataset(Xs, U, X_plus)
        if inducing is None:
            inducing = subsample_uniform(ds, min(self.n_inducing, n),
                                         self.random_state)
        elif not isinstance(inducing, InducingSet):
            inducing = InducingSet.from_indices(ds, inducing)
        kx, ck = self.state_kernel_, self.composite_kernel_
        Xt, Ut, Xpt = inducing.X, inducing.U, inducing.X_plus
        # H = K_ZZ~^T K_ZZ~ + n gamma K_Z~ has the squared condition number
        # of the Grams, so H^+ is applied in the whitened coordinates of
        # K_Z~ = T^+ T^+^T instead: H^+ = T (B^T B + n gamma I)^-1 T^T with
        # B = K_ZZ~ T. The same factorization gives K_~+^+ = S S^T.
        T = numerics.psd_pinv_factor(composite_gram(ck, Xt, Ut),
                                     self.pinv_rtol)
        B = composite_gram(ck, Xs, U, Xt, Ut) @ T
        S = numerics.psd_pinv_factor(gram(kx, Xpt), self.pinv_rtol)
        M = gram(kx, X_plus, Xpt) @ S
        G = B.T @ B + n * self.gamma * np.eye(B.shape[1])
        core = linalg.solve(G, B.T @ M, assume_a='pos', check_finite=False)
        W = T @ core @ S.T
        # successor-to-anchor cross Gram, k_X(x~+_i, x~_j)
        K_tp_t = gram(kx, Xpt, Xt)
        Y_plus = _select_observable(self.observable, Xpt)
        self.A_ = np.ascontiguousarray((W @ K_tp_t).T)
        self.C_ = np.ascontiguousarray((W @ Y_plus).T)
        self.W_ = W
        self.X_anchor_, self.U_anchor_, self.Xp_anchor_ = Xt, Ut, Xpt
        self.inducing_indices_ = np.asarray(inducing.indices)
        self.n_samples_ = n
        return self

    def readout_for(self, Y_anchor):
        check_is_fitted(self)
        Y = as_matrix(Y_anchor, 'Y_anchor')
        if Y.shape[0] != self.W_.shape[1]:
            raise InputError(
                f'observable matrix needs {self.W_.shape[1]} rows')
        return (self.W_ @ Y).T


class BilinearEDMDc(LiftedModelMixin, RegressorMixin, BaseEstimator):
    """Bilinear EDMD with control over a Gaussian kernel dictionary.

    The dictionary ``psi(x) = [k_X(x, c_1), ..., k_X(x, c_m)]`` uses the
    states of ``n_centers`` sampled rows (or the ``centers=`` passed to
    :meth:`fit`). Successor features are regressed on the explicit tensor
    product ``[1; u] (x) psi(x)``, giving ``W_ = [A | B_1 | ... | B_nu]``.
    """

    flavor = 'bedmdc'

    def __init__(self, mu=1.0, gamma=1e-9, n_centers=200, random_state=0,
                 state_kernel='gaussian', observable=None, n_inputs=1):
        self.mu = mu
        self.gamma = gamma
        self.n_centers = n_centers
        self.random_state = random_state
        self.state_kernel = state_kernel
        self.observable = observable
        self.n_inputs = n_inputs

    _check_fit_data = _KernelModel._check_fit_data
    fit_dataset = _KernelModel.fit_dataset

    def _kernels(self):
        return KernelSpec.coerce(self.state_kernel, self.mu), None

    def fit(self, X, y, centers=None):
        Xs, U, X_plus = self._check_fit_data(X, y)
        n = Xs.shape[0]
        ds = SnapshotDataset(Xs, U, X_plus)
        if centers is None:
            centers = subsample_uniform(ds, min(self.n_centers, n),
                                        self.random_state)
        elif not isinstance(centers, InducingSet):
            centers = InducingSet.from_indices(ds, centers)
        self.centers_ = centers.X
        self.center_indices_ = np.asarray(centers.indices)
        m = self.centers_.shape[0]
        Psi = gram(self.state_kernel_, Xs, self.centers_)
        Psi_plus = gram(self.state_kernel_, X_plus, self.centers_)
        Phi = self._regressors(Psi, U)
        lam = n * self.gamma
        W = numerics.ridge_solve(Phi.T @ Phi, Phi.T @ Psi_plus, lam).T
        Y_plus = _select_observable(self.observable, X_plus)
        C = numerics.ridge_solve(Psi_plus.T @ Psi_plus, Psi_plus.T @ Y_plus,
                                 lam).T
        self.W_ = np.ascontiguousarray(W)
        self.C_ = np.ascontiguousarray(C)
        self.n_z_ = m
        self.n_samples_ = n
        return self

    @staticmethod
    def _regressors(Psi, U):
        # rows kron([1; u], psi): blocks [psi, u_1 psi, ..., u_nu psi]
        return np.hstack([Psi] + [U[:, i:i + 1] * Psi
                                  for i in range(U.shape[1])])

    @property
    def A_(self):
        return self.W_[:, :self.n_z_]

    def bilinear_channels(self):
        m = self.n_z_
        return [self.W_[:, (i + 1) * m:(i + 2) * m]
                for i in range(self.n_inputs_in_)]

    def input_matrix(self, p):
        p = np.asarray(p, dtype=float)
        return np.stack([B @ p for B in self.bilinear_channels()], axis=-1)

    def features(self, X):
        X = as_matrix(X, 'X', n_cols=self.n_states_in_)
        return gram(self.state_kernel_, X, self.centers_)

    def lift(self, X, U):
        check_is_fitted(self)
        X, U = self._check_xu(X, U)
        return self._regressors(self.features(X), U) @ self.W_.T

    def step(self, z, u):
        z = np.asarray(z, dtype=float)
        Z = np.atleast_2d(z)
        U = np.asarray(u, dtype=float).reshape(Z.shape[0], -1)
        out = self._regressors(Z, U) @ self.W_.T
        return out[0] if z.ndim == 1 else out


class ReducedModel(LiftedModelMixin, BaseEstimator):
    """POD-projected bilinear model of a fitted cKOR or Ny-cKOR estimator.

    The anchor Gram is truncated to ``V_r diag(sigma_r) V_r^T`` with ``r``
    chosen by the energy threshold ``tau`` (percent) or fixed by ``rank``.
    Calling :meth:`fit` fits a clone of ``estimator`` first; use
    :func:`pod_reduce` to reduce an already fitted model.
    """

    flavor = 'reduced'

    def __init__(self, estimator=None, tau=99.99, rank=None):
        self.estimator = estimator
        self.tau = tau
        self.rank = rank

    def fit(self, X, y, **fit_params):
        from sklearn.base import clone
        parent = clone(self.estimator).fit(X, y, **fit_params)
        return self._reduce(parent)

    def fit_dataset(self, ds, **fit_params):
        from sklearn.base import clone
        parent = clone(self.estimator).fit_dataset(ds, **fit_params)
        return self._reduce(parent)

    def _reduce(self, parent):
        if not isinstance(parent, _KernelModel):
            raise UnsupportedConfigurationError(
                'POD reduction applies to cKOR and Ny-cKOR models')
        parent._require_linear_control()
        if self.tau is not None and self.rank is None:
            tau = float(self.tau)
            if not 0.0 < tau <= 100.0:
                raise InputError(f'tau must lie in (0, 100], got {self.tau}')
        svd = numerics.truncated_svd(
            parent.anchor_gram(), tau=None if self.rank else self.tau,
            rank=self.rank)
        V = svd.V_r
        self.parent_ = parent
        self.V_r_ = V
        self.sigma_r_ = svd.sigma_r
        self.energy_fraction_ = svd.energy_fraction
        self.A_ = V.T @ parent.A_ @ V
        self.B_ = [V.T @ B @ V for B in parent.bilinear_channels()]
        self.C_ = parent.C_ @ V
        self.n_states_in_ = parent.n_states_in_
        self.n_inputs_in_ = parent.n_inputs_in_
        self.n_features_in_ = parent.n_features_in_
        return self

    @property
    def rank_(self):
        return self.V_r_.shape[1]

    def lift(self, X, U):
        check_is_fitted(self)
        return self.parent_.lift(X, U) @ self.V_r_

    def step(self, z, u):
        z = np.asarray(z, dtype=float)
        Z = np.atleast_2d(z)
        U = np.asarray(u, dtype=float).reshape(Z.shape[0], self.n_inputs_in_)
        out = Z @ self.A_.T
        for i, B in enumerate(self.B_):
            out += U[:, i:i + 1] * (Z @ B.T)
        return out[0] if z.ndim == 1 else out

    def bilinear_channels(self):
        check_is_fitted(self)
        return list(self.B_)

    def input_matrix(self, p):
        p = np.asarray(p, dtype=float)
        return np.stack([B @ p for B in self.B_], axis=-1)

    def readout_for(self, Y_anchor):
        return self.parent_.readout_for(Y_anchor) @ self.V_r_

    def __sklearn_is_fitted__(self):
        return hasattr(self, 'A_')


class InputScaled(LiftedModelMixin, BaseEstimator):
    """Fit and run ``estimator`` on inputs divided by ``scale``.

    With a linear control kernel, large inputs multiply the lifted state by
    ``1 + u . u_anchor`` at every step; shrinking the inputs keeps those
    factors near one. Callers keep working in physical input units.
    """

    def __init__(self, estimator=None, scale=1.0):
        self.estimator = estimator
        self.scale = scale

    def _scale(self, n_u):
        s = np.broadcast_to(np.asarray(self.scale, dtype=float), (n_u,))
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise InputError(f'scale must be positive, got {self.scale!r}')
        return s.copy()

    def fit(self, X, y, **fit_params):
        from sklearn.base import clone
        X = as_matrix(X, 'X')
        n_u = int(self.estimator.get_params().get('n_inputs', 1))
        s = self._scale(n_u)
        Xs = X.copy()
        Xs[:, X.shape[1] - n_u:] /= s
        return self._adopt(clone(self.estimator).fit(Xs, y, **fit_params), s)

    def fit_dataset(self, ds, **fit_params):
        from sklearn.base import clone
        s = self._scale(ds.n_u)
        scaled = SnapshotDataset(ds.X, ds.U / s, ds.X_plus, ds.segments)
        parent = clone(self.estimator).fit_dataset(scaled, **fit_params)
        return self._adopt(parent, s)

    def _adopt(self, parent, s):
        self.model_ = parent
        self.scale_ = s
        self.A_ = parent.A_
        self.C_ = parent.C_
        self.n_states_in_ = parent.n_states_in_
        self.n_inputs_in_ = parent.n_inputs_in_
        self.n_features_in_ = parent.n_features_in_
        return self

    def lift(self, X, U):
        check_is_fitted(self)
        return self.model_.lift(X, np.asarray(U, dtype=float) / self.scale_)

    def step(self, z, u):
        return self.model_.step(z, np.asarray(u, dtype=float) / self.scale_)

    def bilinear_channels(self):
        return [B / s for B, s in zip(self.model_.bilinear_channels(),
                                      self.scale_)]

    def input_matrix(self, p):
        return self.model_.input_matrix(p) / self.scale_

    def input_matrices(self, P):
        return self.model_.input_matrices(P) / self.scale_

    def __sklearn_is_fitted__(self):
        return hasattr(self, 'model_')


def _dataset_params(kx, ku, gamma, observable):
    kx = KernelSpec.coerce(kx)
    ku = KernelSpec.coerce(ku)
    return dict(state_kernel=kx.family.value, mu=kx.bandwidth,
                control_kernel=ku.family.value, control_mu=ku.bandwidth,
                gamma=gamma, observable=observable)


def fit_ckor(ds, kx, ku, gamma, observable=None):
    """Fit :class:`CKOR` on a dataset with explicit kernel specs."""
    return CKOR(**_dataset_params(kx, ku, gamma, observable)).fit_dataset(ds)


def fit_ny_ckor(ds, inducing, kx, ku, gamma, observable=None):
    """Fit :class:`NystromCKOR` on a fixed inducing set."""
    est = NystromCKOR(n_inducing=inducing.m,
                      **_dataset_params(kx, ku, gamma, observable))
    return est.fit_dataset(ds, inducing=inducing)


def fit_bedmdc(ds, centers, kx, gamma, observable=None):
    """Fit :class:`BilinearEDMDc` with the states of ``centers`` as centres."""
    kx = KernelSpec.coerce(kx)
    est = BilinearEDMDc(mu=kx.bandwidth, gamma=gamma, n_centers=centers.m,
                        state_kernel=kx.family.value, observable=observable)
    return est.fit_dataset(ds, centers=centers)


def pod_reduce(model, tau=None, rank=None):
    """Reduce a fitted kernel model onto its leading POD modes."""
    if tau is None and rank is None:
        raise InputError('give tau or rank')
    return ReducedModel(estimator=model, tau=tau, rank=rank)._reduce(model)
