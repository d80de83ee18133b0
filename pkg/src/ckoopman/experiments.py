"""Experiment drivers behind the command-line interface.

Everything here is a pure function of an :class:`ExperimentConfig` plus a
seed, so two runs with the same inputs write identical result files.
Wall-clock timings are the one exception and go to separate files.
"""

import csv
import io
import itertools
import time
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from . import data, estimators, mpc, systems
from .exceptions import (InputError, NumericalError, PredictionError,
                         SimulationError)
from .predictor import rollout_batch

__all__ = [
    'SYSTEMS', 'make_system', 'input_law', 'initial_conditions',
    'simulate_split', 'load_splits', 'make_estimator', 'fit_model',
    'evaluate', 'sweep', 'SweepResult', 'mpc_problem', 'run_mpc',
    'MpcRun', 'write_rows', 'format_rows',
]

SYSTEMS = {'duffing': systems.duffing, 'van_der_pol': systems.van_der_pol}

SWEEP_HEADER = ['estimator', 'n', 'repeat', 'mu', 'gamma', 'mean_rmse',
                'std_rmse', 'diverged']
TIMING_HEADER = ['estimator', 'n', 'repeat', 'mu', 'gamma', 'fit_time',
                 'predict_time']


def make_system(name):
    return SYSTEMS[name]()


def input_law(spec):
    """Input law object for an :class:`~ckoopman.config.InputSpec`."""
    if spec.kind == 'uniform':
        return systems.UniformRandomInput(spec.low, spec.high)
    if spec.kind == 'zero':
        return systems.UniformRandomInput(0.0, 0.0)
    if spec.kind == 'sine':
        amp, w = spec.amplitude, 2.0 * np.pi * spec.frequency
        return systems.SignalInput(lambda t: amp * np.sin(w * t))
    return systems.FeedbackInput(systems.van_der_pol_optimal_feedback,
                                 spec.low, spec.high)


def initial_conditions(spec, seed):
    if spec.kind == 'grid':
        return systems.grid_initial_conditions(spec.per_dim, spec.bounds)
    if spec.kind == 'random':
        return systems.random_initial_conditions(spec.count, spec.bounds,
                                                 seed)
    return np.asarray(spec.points, dtype=float)


def _sim_config(cfg):
    return systems.SimConfig(cfg.data.dt, cfg.data.substeps)


def simulate_split(ode, spec, sim, seed):
    """Simulate one split; ``subsample`` keeps that many random rows."""
    seed = (seed, spec.seed_offset)
    X0 = initial_conditions(spec.initial, (seed, 0))
    ds = systems.generate_snapshots(ode, X0, input_law(spec.input),
                                    spec.length, sim, (seed, 1))
    if spec.subsample is not None and spec.subsample < ds.n:
        ds = ds.take(data.subsample_uniform(ds, spec.subsample,
                                            (seed, 2)).indices)
    return ds


def load_splits(cfg, seed=None):
    """``{'train': ds, 'validation': ds | None, 'test': ds | None}``."""
    seed = cfg.seed if seed is None else seed
    ode = make_system(cfg.system)
    sim = _sim_config(cfg)
    out = {}
    for split in ('train', 'validation', 'test'):
        spec = getattr(cfg.data, split)
        path = getattr(cfg.data, split + '_csv')
        if spec is not None:
            # distinct streams per split even at equal seed offsets
            split_seed = (seed, ('train', 'validation', 'test').index(split))
            out[split] = simulate_split(ode, spec, sim, split_seed)
        elif path is not None:
            out[split] = data.load_csv(cfg.resolve(path), ode.n_x, ode.n_u)
        else:
            out[split] = None
    return out


def make_estimator(spec, estimator=None, mu=None, gamma=None, seed=None):
    """Unfitted estimator for a :class:`~ckoopman.config.ModelSpec`,
    optionally overriding the family and hyperparameters."""
    name = estimator or spec.estimator
    mu = spec.mu if mu is None else mu
    gamma = spec.gamma if gamma is None else gamma
    seed = spec.inducing_seed if seed is None else seed
    if name == 'ckor':
        est = estimators.CKOR(mu=mu, gamma=gamma)
    elif name == 'ny-ckor':
        est = estimators.NystromCKOR(mu=mu, gamma=gamma,
                                     n_inducing=spec.inducing,
                                     random_state=seed)
    else:
        est = estimators.BilinearEDMDc(mu=mu, gamma=gamma,
                                       n_centers=spec.inducing,
                                       random_state=seed)
    if spec.pod_tau is not None and name != 'bedmdc':
        est = estimators.ReducedModel(est, tau=spec.pod_tau)
    if spec.input_scale != 1.0:
        est = estimators.InputScaled(est, spec.input_scale)
    return est


def _clamp_inducing(est, n):
    """Cap the inducing / centre count at the number of training rows."""
    inner = est
    while hasattr(inner, 'estimator') and inner.estimator is not None:
        inner = inner.estimator
    for key in ('n_inducing', 'n_centers'):
        if hasattr(inner, key) and getattr(inner, key) > n:
            inner.set_params(**{key: n})
    return est


def fit_model(spec, train, **overrides):
    """Fit and return ``(model, report)``; the report carries wall time and
    dimensions."""
    est = _clamp_inducing(make_estimator(spec, **overrides), train.n)
    tic = time.perf_counter()
    model = est.fit_dataset(train)
    elapsed = time.perf_counter() - tic
    report = {
        'estimator': overrides.get('estimator') or spec.estimator,
        'n': train.n, 'n_x': train.n_x, 'n_u': train.n_u,
        'n_lifted': int(model.n_lifted_), 'fit_time': elapsed,
    }
    return model, report


def _windows(ds, horizon):
    """Start rows and lengths of consecutive prediction windows."""
    out = []
    for a, b in ds.segment_bounds():
        h = (b - a) if horizon is None else horizon
        for s in range(a, b, h):
            out.append((s, min(h, b - s)))
    return out


def evaluate(model, test, horizon=None):
    """Per-trajectory RMSE of ``horizon``-step rollouts.

    Each test trajectory is cut into consecutive windows of ``horizon``
    steps (the whole trajectory when ``horizon`` is None); every window is
    predicted from its measured first state. ``horizon=1`` gives one-step
    prediction. Diverged rollouts score ``inf``.
    """
    if test.n_x != model.n_states_in_ or test.n_u != model.n_inputs_in_:
        raise InputError(
            f'model expects {model.n_states_in_} states and '
            f'{model.n_inputs_in_} inputs, dataset has {test.n_x} and '
            f'{test.n_u}')
    Y_hat = np.empty_like(test.X_plus)
    by_len = {}
    for start, h in _windows(test, horizon):
        by_len.setdefault(h, []).append(start)
    for h, starts in by_len.items():
        idx = np.asarray(starts)[:, None] + np.arange(h)
        Y, _ = rollout_batch(model, test.X[starts], test.U[idx])
        Y_hat[idx] = Y
    out = []
    with np.errstate(invalid='ignore', over='ignore'):
        for a, b in test.segment_bounds():
            err = Y_hat[a:b] - test.X_plus[a:b]
            val = float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
            out.append(val if np.isfinite(val) else np.inf)
    return np.array(out)


@dataclass
class SweepResult:
    rows: list
    timing: list

    @property
    def diverged(self):
        return sum(int(r[-1]) for r in self.rows)


def _sweep_cell(cfg, train, test, name, mu, gamma, repeat, horizon):
    try:
        model, rep = fit_model(cfg.model, train, estimator=name, mu=mu,
                               gamma=gamma, seed=(cfg.seed, repeat))
        tic = time.perf_counter()
        scores = evaluate(model, test, horizon)
        t_pred = time.perf_counter() - tic
        t_fit = rep['fit_time']
    except (NumericalError, PredictionError, np.linalg.LinAlgError):
        scores = np.array([np.inf])
        t_fit = t_pred = float('nan')
    finite = np.isfinite(scores)
    mean = float(np.mean(scores)) if finite.all() else np.inf
    std = float(np.std(scores)) if finite.all() else np.inf
    key = [name, train.n, repeat, mu, gamma]
    return key + [mean, std, int((~finite).sum())], key + [t_fit, t_pred]


def sweep(cfg, workers=None):
    """Full ``sizes x repeats x estimators x mu x gamma`` grid.

    Each repetition draws fresh training data (seed ``cfg.seed + repeat``);
    with ``sizes`` set, every size is a random row subset of that
    repetition's pool.
    """
    sw = cfg.sweep
    horizon = cfg.evaluation.horizon
    jobs = []
    for repeat in range(sw.repeats):
        splits = load_splits(cfg, cfg.seed + repeat)
        pool, test = splits['train'], splits['test']
        if test is None:
            test = splits['validation']
        for size in (sw.sizes or [None]):
            if size is None or size >= pool.n:
                train = pool
            else:
                train = pool.take(data.subsample_uniform(
                    pool, size, (cfg.seed, repeat, size)).indices)
            for name, mu, gamma in itertools.product(
                    sw.estimators, sw.mu, sw.gamma):
                jobs.append((train, test, name, mu, gamma, repeat))
    n_jobs = cfg.workers if workers is None else workers
    results = Parallel(n_jobs=n_jobs)(
        delayed(_sweep_cell)(cfg, tr, te, name, mu, g, rep, horizon)
        for tr, te, name, mu, g, rep in jobs)
    return SweepResult([r[0] for r in results], [r[1] for r in results])


def mpc_problem(spec, n_x, dt):
    """:class:`~ckoopman.mpc.MpcProblem` for an MPC spec, expanding the
    piecewise-constant reference into one row per sample."""
    x_ref = None
    if spec.reference:
        rows = []
        for seg in spec.reference:
            steps = int(round(seg.duration / dt))
            rows.extend([seg.x] * steps)
        x_ref = np.asarray(rows, dtype=float).reshape(-1, n_x)
    return mpc.MpcProblem(
        Q=_matrix(spec.Q), R=_matrix(spec.R),
        Q_T=None if spec.Q_T is None else _matrix(spec.Q_T),
        horizon=spec.horizon, x_min=spec.x_min, x_max=spec.x_max,
        u_min=spec.u_min, u_max=spec.u_max, x_ref=x_ref)


def _matrix(v):
    a = np.asarray(v, dtype=float)
    return np.diag(a) if a.ndim == 1 else a


@dataclass
class MpcRun:
    controller: str
    x0: tuple
    result: mpc.ClosedLoopResult
    tracking_error: np.ndarray
    optimal_deviation: float = float('nan')


def _optimal_feedback_deviation(ode, x0, X, sim):
    """RMS distance between the closed loop and ``u = -x1 x2``."""
    law = systems.FeedbackInput(systems.van_der_pol_optimal_feedback, 0, 0)
    steps = X.shape[0] - 1
    if steps < 1:
        return float('nan')
    ref = systems.generate_snapshots(ode, np.asarray(x0)[None], law, steps,
                                     sim, 0)
    return data.rmse(ref.X_plus, X[1:])


def run_mpc(cfg, model=None):
    """Closed-loop runs from every configured initial condition.

    Fits ``cfg.model`` on the training split unless ``model`` is given.
    Returns a list of :class:`MpcRun`, LMPC runs last when requested.
    """
    spec = cfg.mpc
    ode = make_system(cfg.system)
    sim = _sim_config(cfg)
    if model is None:
        model, _ = fit_model(cfg.model, load_splits(cfg)['train'])
    problem = mpc_problem(spec, ode.n_x, sim.dt)
    controllers = [('ckor', mpc.LpvMpcController(model, problem, spec.tol,
                                                 spec.max_iter))]
    if spec.lmpc_baseline:
        controllers.append(('lmpc', mpc.lmpc_baseline(
            ode, np.zeros(ode.n_x), problem, sim.dt)))
    runs = []
    for name, ctrl in controllers:
        for x0 in spec.initial_conditions:
            res = mpc.closed_loop(ctrl, ode, x0, spec.duration, sim)
            k = np.arange(res.X.shape[0])
            ref = problem.x_ref[np.minimum(k, len(problem.x_ref) - 1)]
            err = np.linalg.norm(res.X - ref, axis=1)
            run = MpcRun(name, tuple(x0), res, err)
            if cfg.system == 'van_der_pol' and not res.failed:
                try:
                    run.optimal_deviation = _optimal_feedback_deviation(
                        ode, x0, res.X, sim)
                except SimulationError:
                    pass
            runs.append(run)
    return runs


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_rows(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_rows(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_rows(header, rows))
    return path
