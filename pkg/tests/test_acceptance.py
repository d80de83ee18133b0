"""End-to-end acceptance checks, one test per numbered criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured numbers.
"""

import time
from pathlib import Path

import numpy as np

from ckoopman import data, estimators as E, experiments as X, systems
from ckoopman.config import load_config
from ckoopman.qp import QuadraticProgram, kkt_residuals, solve_qp

from test_qp import dual_projected_gradient

CONFIGS = Path(__file__).resolve().parents[1] / 'configs'
DUFFING = systems.duffing()


def _duffing(n_traj, length, seed, box=2.0, dt=0.01):
    X0 = systems.random_initial_conditions(n_traj, [(-box, box)] * 2, seed)
    return systems.generate_snapshots(
        DUFFING, X0, systems.UniformRandomInput(-2, 2), length,
        systems.SimConfig(dt), seed + 1000)


def _kz(Xa, Ua, Xb, Ub, mu):
    d2 = ((Xa[:, None, :] - Xb[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / mu) * (1.0 + Ua @ Ub.T)


def test_c01_krr_equivalence(criterion):
    tic = time.perf_counter()
    worst = 0.0
    for seed in range(3):
        ds = _duffing(50, 1, seed)
        mu, gamma = 0.5, 1e-6
        rng = np.random.default_rng(seed)
        Xq, Uq = rng.uniform(-2, 2, (100, 2)), rng.uniform(-2, 2, (100, 1))
        K = _kz(ds.X, ds.U, ds.X, ds.U, mu)
        ref = ds.X_plus.T @ np.linalg.solve(
            K + ds.n * gamma * np.eye(ds.n), _kz(ds.X, ds.U, Xq, Uq, mu))
        model = E.CKOR(mu=mu, gamma=gamma).fit_dataset(ds)
        got = np.stack([model.rollout(x, u[None]).Y[0]
                        for x, u in zip(Xq, Uq)])
        worst = max(worst, np.linalg.norm(got - ref.T)
                    / np.linalg.norm(ref))
    elapsed = time.perf_counter() - tic
    ok = worst <= 1e-10 and elapsed < 10
    criterion(1, ok, f'rel err {worst:.2e} (<= 1e-10), {elapsed:.1f}s')
    assert ok


def test_c02_bilinear_equivalence(criterion):
    tic = time.perf_counter()
    model = E.CKOR(mu=1.0, gamma=1e-6).fit_dataset(_duffing(100, 1, 7))
    Bs = model.bilinear_channels()
    rng = np.random.default_rng(0)
    step_dev = run_dev = 0.0
    for _ in range(20):
        U = rng.uniform(-2, 2, (50, 1))
        x0 = rng.uniform(-2, 2, 2)
        Z = model.rollout(x0, U).Z
        z = Z[0]
        for k in range(1, 50):
            # one step from the same state, then the independent recursion
            one = model.A_ @ Z[k - 1] + U[k, 0] * (Bs[0] @ Z[k - 1])
            step_dev = max(step_dev, np.abs(one - Z[k]).max())
            z = model.A_ @ z + U[k, 0] * (Bs[0] @ z)
            run_dev = max(run_dev, np.abs(z - Z[k]).max())
    elapsed = time.perf_counter() - tic
    ok = max(step_dev, run_dev) <= 1e-12 and elapsed < 5
    criterion(2, ok, f'max abs dev per step {step_dev:.1e}, over H=50 '
                     f'{run_dev:.1e} (<= 1e-12), {elapsed:.1f}s')
    assert ok


def test_c03_nystrom_consistency(criterion):
    tic = time.perf_counter()
    ds = _duffing(40, 1, 11)
    full = E.CKOR(mu=0.5, gamma=1e-6).fit_dataset(ds)
    ny = E.NystromCKOR(mu=0.5, gamma=1e-6).fit_dataset(
        ds, inducing=np.arange(ds.n))
    err_a = np.abs(ny.A_ - full.A_).max() / np.abs(full.A_).max()
    rng = np.random.default_rng(1)
    err_y = 0.0
    for _ in range(10):
        U = rng.uniform(-2, 2, (50, 1))
        x0 = rng.uniform(-2, 2, 2)
        a, b = ny.rollout(x0, U).Y, full.rollout(x0, U).Y
        err_y = max(err_y, np.abs(a - b).max() / np.abs(b).max())
    elapsed = time.perf_counter() - tic
    ok = err_a <= 1e-6 and err_y <= 1e-6 and elapsed < 10
    criterion(3, ok, f'A rel {err_a:.1e}, rollout rel {err_y:.1e} '
                     f'(<= 1e-6), {elapsed:.1f}s')
    assert ok


def test_c04_pod(criterion):
    tic = time.perf_counter()
    # exactness on a full-rank Gram
    ds = _duffing(30, 1, 3)
    parent = E.NystromCKOR(mu=0.3, gamma=1e-7, n_inducing=30).fit_dataset(ds)
    red = E.pod_reduce(parent, tau=100)
    rng = np.random.default_rng(2)
    exact = 0.0
    for _ in range(5):
        U = rng.uniform(-2, 2, (50, 1))
        x0 = rng.uniform(-1.5, 1.5, 2)
        exact = max(exact, np.abs(red.rollout(x0, U).Y
                                  - parent.rollout(x0, U).Y).max())
    # the reduced Nystrom model used for Duffing tracking
    cfg = load_config(CONFIGS / 'duffing_mpc.yaml')
    train = X.load_splits(cfg)['train']
    spec = cfg.model
    par, _ = X.fit_model(spec.model_copy(update={'pod_tau': None}), train)
    reduced = E.pod_reduce(par, tau=spec.pod_tau)
    test = _duffing(20, 100, 101)
    base = float(np.mean(X.evaluate(par, test, 100)))
    after = float(np.mean(X.evaluate(reduced, test, 100)))
    degradation = after / base - 1.0
    elapsed = time.perf_counter() - tic
    ok = exact <= 1e-8 and degradation <= 0.10 and elapsed < 30
    criterion(4, ok, f'tau=100 dev {exact:.1e} (<= 1e-8); tau={spec.pod_tau} '
                     f'r={reduced.rank_}: RMSE {base:.4f} -> {after:.4f} '
                     f'({100 * degradation:+.0f}%, limit +10%), '
                     f'{elapsed:.1f}s')
    assert ok


def _mean_rmse(rows, name):
    out = {}
    for r in rows:
        est, n, repeat, mu, gamma, mean = r[:6]
        if est == name:
            out.setdefault((n, mu), []).append(mean)
    return {k: float(np.mean(v)) for k, v in out.items()}


def test_c05_mu_sweep_trend(criterion):
    tic = time.perf_counter()
    cfg = load_config(CONFIGS / 'duffing_mu_sweep.yaml')
    res = X.sweep(cfg)
    ckor = _mean_rmse(res.rows, 'ckor')
    bed = _mean_rmse(res.rows, 'bedmdc')
    keys = sorted(ckor)
    wins = sum(ckor[k] <= bed[k] for k in keys)
    frac = wins / len(keys)
    best_c, best_b = min(ckor.values()), min(bed.values())
    elapsed = time.perf_counter() - tic
    ok = (len(keys) >= 8 and frac >= 0.8 and best_c <= best_b
          and elapsed < 300)
    criterion(5, ok, f'cKOR <= bEDMDc at {wins}/{len(keys)} mu; best '
                     f'{best_c:.2e} vs {best_b:.2e}, {elapsed:.0f}s')
    assert ok


def test_c06_size_trend(criterion):
    tic = time.perf_counter()
    cfg = load_config(CONFIGS / 'duffing_sizes.yaml')
    res = X.sweep(cfg)
    ckor = _mean_rmse(res.rows, 'ckor')
    ny = _mean_rmse(res.rows, 'ny-ckor')
    bed = _mean_rmse(res.rows, 'bedmdc')
    parts, ok = [], True
    for key in sorted(bed):
        good = ckor[key] <= bed[key] and ny[key] <= bed[key]
        ok &= good
        parts.append(f'n={key[0]}: {ckor[key]:.3g}/{ny[key]:.3g}/'
                     f'{bed[key]:.3g}')
    elapsed = time.perf_counter() - tic
    ok = ok and elapsed < 600
    criterion(6, ok, 'mean RMSE cKOR/Ny-cKOR/bEDMDc ' + ', '.join(parts)
              + f', {elapsed:.0f}s')
    assert ok


def _fit_time(est, Z, Y, reps=5):
    best = np.inf
    for _ in range(reps):
        tic = time.perf_counter()
        est.fit(Z, Y)
        best = min(best, time.perf_counter() - tic)
    return best


def test_c07_complexity(criterion):
    tic = time.perf_counter()
    rng = np.random.default_rng(0)
    sizes = [500, 1000, 2000]
    t_full, t_ny = [], []
    for n in sizes:
        Z, Y = rng.uniform(-2, 2, (n, 3)), rng.uniform(-2, 2, (n, 2))
        t_full.append(_fit_time(E.CKOR(mu=1.0, gamma=1e-7), Z, Y))
        t_ny.append(_fit_time(E.NystromCKOR(mu=1.0, gamma=1e-7,
                                            n_inducing=200), Z, Y))
    slope = np.polyfit(np.log(sizes), np.log(t_full), 1)[0]
    ny_growth = t_ny[-1] / t_ny[0]
    n = 3000
    t_nu = {}
    for nu in (1, 4, 8):
        Z, Y = rng.uniform(-2, 2, (n, 2 + nu)), rng.uniform(-2, 2, (n, 2))
        t_nu[nu] = (
            _fit_time(E.NystromCKOR(mu=1.0, gamma=1e-7, n_inducing=200,
                                    n_inputs=nu), Z, Y),
            _fit_time(E.BilinearEDMDc(mu=1.0, gamma=1e-7, n_centers=200,
                                      n_inputs=nu), Z, Y))
    ny_ratio = t_nu[8][0] / t_nu[1][0]
    bed_ratio = t_nu[8][1] / t_nu[1][1]
    elapsed = time.perf_counter() - tic
    ok = (slope > 2 and ny_growth <= 2 * (sizes[-1] / sizes[0])
          and ny_ratio <= 2 and bed_ratio >= 8 and elapsed < 600)
    criterion(7, ok, f'cKOR log-log slope {slope:.2f} (> 2); Ny-cKOR x'
                     f'{ny_growth:.1f} for 4x data (<= 8); n_u 4 and 8 vs 1: '
                     f'Ny-cKOR x{t_nu[4][0] / t_nu[1][0]:.2f}, '
                     f'x{ny_ratio:.2f} (<= 2), bEDMDc '
                     f'x{t_nu[4][1] / t_nu[1][1]:.1f}, x{bed_ratio:.1f} '
                     f'(>= 8), {elapsed:.0f}s')
    assert ok


def test_c08_qp_solver(criterion):
    tic = time.perf_counter()
    rng = np.random.default_rng(8)
    gap = kkt = 0.0
    converged = True
    for _ in range(50):
        n, m = int(rng.integers(2, 21)), int(rng.integers(1, 15))
        M = rng.normal(size=(n, n))
        qp = QuadraticProgram.from_parts(
            M @ M.T + 0.1 * np.eye(n), 5 * rng.normal(size=n), -np.ones(n),
            np.ones(n), rng.normal(size=(m, n)), -rng.uniform(0.1, 1, m),
            rng.uniform(0.1, 1, m))
        sol = solve_qp(qp)
        converged &= sol.converged
        _, dual_value = dual_projected_gradient(qp)
        gap = max(gap, abs(sol.objective - dual_value))
        kkt = max(kkt, *kkt_residuals(qp, sol.x, sol.y))
    elapsed = time.perf_counter() - tic
    ok = converged and gap <= 1e-6 and kkt <= 1e-6 and elapsed < 30
    criterion(8, ok, f'objective gap {gap:.1e}, KKT {kkt:.1e} (<= 1e-6), '
                     f'{elapsed:.1f}s')
    assert ok


def test_c09_van_der_pol_mpc(criterion):
    tic = time.perf_counter()
    cfg = load_config(CONFIGS / 'vdp_mpc.yaml')
    runs = X.run_mpc(cfg)
    ckor = [r for r in runs if r.controller == 'ckor']
    lmpc = [r for r in runs if r.controller == 'lmpc']
    norms = [r.result.final_state_norm() if not r.result.failed else np.inf
             for r in ckor]
    stabilized = all(r.result.stabilized(0.15) for r in ckor)
    lmpc_fails = all(r.result.failed or not r.result.stabilized(0.15)
                     for r in lmpc) and len(lmpc) == 4
    dev = ', '.join(f'{r.optimal_deviation:.3f}' for r in ckor)
    elapsed = time.perf_counter() - tic
    ok = stabilized and lmpc_fails and elapsed < 600
    criterion(9, ok, '|x(10s)|_inf ' + ', '.join(f'{v:.3f}' for v in norms)
              + f' (<= 0.15); LMPC failed: {lmpc_fails}; RMS distance to '
              f'optimal-feedback trajectory {dev} (reported only), '
              f'{elapsed:.0f}s')
    assert ok


def test_c10_duffing_tracking(criterion):
    tic = time.perf_counter()
    cfg = load_config(CONFIGS / 'duffing_mpc.yaml')
    run = X.run_mpc(cfg)[0]
    e = run.tracking_error
    dt = cfg.data.dt
    switches = np.cumsum([0.0] + [s.duration for s in cfg.mpc.reference])
    ok = not run.result.failed and len(e) == len(run.result.X)
    parts = []
    for a, b in zip(switches[:-1], switches[1:]):
        # every reference segment must be reached to within 0.1 before the
        # next switch (the last segment is closed at the final sample)
        lo, hi = int(round(a / dt)), int(round(b / dt))
        window = e[lo:hi] if b < switches[-1] else e[lo:hi + 1]
        if window.size == 0:
            ok = False
            parts.append(f'[{a:g}, {b:g}) s: no samples')
            continue
        hit = np.flatnonzero(window <= 0.1)
        ok &= hit.size > 0
        parts.append(f'[{a:g}, {b:g}) s: min error {window.min():.3f}'
                     + (f', first <= 0.1 at {(lo + hit[0]) * dt:.2f} s'
                        if hit.size else ''))
    elapsed = time.perf_counter() - tic
    ok = ok and elapsed < 300
    criterion(10, ok, '; '.join(parts) + f', {elapsed:.0f}s')
    assert ok


def test_c11_rk4_order(criterion):
    tic = time.perf_counter()
    decay = systems.linear_ode([[-1.0]], [[0.0]])
    errs = []
    for h in (0.02, 0.01, 0.005):
        n = int(round(1.0 / h))
        x = systems.simulate(decay, [1.0], np.zeros((n, 1)),
                             systems.SimConfig(h))[-1, 0]
        errs.append(abs(x - np.exp(-1.0)))
    order = min(np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2]))
    elapsed = time.perf_counter() - tic
    ok = order >= 3.9 and elapsed < 1
    criterion(11, ok, f'measured order {order:.3f} (>= 3.9), '
                      f'{elapsed:.2f}s')
    assert ok


def test_c12_external_data_path(criterion, tmp_path):
    # The vortex-shedding numbers need external CFD data and are not
    # reproduced. What can be checked is the ingestion path such data would
    # take: CSV round trip, fit, reduce, predict.
    ds = _duffing(5, 20, 4)
    path = data.write_csv(ds, tmp_path / 'external.csv')
    back = data.load_csv(path)
    same = back == ds
    model = E.pod_reduce(
        E.NystromCKOR(mu=1.0, gamma=1e-7, n_inducing=40).fit_dataset(back),
        tau=99.99)
    finite = np.all(np.isfinite(X.evaluate(model, back, 10)))
    ok = same and finite
    criterion(12, ok, 'not reproducible (external CFD data); substitute '
                      f'CSV ingestion round trip exact: {same}, reduced '
                      f'Nystrom model fits and predicts: {finite}')
    assert ok
