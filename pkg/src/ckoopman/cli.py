"""``ckoopman`` command-line entry point.

Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure,
4 partial result (diverged sweep cells or failed closed-loop runs).
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, experiments, serialization
from .config import load_config
from .exceptions import (ConfigError, InputError, NumericalError, ParseError,
                         PredictionError, SimulationError,
                         UnsupportedConfigurationError)

log = logging.getLogger('ckoopman')

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4


def _load(args):
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if getattr(args, 'workers', None) is not None:
        overrides['workers'] = args.workers
    cfg = load_config(args.config, overrides)
    out = Path(args.out) if args.out else cfg.resolve(cfg.output_dir)
    return cfg, out


def _require(cfg, section):
    if getattr(cfg, section) is None:
        raise ConfigError('section is required for this command',
                          path=section)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + '\n'


def cmd_generate(args):
    cfg, out = _load(args)
    splits = experiments.load_splits(cfg)
    for name, ds in splits.items():
        if ds is None or getattr(cfg.data, name) is None:
            continue
        path = data.write_csv(ds, out / f'{name}.csv',
                              comment=f'{cfg.system} {name} seed={cfg.seed}')
        print(f'{name}: {ds.n} rows, {len(ds.segment_bounds())} '
              f'trajectories -> {path}')
    return EXIT_OK


def cmd_fit(args):
    cfg, out = _load(args)
    train = experiments.load_splits(cfg)['train']
    if train is None:
        raise ConfigError('a training split is required', path='data.train')
    try:
        model, report = experiments.fit_model(cfg.model, train)
    except NumericalError as exc:
        raise NumericalError(
            f'{cfg.model.estimator} fit (mu={cfg.model.mu}, '
            f'gamma={cfg.model.gamma}) failed: {exc}') from exc
    out.mkdir(parents=True, exist_ok=True)
    text = serialization.dumps_model(model)
    (out / 'model.json').write_text(text)
    report['model_sha256'] = hashlib.sha256(text.encode()).hexdigest()
    (out / 'fit_report.json').write_text(_json(report))
    sys.stdout.write(_json(report))
    return EXIT_OK


def cmd_sweep(args):
    cfg, out = _load(args)
    _require(cfg, 'sweep')
    res = experiments.sweep(cfg)
    experiments.write_rows(out / 'sweep.csv', experiments.SWEEP_HEADER,
                           res.rows)
    experiments.write_rows(out / 'sweep_timing.csv',
                           experiments.TIMING_HEADER, res.timing)
    for row in res.rows:
        print(' '.join(experiments._fmt(v) for v in row))
    if res.diverged:
        log.warning('%d diverged rollouts across the grid', res.diverged)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_predict(args):
    model = serialization.load_model(args.model)
    ds = data.load_csv(args.data)
    horizon = args.horizon
    scores = experiments.evaluate(model, ds, horizon)
    out = Path(args.out or '.')
    rows = [[i, s] for i, s in enumerate(scores)]
    experiments.write_rows(out / 'prediction_rmse.csv',
                           ['trajectory', 'rmse'], rows)
    finite = scores[np.isfinite(scores)]
    summary = {'horizon': horizon, 'trajectories': int(scores.size),
               'diverged': int(scores.size - finite.size),
               'mean_rmse': float(np.mean(scores)),
               'std_rmse': float(np.std(scores)) if finite.size == scores.size
               else float('inf')}
    sys.stdout.write(json.dumps(summary, sort_keys=True) + '\n')
    return EXIT_PARTIAL if summary['diverged'] else EXIT_OK


def cmd_mpc(args):
    cfg, out = _load(args)
    _require(cfg, 'mpc')
    runs = experiments.run_mpc(cfg)
    summary = []
    for i, run in enumerate(runs):
        header, rows = run.result.to_rows()
        name = f'mpc_{run.controller}_{i}.csv'
        experiments.write_rows(out / name, header, rows)
        res = run.result
        summary.append([run.controller, *run.x0, int(res.failed),
                        res.final_state_norm(), run.tracking_error[-1],
                        run.optimal_deviation, len(res.U)])
    head = (['controller'] + [f'x0_{j + 1}' for j in range(len(runs[0].x0))]
            + ['failed', 'final_state_norm', 'final_tracking_error',
               'optimal_feedback_rmse', 'steps'])
    experiments.write_rows(out / 'mpc_summary.csv', head, summary)
    print(experiments.format_rows(head, summary), end='')
    if any(r.result.failed for r in runs if r.controller != 'lmpc'):
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_inspect(args):
    d = json.loads(Path(args.model).read_text())
    model = serialization.model_from_dict(d)
    info = {'flavor': d['model']['flavor'], 'version': d['version'],
            'n_states': model.n_states_in_, 'n_inputs': model.n_inputs_in_,
            'n_lifted': int(model.n_lifted_),
            'params': d['model'].get('params', {})}
    A = np.asarray(model.A_)
    info['spectral_radius'] = float(np.max(np.abs(np.linalg.eigvals(A))))
    sys.stdout.write(_json(info))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog='ckoopman',
        description='Kernel control Koopman regression experiments.')
    p.add_argument('-v', '--verbose', action='store_true')
    sub = p.add_subparsers(dest='command', required=True)

    def common(sp, workers=False):
        sp.add_argument('--config', required=True, help='YAML config file')
        sp.add_argument('--seed', type=int, help='override config seed')
        sp.add_argument('--out', help='output directory')
        if workers:
            sp.add_argument('--workers', type=int,
                            help='parallel sweep cells')

    common(sub.add_parser('generate', help='simulate and write CSV splits'))
    common(sub.add_parser('fit', help='fit the configured model'))
    common(sub.add_parser('sweep', help='grid search over mu and gamma'),
           workers=True)
    common(sub.add_parser('mpc', help='closed-loop MPC simulation'))
    sp = sub.add_parser('predict', help='score a saved model on a CSV')
    sp.add_argument('--model', required=True)
    sp.add_argument('--data', required=True)
    sp.add_argument('--horizon', type=int, default=None,
                    help='steps per rollout window (default: whole '
                         'trajectory)')
    sp.add_argument('--out')
    sp = sub.add_parser('inspect-model', help='summarize a saved model')
    sp.add_argument('model')
    return p


COMMANDS = {'generate': cmd_generate, 'fit': cmd_fit, 'sweep': cmd_sweep,
            'predict': cmd_predict, 'mpc': cmd_mpc,
            'inspect-model': cmd_inspect}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose
                        else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    if getattr(args, 'horizon', None) is not None and args.horizon < 1:
        print('error: --horizon must be >= 1', file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InputError, ParseError,
            UnsupportedConfigurationError, FileNotFoundError) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SimulationError, PredictionError,
            np.linalg.LinAlgError) as exc:
        print(f'numerical error: {exc}', file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == '__main__':
    sys.exit(main())
