import json

import pytest
import yaml

from ckoopman.cli import main

CFG = {
    'system': 'duffing', 'seed': 3, 'output_dir': 'out',
    'data': {
        'train': {'initial': {'kind': 'grid', 'per_dim': 3,
                              'bounds': [[-2, 2], [-2, 2]]},
                  'input': {'kind': 'uniform'}, 'length': 10},
        'test': {'initial': {'kind': 'random', 'count': 2,
                             'bounds': [[-1, 1], [-1, 1]]},
                 'input': {'kind': 'uniform'}, 'length': 12},
    },
    'model': {'estimator': 'ny-ckor', 'mu': 1.0, 'gamma': 1e-7,
              'inducing': 30},
    'sweep': {'mu': [1.0], 'gamma': [1e-7], 'estimators': ['ckor', 'bedmdc']},
    'evaluation': {'horizon': 4},
    'mpc': {'Q': [1, 1], 'R': [1], 'horizon': 5, 'duration': 0.03,
            'initial_conditions': [[0.5, 0.5]], 'u_min': [-2], 'u_max': [2]},
}


def _write(tmp_path, cfg=CFG, name='c.yaml'):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_generate_is_byte_reproducible(tmp_path, capsys):
    cfg = _write(tmp_path)
    assert main(['generate', '--config', str(cfg), '--out',
                 str(tmp_path / 'a' / 'nested')]) == 0
    assert main(['generate', '--config', str(cfg), '--out',
                 str(tmp_path / 'b')]) == 0
    for split in ('train', 'test'):
        a = (tmp_path / 'a' / 'nested' / f'{split}.csv').read_bytes()
        assert a == (tmp_path / 'b' / f'{split}.csv').read_bytes()
    assert 'train: 90 rows, 9 trajectories' in capsys.readouterr().out
    assert main(['generate', '--config', str(cfg), '--seed', '4', '--out',
                 str(tmp_path / 'c')]) == 0
    assert (tmp_path / 'c' / 'train.csv').read_bytes() != \
        (tmp_path / 'b' / 'train.csv').read_bytes()


def test_fit_predict_inspect(tmp_path, capsys):
    cfg = _write(tmp_path)
    out = tmp_path / 'fit'
    assert main(['fit', '--config', str(cfg), '--out', str(out)]) == 0
    report = json.loads((out / 'fit_report.json').read_text())
    assert report['n_lifted'] == 30 and report['n'] == 90
    first = (out / 'model.json').read_bytes()
    assert main(['fit', '--config', str(cfg), '--out', str(out)]) == 0
    assert (out / 'model.json').read_bytes() == first
    main(['generate', '--config', str(cfg), '--out', str(tmp_path / 'd')])
    capsys.readouterr()
    assert main(['predict', '--model', str(out / 'model.json'), '--data',
                 str(tmp_path / 'd' / 'test.csv'), '--horizon', '1',
                 '--out', str(tmp_path / 'p')]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary['trajectories'] == 2 and summary['diverged'] == 0
    lines = (tmp_path / 'p' / 'prediction_rmse.csv').read_text().splitlines()
    assert lines[0] == 'trajectory,rmse' and len(lines) == 3
    assert main(['inspect-model', str(out / 'model.json')]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info['flavor'] == 'nystrom' and info['n_lifted'] == 30


def test_predict_dimension_mismatch(tmp_path, capsys):
    cfg = _write(tmp_path)
    main(['fit', '--config', str(cfg), '--out', str(tmp_path / 'f')])
    import numpy as np
    from ckoopman import data
    vdp = data.write_csv(data.SnapshotDataset(np.zeros((2, 3)), np.zeros((2, 1)),
                                              np.zeros((2, 3))),
                         tmp_path / 'v.csv')
    assert main(['predict', '--model', str(tmp_path / 'f' / 'model.json'),
                 '--data', str(vdp)]) == 2
    assert main(['predict', '--model', str(tmp_path / 'f' / 'model.json'),
                 '--data', str(vdp), '--horizon', '0']) == 2


def test_sweep_outputs(tmp_path):
    cfg = _write(tmp_path)
    for d in ('s1', 's2'):
        assert main(['sweep', '--config', str(cfg), '--out',
                     str(tmp_path / d)]) == 0
    a = (tmp_path / 's1' / 'sweep.csv').read_text()
    assert a == (tmp_path / 's2' / 'sweep.csv').read_text()
    assert a.splitlines()[0] == ('estimator,n,repeat,mu,gamma,mean_rmse,'
                                 'std_rmse,diverged')
    assert len(a.splitlines()) == 3
    assert (tmp_path / 's1' / 'sweep_timing.csv').exists()


def test_mpc_logs_and_zero_duration(tmp_path):
    cfg = _write(tmp_path)
    assert main(['mpc', '--config', str(cfg), '--out',
                 str(tmp_path / 'm')]) == 0
    log = (tmp_path / 'm' / 'mpc_ckor_0.csv').read_text().splitlines()
    assert log[0] == 'time,x1,x2,u1,objective,iterations,converged'
    assert len(log) == 4
    zero = {**CFG, 'mpc': {**CFG['mpc'], 'duration': 0.0}}
    cfg0 = _write(tmp_path, zero, 'z.yaml')
    assert main(['mpc', '--config', str(cfg0), '--out',
                 str(tmp_path / 'z')]) == 0
    log = (tmp_path / 'z' / 'mpc_ckor_0.csv').read_text().splitlines()
    assert log == ['time,x1,x2,u1,objective,iterations,converged']


@pytest.mark.parametrize('mutate,code', [
    (lambda c: c['model'].update(gamma=0.0), 2),
    (lambda c: c.update(unknown=1), 2),
    (lambda c: c.pop('sweep'), 2),
])
def test_config_errors_exit_2(tmp_path, capsys, mutate, code):
    import copy
    cfg = copy.deepcopy(CFG)
    mutate(cfg)
    p = _write(tmp_path, cfg)
    assert main(['sweep', '--config', str(p), '--out', str(tmp_path)]) == code
    assert capsys.readouterr().err.startswith('error:')


def test_missing_files_exit_2(tmp_path):
    assert main(['fit', '--config', str(tmp_path / 'nope.yaml')]) == 2
    assert main(['predict', '--model', str(tmp_path / 'nope.json'),
                 '--data', str(tmp_path / 'x.csv')]) == 2


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2
