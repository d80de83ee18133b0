from pathlib import Path

import pytest

from ckoopman.config import load_config, parse_config
from ckoopman.exceptions import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / 'configs'

BASE = {
    'system': 'duffing',
    'data': {'train': {'initial': {'kind': 'grid', 'per_dim': 3,
                                   'bounds': [[-1, 1], [-1, 1]]},
                       'input': {'kind': 'uniform'}, 'length': 5}},
}


def _with(path, value):
    import copy
    d = copy.deepcopy(BASE)
    node = d
    keys = path.split('.')
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return d


@pytest.mark.parametrize('name', sorted(p.name for p in CONFIGS.glob('*.yaml')))
def test_shipped_configs_validate(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.system in ('duffing', 'van_der_pol')


def test_defaults_and_float_literals(tmp_path):
    p = tmp_path / 'c.yaml'
    p.write_text('system: duffing\nmodel: {gamma: 1e-9, mu: 2}\n'
                 'data: {train_csv: d.csv}\n')
    (tmp_path / 'd.csv').write_text('')
    cfg = load_config(p)
    assert cfg.model.gamma == 1e-9 and cfg.model.mu == 2.0
    assert cfg.resolve('d.csv') == tmp_path / 'd.csv'
    assert load_config(p, {'seed': 5}).seed == 5


@pytest.mark.parametrize('path,value,where', [
    ('model.gamma', 0.0, 'model.gamma'),
    ('model.bogus', 1, 'model.bogus'),
    ('sweep', {'mu': [], 'gamma': [1e-9]}, 'sweep.mu'),
    ('sweep', {'mu': [-1.0], 'gamma': [1e-9]}, 'sweep.mu'),
    ('data.train.initial.per_dim', None, 'data.train.initial'),
    ('data.train.input.low', 5.0, 'data.train.input'),
    ('data.test_csv', 'missing.csv', 'data.test_csv'),
    ('system', 'lorenz', 'system'),
    ('mpc', {'Q': [1, 1], 'R': [1], 'horizon': 0, 'duration': 1,
             'initial_conditions': [[0, 0]]}, 'mpc.horizon'),
])
def test_errors_name_the_field(tmp_path, path, value, where):
    with pytest.raises(ConfigError) as info:
        parse_config(_with(path, value), base_dir=tmp_path)
    assert info.value.path == where
    assert str(info.value).startswith(where + ':')


def test_file_level_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / 'absent.yaml')
    bad = tmp_path / 'bad.yaml'
    bad.write_text('system: [unclosed\n')
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text('- 1\n- 2\n')
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        parse_config({**BASE, 'base_dir': '/'})
