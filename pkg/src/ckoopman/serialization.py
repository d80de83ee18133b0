"""Versioned JSON storage of fitted models.

Floats are written with ``repr`` precision, so a saved and reloaded model
reproduces predictions bit for bit. Each file carries a ``format`` tag and
a ``version``; loading a newer version is refused.
"""

import json
from pathlib import Path

import numpy as np

from .estimators import (CKOR, BilinearEDMDc, InputScaled, NystromCKOR,
                         ReducedModel)
from .exceptions import InputError, ParseError

__all__ = ['FORMAT', 'VERSION', 'model_to_dict', 'model_from_dict',
           'save_model', 'load_model', 'dumps_model', 'loads_model']

FORMAT = 'ckoopman-model'
VERSION = 1

_KERNEL_PARAMS = ('mu', 'gamma', 'state_kernel', 'control_kernel',
                  'control_mu', 'observable', 'n_inputs')
_COMMON_FITTED = ('n_states_in_', 'n_inputs_in_', 'n_features_in_',
                  'n_samples_')

_ARRAYS = {
    'full': ('A_', 'C_', 'X_anchor_', 'U_anchor_', 'Xp_anchor_',
             'cholesky_'),
    'nystrom': ('A_', 'C_', 'W_', 'X_anchor_', 'U_anchor_', 'Xp_anchor_',
                'inducing_indices_'),
    'bedmdc': ('W_', 'C_', 'centers_', 'center_indices_'),
}
_CLASSES = {'full': CKOR, 'nystrom': NystromCKOR, 'bedmdc': BilinearEDMDc}


def _arr(a):
    a = np.asarray(a)
    return {'dtype': 'int' if a.dtype.kind in 'iu' else 'float',
            'shape': list(a.shape), 'data': a.reshape(-1).tolist()}


def _unarr(d):
    try:
        dtype = np.int64 if d['dtype'] == 'int' else np.float64
        return np.asarray(d['data'], dtype=dtype).reshape(d['shape'])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f'malformed array entry: {exc}') from None


def _param(v):
    if hasattr(v, 'to_dict'):
        return v.to_dict()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [int(i) for i in v]
    return v


def _estimator_dict(model):
    flavor = model.flavor
    if flavor not in _CLASSES:
        raise InputError(f'cannot serialize flavor {flavor!r}')
    params = {k: _param(v) for k, v in model.get_params(deep=False).items()}
    fitted = {k: getattr(model, k) for k in _COMMON_FITTED
              if hasattr(model, k)}
    if flavor == 'full':
        fitted['jitter_'] = model.jitter_
    if flavor == 'bedmdc':
        fitted['n_z_'] = model.n_z_
    arrays = {k: _arr(getattr(model, k)) for k in _ARRAYS[flavor]}
    return {'flavor': flavor, 'params': params, 'fitted': fitted,
            'arrays': arrays}


def _body(model):
    if isinstance(model, InputScaled):
        return {'flavor': 'input_scaled',
                'arrays': {'scale_': _arr(model.scale_)},
                'inner': _body(model.model_)}
    if isinstance(model, ReducedModel):
        return {
            'flavor': 'reduced',
            'params': {'tau': model.tau, 'rank': model.rank},
            'parent': _estimator_dict(model.parent_),
            'arrays': {'V_r_': _arr(model.V_r_),
                       'sigma_r_': _arr(model.sigma_r_)},
            'fitted': {'energy_fraction_': model.energy_fraction_},
        }
    return _estimator_dict(model)


def model_to_dict(model):
    """Plain-data description of a fitted model."""
    return {'format': FORMAT, 'version': VERSION, 'model': _body(model)}


def _coerce_param(name, value):
    if isinstance(value, dict):
        from .kernels import KernelSpec
        return KernelSpec.from_dict(value)
    return value


def _estimator_from(d):
    flavor = d.get('flavor')
    if flavor not in _CLASSES:
        raise ParseError(f'unknown model flavor {flavor!r}')
    cls = _CLASSES[flavor]
    params = {k: _coerce_param(k, v) for k, v in d['params'].items()}
    est = cls(**params)
    for k, v in d.get('fitted', {}).items():
        setattr(est, k, v)
    for k in _ARRAYS[flavor]:
        if k not in d['arrays']:
            raise ParseError(f'{flavor} model lacks array {k!r}')
        setattr(est, k, _unarr(d['arrays'][k]))
    est.state_kernel_, est.control_kernel_ = est._kernels()
    return est


def _reduced_from(body):
    parent = _estimator_from(body['parent'])
    red = ReducedModel(estimator=None, **body['params'])
    red.parent_ = parent
    red.V_r_ = _unarr(body['arrays']['V_r_'])
    red.sigma_r_ = _unarr(body['arrays']['sigma_r_'])
    red.energy_fraction_ = body['fitted']['energy_fraction_']
    V = red.V_r_
    red.A_ = V.T @ parent.A_ @ V
    red.B_ = [V.T @ B @ V for B in parent.bilinear_channels()]
    red.C_ = parent.C_ @ V
    red.n_states_in_ = parent.n_states_in_
    red.n_inputs_in_ = parent.n_inputs_in_
    red.n_features_in_ = parent.n_features_in_
    return red


def _from_body(body):
    if not isinstance(body, dict):
        raise ParseError('model entry must be an object')
    try:
        flavor = body.get('flavor')
        if flavor == 'input_scaled':
            inner = _from_body(body['inner'])
            scale = _unarr(body['arrays']['scale_'])
            wrapped = InputScaled(estimator=None, scale=scale.tolist())
            return wrapped._adopt(inner, scale)
        if flavor == 'reduced':
            return _reduced_from(body)
        return _estimator_from(body)
    except KeyError as exc:
        raise ParseError(f'model entry lacks {exc}') from None


def model_from_dict(d):
    """Rebuild a fitted model from :func:`model_to_dict` output."""
    if not isinstance(d, dict) or d.get('format') != FORMAT:
        raise ParseError(f'not a {FORMAT} document')
    version = d.get('version')
    if not isinstance(version, int) or version > VERSION:
        raise ParseError(f'unsupported model version {version!r}')
    return _from_body(d.get('model') or {})


def dumps_model(model):
    return json.dumps(model_to_dict(model), allow_nan=False)


def loads_model(text):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f'line {exc.lineno}: {exc.msg}') from None
    return model_from_dict(d)


def save_model(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_model(model))
    return path


def load_model(path):
    return loads_model(Path(path).read_text())
