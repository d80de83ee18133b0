"""Experiment configuration: a YAML (or JSON) file checked against a strict
schema.

Unknown keys are rejected and every error names the offending field, e.g.
``model.gamma: Input should be greater than 0``. Relative paths inside the
file resolve against the file's own directory.
"""

import re
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import (BaseModel, ConfigDict, Field, ValidationError,
                      field_validator, model_validator)

from .exceptions import ConfigError

__all__ = [
    'InitialSpec', 'InputSpec', 'TrajectorySpec', 'DataSpec', 'ModelSpec',
    'SweepSpec', 'EvaluationSpec', 'ReferenceSegment', 'MpcSpec',
    'ExperimentConfig', 'load_config', 'parse_config',
]

Matrix = Union[List[float], List[List[float]]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra='forbid', strict=True, frozen=True)


class InitialSpec(_Strict):
    """Initial conditions: an equidistant grid or uniform random draws."""

    kind: Literal['grid', 'random', 'list']
    bounds: Optional[List[List[float]]] = None
    per_dim: Optional[int] = Field(default=None, ge=1)
    count: Optional[int] = Field(default=None, ge=1)
    points: Optional[List[List[float]]] = None

    @model_validator(mode='after')
    def _complete(self):
        if self.kind == 'list':
            if not self.points:
                raise ValueError("kind 'list' needs non-empty points")
            return self
        if not self.bounds:
            raise ValueError(f'kind {self.kind!r} needs bounds')
        for lo_hi in self.bounds:
            if len(lo_hi) != 2 or not lo_hi[0] <= lo_hi[1]:
                raise ValueError(f'bad interval {lo_hi}')
        if self.kind == 'grid' and self.per_dim is None:
            raise ValueError("kind 'grid' needs per_dim")
        if self.kind == 'random' and self.count is None:
            raise ValueError("kind 'random' needs count")
        return self


class InputSpec(_Strict):
    """Excitation: uniform noise, a sine ``amplitude sin(2 pi f t)``, or the
    Van der Pol optimal feedback plus uniform noise."""

    kind: Literal['uniform', 'sine', 'vdp_feedback', 'zero']
    low: float = -2.0
    high: float = 2.0
    amplitude: float = 2.0
    frequency: float = 5.0

    @model_validator(mode='after')
    def _order(self):
        if self.low > self.high:
            raise ValueError(f'low {self.low} exceeds high {self.high}')
        return self


class TrajectorySpec(_Strict):
    initial: InitialSpec
    input: InputSpec
    length: int = Field(ge=1)
    subsample: Optional[int] = Field(default=None, ge=1)
    seed_offset: int = 0


class DataSpec(_Strict):
    """Simulated splits, or CSV files given by path."""

    dt: float = Field(default=0.01, gt=0)
    substeps: int = Field(default=1, ge=1)
    train: Optional[TrajectorySpec] = None
    validation: Optional[TrajectorySpec] = None
    test: Optional[TrajectorySpec] = None
    train_csv: Optional[str] = None
    validation_csv: Optional[str] = None
    test_csv: Optional[str] = None

    @model_validator(mode='after')
    def _one_source(self):
        for split in ('train', 'validation', 'test'):
            if (getattr(self, split) is not None
                    and getattr(self, split + '_csv') is not None):
                raise ValueError(f'{split} given both as spec and as CSV')
        return self


class ModelSpec(_Strict):
    estimator: Literal['ckor', 'ny-ckor', 'bedmdc'] = 'ckor'
    mu: float = Field(default=1.0, gt=0)
    gamma: float = Field(default=1e-9, gt=0)
    inducing: int = Field(default=200, ge=1)
    inducing_seed: int = 0
    pod_tau: Optional[float] = Field(default=None, gt=0, le=100)
    input_scale: float = Field(default=1.0, gt=0)


class SweepSpec(_Strict):
    """Grid over ``mu x gamma x estimators``, optionally over training
    sizes with fresh data per repetition."""

    mu: List[float] = Field(min_length=1)
    gamma: List[float] = Field(min_length=1)
    estimators: List[Literal['ckor', 'ny-ckor', 'bedmdc']] = Field(
        default=['ckor', 'bedmdc'], min_length=1)
    sizes: Optional[List[int]] = None
    repeats: int = Field(default=1, ge=1)

    @field_validator('mu', 'gamma')
    @classmethod
    def _positive(cls, v):
        if any(not x > 0 for x in v):
            raise ValueError('grid values must be positive')
        return v

    @field_validator('sizes')
    @classmethod
    def _sizes(cls, v):
        if v is not None and (not v or any(s < 1 for s in v)):
            raise ValueError('sizes must be a non-empty list of positive ints')
        return v


class EvaluationSpec(_Strict):
    horizon: Optional[int] = Field(default=None, ge=1)


class ReferenceSegment(_Strict):
    duration: float = Field(gt=0)
    x: List[float]


class MpcSpec(_Strict):
    Q: Matrix
    R: Matrix
    Q_T: Optional[Matrix] = None
    horizon: int = Field(ge=1)
    duration: float = Field(ge=0)
    initial_conditions: List[List[float]] = Field(min_length=1)
    x_min: Optional[List[float]] = None
    x_max: Optional[List[float]] = None
    u_min: Optional[List[float]] = None
    u_max: Optional[List[float]] = None
    reference: Optional[List[ReferenceSegment]] = None
    lmpc_baseline: bool = False
    tol: float = Field(default=1e-6, gt=0)
    max_iter: int = Field(default=20000, ge=1)


class ExperimentConfig(_Strict):
    system: Literal['duffing', 'van_der_pol']
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    output_dir: str = 'out'
    data: DataSpec
    model: ModelSpec = ModelSpec()
    sweep: Optional[SweepSpec] = None
    evaluation: EvaluationSpec = EvaluationSpec()
    mpc: Optional[MpcSpec] = None
    base_dir: str = '.'

    def resolve(self, name):
        p = Path(name)
        return p if p.is_absolute() else Path(self.base_dir) / p


# PyYAML follows YAML 1.1, where ``1e-9`` is a string; accept it as a float.
class _Loader(yaml.SafeLoader):
    pass


_Loader.add_implicit_resolver(
    'tag:yaml.org,2002:float',
    re.compile(r'''^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?(?:[eE][-+]?[0-9]+)?
                   |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$''', re.X),
    list('-+0123456789.'))


def _path(loc):
    return '.'.join(str(p) for p in loc if not str(p).startswith('function-'))


def parse_config(mapping, base_dir='.'):
    """Validate a plain mapping; raises :class:`ConfigError`."""
    if not isinstance(mapping, dict):
        raise ConfigError('top level must be a mapping')
    if 'base_dir' in mapping:
        raise ConfigError('reserved key', path='base_dir')
    try:
        cfg = ExperimentConfig.model_validate(
            {**mapping, 'base_dir': str(base_dir)})
    except ValidationError as exc:
        err = exc.errors()[0]
        msg = err['msg'].removeprefix('Value error, ')
        raise ConfigError(msg, path=_path(err['loc']) or None) from None
    for split in ('train', 'validation', 'test'):
        name = getattr(cfg.data, split + '_csv')
        if name is not None and not cfg.resolve(name).is_file():
            raise ConfigError(f'no such file {name!r}',
                              path=f'data.{split}_csv')
    return cfg


def load_config(path, overrides=None):
    """Read and validate a config file; ``overrides`` replace top-level keys."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f'cannot read {path}: {exc.strerror}') from None
    try:
        mapping = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f'{path} is not valid YAML: {exc}') from None
    if isinstance(mapping, dict) and overrides:
        mapping = {**mapping, **overrides}
    return parse_config(mapping, base_dir=path.parent)
