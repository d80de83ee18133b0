"""Snapshot datasets, CSV I/O, scaling, inducing points and error metrics.

Random draws use numpy's PCG64 bit generator (``numpy.random.default_rng``)
whose stream is fixed across platforms for a given seed.
"""

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, check_same_rows
from .exceptions import InputError, ParseError

__all__ = [
    'SnapshotDataset', 'InducingSet', 'Normalizer', 'load_csv', 'write_csv',
    'dumps_csv', 'subsample_uniform', 'split_trajectories', 'rmse', 'nrmse',
    'make_rng',
]


def _flatten(seed):
    for s in seed:
        if isinstance(s, tuple):
            yield from _flatten(s)
        else:
            yield int(s)


def make_rng(seed):
    """Seeded PCG64 generator; ``seed`` is an int or a (nested) tuple of
    ints."""
    if isinstance(seed, tuple):
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(
            list(_flatten(seed)))))
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class SnapshotDataset:
    """Rows of ``(x, u, x_plus)`` triples.

    ``segments`` optionally records trajectory lengths (in rows) so that
    trajectories can be recovered after concatenation.
    """

    X: np.ndarray
    U: np.ndarray
    X_plus: np.ndarray
    segments: tuple = None

    def __post_init__(self):
        X = as_matrix(self.X, 'X')
        X_plus = as_matrix(self.X_plus, 'X_plus', n_cols=X.shape[1])
        U = as_matrix(self.U, 'U')
        check_same_rows(X=X, U=U, X_plus=X_plus)
        for name, arr in (('X', X), ('U', U), ('X_plus', X_plus)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.segments is not None:
            segs = tuple(int(s) for s in self.segments)
            if any(s < 1 for s in segs) or sum(segs) != X.shape[0]:
                raise InputError(
                    f'segment lengths {segs} do not partition {X.shape[0]} '
                    'rows')
            object.__setattr__(self, 'segments', segs)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_x(self):
        return self.X.shape[1]

    @property
    def n_u(self):
        return self.U.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, SnapshotDataset):
            return NotImplemented
        return (self.segments == other.segments
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.U, other.U)
                and np.array_equal(self.X_plus, other.X_plus))

    __hash__ = None

    def segment_bounds(self):
        """``(start, stop)`` row ranges, one per trajectory."""
        segs = self.segments if self.segments is not None else (self.n,)
        stops = np.cumsum(segs)
        return [(int(b - s), int(b)) for s, b in zip(segs, stops)]

    def trajectories(self):
        """Yield one sub-dataset per recorded trajectory."""
        for start, stop in self.segment_bounds():
            yield SnapshotDataset(self.X[start:stop], self.U[start:stop],
                                  self.X_plus[start:stop], (stop - start,))

    def take(self, indices):
        """Rows at ``indices`` (segment structure is dropped)."""
        idx = np.asarray(indices, dtype=np.intp)
        return SnapshotDataset(self.X[idx], self.U[idx], self.X_plus[idx])

    @staticmethod
    def concatenate(datasets):
        datasets = list(datasets)
        if not datasets:
            raise InputError('nothing to concatenate')
        segs = []
        for ds in datasets:
            segs.extend(ds.segments if ds.segments is not None else (ds.n,))
        return SnapshotDataset(np.vstack([d.X for d in datasets]),
                               np.vstack([d.U for d in datasets]),
                               np.vstack([d.X_plus for d in datasets]),
                               tuple(segs))


@dataclass(frozen=True, eq=False)
class InducingSet:
    """Subsampled rows of a parent dataset (Nystrom centres)."""

    indices: np.ndarray
    X: np.ndarray
    U: np.ndarray
    X_plus: np.ndarray

    @property
    def m(self):
        return self.indices.size

    @classmethod
    def from_indices(cls, ds, indices):
        idx = np.asarray(indices, dtype=np.intp).ravel()
        if idx.size < 1:
            raise InputError('inducing set must be non-empty')
        if np.unique(idx).size != idx.size:
            raise InputError('inducing indices must be distinct')
        if idx.min() < 0 or idx.max() >= ds.n:
            raise InputError(f'inducing indices out of range [0, {ds.n})')
        return cls(idx, ds.X[idx].copy(), ds.U[idx].copy(),
                   ds.X_plus[idx].copy())


def subsample_uniform(ds, m, seed):
    """Draw ``m`` distinct rows uniformly without replacement."""
    m = int(m)
    if not 1 <= m <= ds.n:
        raise InputError(f'need 1 <= m <= n = {ds.n}, got m = {m}')
    rng = make_rng(seed)
    idx = np.sort(rng.choice(ds.n, size=m, replace=False))
    return InducingSet.from_indices(ds, idx)


def split_trajectories(ds, fractions, seed):
    """Randomly partition whole trajectories into groups.

    ``fractions`` are relative sizes, e.g. ``(0.6, 0.2, 0.2)``; every group
    gets at least one trajectory.
    """
    trajs = list(ds.trajectories())
    k = len(fractions)
    if len(trajs) < k:
        raise InputError(f'{len(trajs)} trajectories cannot fill {k} splits')
    order = make_rng(seed).permutation(len(trajs))
    w = np.asarray(fractions, dtype=float)
    counts = np.maximum(1, np.floor(w / w.sum() * len(trajs)).astype(int))
    counts[0] += len(trajs) - counts.sum()
    out, pos = [], 0
    for c in counts:
        out.append(SnapshotDataset.concatenate(
            trajs[i] for i in order[pos:pos + c]))
        pos += c
    return out


@dataclass
class Normalizer:
    """Per-column affine scaling ``(v - shift) / scale`` of states and inputs.

    ``fit`` uses max-abs scaling, so every fitted column ends in [-1, 1].
    """

    x_shift: np.ndarray = field(default=None)
    x_scale: np.ndarray = field(default=None)
    u_shift: np.ndarray = field(default=None)
    u_scale: np.ndarray = field(default=None)

    def fit(self, ds):
        xs = np.max(np.abs(np.vstack([ds.X, ds.X_plus])), axis=0)
        us = np.max(np.abs(ds.U), axis=0)
        self.x_shift = np.zeros(ds.n_x)
        self.u_shift = np.zeros(ds.n_u)
        self.x_scale = np.where(xs > 0, xs, 1.0)
        self.u_scale = np.where(us > 0, us, 1.0)
        return self

    def transform(self, ds):
        self._check_fitted()
        return SnapshotDataset(self.transform_x(ds.X), self.transform_u(ds.U),
                               self.transform_x(ds.X_plus), ds.segments)

    def fit_transform(self, ds):
        return self.fit(ds).transform(ds)

    def inverse_transform(self, ds):
        self._check_fitted()
        return SnapshotDataset(self.inverse_x(ds.X), self.inverse_u(ds.U),
                               self.inverse_x(ds.X_plus), ds.segments)

    def transform_x(self, X):
        return (np.asarray(X) - self.x_shift) / self.x_scale

    def transform_u(self, U):
        return (np.asarray(U) - self.u_shift) / self.u_scale

    def inverse_x(self, X):
        return np.asarray(X) * self.x_scale + self.x_shift

    def inverse_u(self, U):
        return np.asarray(U) * self.u_scale + self.u_shift

    def _check_fitted(self):
        if self.x_scale is None:
            raise InputError('Normalizer is not fitted')


def _column_names(n_x, n_u):
    return ([f'x_{i + 1}' for i in range(n_x)]
            + [f'u_{i + 1}' for i in range(n_u)]
            + [f'xp_{i + 1}' for i in range(n_x)])


def dumps_csv(ds, comment=None):
    """CSV text of ``ds`` with shortest round-trip float formatting."""
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f'# {line}\n')
    writer = csv.writer(buf, lineterminator='\n')
    header = _column_names(ds.n_x, ds.n_u)
    with_traj = ds.segments is not None
    if with_traj:
        header.append('traj_id')
    writer.writerow(header)
    data = np.hstack([ds.X, ds.U, ds.X_plus])
    traj_ids = np.repeat(np.arange(len(ds.segments)), ds.segments) \
        if with_traj else None
    for i, row in enumerate(data):
        cells = [repr(float(v)) for v in row]
        if with_traj:
            cells.append(str(traj_ids[i]))
        writer.writerow(cells)
    return buf.getvalue()


def write_csv(ds, path, comment=None):
    dirname = os.path.dirname(os.fspath(path))
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        fh.write(dumps_csv(ds, comment))
    return path


def _parse_header(names, line_no, n_x, n_u):
    seen = set()
    for name in names:
        if name in seen:
            raise ParseError(f'duplicate column {name!r}', line_no)
        seen.add(name)
    groups = {'x': [], 'u': [], 'xp': []}
    for name in names:
        if name == 'traj_id':
            continue
        prefix, _, idx = name.rpartition('_')
        if prefix not in groups or not idx.isdigit() or int(idx) < 1:
            raise ParseError(f'unknown column {name!r}', line_no)
        groups[prefix].append(int(idx))
    if n_x is None:
        n_x = max(groups['x'] + groups['xp'], default=0)
    if n_u is None:
        n_u = max(groups['u'], default=0)
    expected = _column_names(n_x, n_u)
    for name in expected:
        if name not in seen:
            raise ParseError(f'missing column {name!r}', line_no)
    extra = seen - set(expected) - {'traj_id'}
    if extra:
        raise ParseError(f'unexpected columns {sorted(extra)}', line_no)
    if n_x < 1 or n_u < 1:
        raise ParseError('need at least one state and one input column',
                         line_no)
    return n_x, n_u, expected


def load_csv(path, n_x=None, n_u=None):
    """Read a snapshot CSV (``x_i``, ``u_i``, ``xp_i``, optional ``traj_id``).

    ``n_x`` / ``n_u`` enforce the expected dimensions when given. Lines
    starting with ``#`` are ignored.
    """
    with open(path, encoding='utf-8', newline='') as fh:
        lines = fh.read().splitlines()
    header = None
    rows, traj, line_nos = [], [], []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        cells = next(csv.reader([line]))
        if header is None:
            header = [c.strip() for c in cells]
            n_x, n_u, expected = _parse_header(header, line_no, n_x, n_u)
            pos = [header.index(c) for c in expected]
            traj_pos = header.index('traj_id') if 'traj_id' in header else None
            continue
        if len(cells) != len(header):
            raise ParseError(
                f'expected {len(header)} cells, found {len(cells)}', line_no)
        try:
            rows.append([float(cells[p]) for p in pos])
        except ValueError as exc:
            raise ParseError(f'non-numeric cell ({exc})', line_no) from None
        if not np.all(np.isfinite(rows[-1])):
            raise ParseError('non-finite cell', line_no)
        if traj_pos is not None:
            traj.append(cells[traj_pos].strip())
        line_nos.append(line_no)
    if header is None:
        raise ParseError('file has no header')
    if not rows:
        raise ParseError('file has no data rows')
    data = np.array(rows)
    segments = None
    if traj_pos is not None:
        segments, run = [], 1
        for a, b in zip(traj[:-1], traj[1:]):
            if a == b:
                run += 1
            else:
                segments.append(run)
                run = 1
        segments.append(run)
    return SnapshotDataset(data[:, :n_x], data[:, n_x:n_x + n_u],
                           data[:, n_x + n_u:], segments)


def rmse(Y, Y_hat):
    """``sqrt(mean_t ||y_t - y_hat_t||^2)``."""
    Y = np.asarray(Y, dtype=float)
    Y_hat = np.asarray(Y_hat, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y_hat.ndim == 1:
        Y_hat = Y_hat[:, None]
    if Y.shape != Y_hat.shape:
        raise InputError(f'shape mismatch: {Y.shape} vs {Y_hat.shape}')
    if Y.shape[0] < 1:
        raise InputError('rmse needs at least one sample')
    return float(np.sqrt(np.mean(np.sum((Y - Y_hat) ** 2, axis=1))))


def nrmse(Y, Y_hat):
    """RMSE divided by the RMS of the mean-centred reference."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    ref = rmse(Y, np.broadcast_to(Y.mean(axis=0), Y.shape))
    if ref == 0.0:
        raise InputError('reference has zero variance')
    return rmse(Y, Y_hat) / ref
