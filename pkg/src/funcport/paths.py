"""Time grids, Wiener path simulation and path surgery.

Paths are stored by node levels, shape ``(K + 1, n)``; increments are
derived on demand. All "time" arguments of the surgery helpers are node
indices ``k`` into the grid; use :meth:`TimeGrid.index_of` to convert a
time to a node (it refuses off-grid times rather than interpolating).

Random numbers come from a counter-based generator (Philox) driven through
the inverse normal CDF, so every draw has a fixed address
``(seed, stream key, offset)``.  Member ``j`` of an ensemble occupies a fixed
slice of its stream, which makes generation order and chunking irrelevant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from scipy.special import ndtri

ENSEMBLE_TAG = 0x57  # stream tag for outer Wiener ensembles
_CHUNK_DRAWS = 1 << 22


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_K = T``."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be an integer >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon
        t.setflags(write=False)
        return t

    def index_of(self, t: float) -> int:
        """Node index of time ``t``; raises ``ValueError`` if ``t`` is off-grid."""
        k = int(round(t / self.dt))
        if not 0 <= k <= self.n_steps or abs(self.times[k] - t) > 1e-9 * self.dt:
            raise ValueError(f"time {t!r} is not a node of {self}")
        return k

    def check_node(self, k: int) -> int:
        if int(k) != k or not 0 <= k <= self.n_steps:
            raise ValueError(f"node index {k!r} outside 0..{self.n_steps}")
        return int(k)

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n_steps % factor:
            raise ValueError(f"cannot coarsen {self.n_steps} steps by {factor}")
        return TimeGrid(self.horizon, self.n_steps // factor)


def _stream_key(seed: int, stream: Sequence[int]) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=[int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return ss.generate_state(2, np.uint64)


def gaussian_draws(seed: int, stream: Sequence[int], n: int, offset: int = 0) -> np.ndarray:
    """Standard normals at addresses ``offset .. offset + n`` of stream ``(seed, *stream)``.

    ``offset`` must be a multiple of 4 (one Philox counter block).
    """
    if offset % 4:
        raise ValueError("offset must be a multiple of 4")
    bitgen = np.random.Philox(key=_stream_key(seed, stream))
    if offset:
        bitgen.advance(offset // 4)
    raw = bitgen.random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def _padded(n: int) -> int:
    return -(-n // 4) * 4


@dataclass(frozen=True, eq=False)
class Path:
    """One n-dimensional trajectory recorded at the nodes of ``grid``.

    ``path_id`` is the stream index the path was drawn from; surgery keeps it,
    which is what lets inner simulations reuse their randomness on bumped
    copies of the same path.
    """

    grid: TimeGrid
    values: np.ndarray
    path_id: int | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"values must have shape ({self.grid.n_steps + 1}, n), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        """``(K, n)`` array whose row ``k`` is ``w(t_{k+1}) - w(t_k)``."""
        return np.diff(self.values, axis=0)

    def __eq__(self, other):
        if not isinstance(other, Path):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    grid: TimeGrid
    values: np.ndarray  # (N, K + 1, n)
    seed: int | None = None
    stream_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[1] != self.grid.n_steps + 1 or v.shape[0] < 1:
            raise ValueError(f"ensemble values must be (N>=1, K+1, n), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        ids = np.arange(v.shape[0]) if self.stream_ids is None else np.asarray(self.stream_ids)
        if ids.shape != (v.shape[0],):
            raise ValueError("one stream id per member required")
        object.__setattr__(self, "stream_ids", ids)

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, j: int) -> Path:
        return Path(self.grid, self.values[j], path_id=int(self.stream_ids[j]))

    def __iter__(self) -> Iterator[Path]:
        return (self[j] for j in range(len(self)))

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def coarsen(self, factor: int) -> "PathEnsemble":
        """Same trajectories observed on every ``factor``-th node."""
        grid = self.grid.coarsen(factor)
        return PathEnsemble(grid, self.values[:, ::factor], self.seed, self.stream_ids)

    def to_csv(self, filename) -> None:
        n = self.dim
        with open(filename, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path_id", "node_index", "time"] + [f"w_{i + 1}" for i in range(n)])
            for j, pid in enumerate(self.stream_ids):
                for k, t in enumerate(self.grid.times):
                    w.writerow([int(pid), k, repr(float(t))]
                               + [repr(float(x)) for x in self.values[j, k]])


def simulate_brownian(grid: TimeGrid, dim: int, n_paths: int, seed: int,
                      tag: int = ENSEMBLE_TAG, first: int = 0) -> PathEnsemble:
    """Draw ``n_paths`` Wiener paths; member ``j`` uses stream ``(seed, tag)`` at slot ``first + j``."""
    if dim < 1 or n_paths < 1:
        raise ValueError("dim and n_paths must be positive")
    K = grid.n_steps
    slot = _padded(K * dim)
    out = np.zeros((n_paths, K + 1, dim))
    per_chunk = max(1, _CHUNK_DRAWS // slot)
    scale = np.sqrt(grid.dt)
    for a in range(0, n_paths, per_chunk):
        b = min(n_paths, a + per_chunk)
        z = gaussian_draws(seed, (tag,), (b - a) * slot, offset=(first + a) * slot)
        dw = z.reshape(b - a, slot)[:, :K * dim].reshape(b - a, K, dim) * scale
        np.cumsum(dw, axis=1, out=out[a:b, 1:])
    return PathEnsemble(grid, out, seed, np.arange(first, first + n_paths))


def stop_path(path: Path, k: int) -> Path:
    """``w_t(s) = w(t ^ s)`` with ``t`` the node ``k``."""
    k = path.grid.check_node(k)
    v = path.values.copy()
    v[k + 1:] = v[k]
    return Path(path.grid, v, path.path_id)


def bump_path(path: Path, k: int, i: int, h: float) -> Path:
    """Add ``h`` to coordinate ``i`` (0-based) at every node ``>= k``."""
    k = path.grid.check_node(k)
    if not 0 <= i < path.dim:
        raise ValueError(f"coordinate {i} outside 0..{path.dim - 1}")
    v = path.values.copy()
    v[k:, i] += h
    return Path(path.grid, v, path.path_id)


def extend_path(history: Path, k: int, increments: np.ndarray) -> Path:
    """Continue ``history`` (stopped at node ``k``) with the given increments on ``(t_k, T]``."""
    k = history.grid.check_node(k)
    inc = np.asarray(increments, dtype=np.float64)
    if inc.ndim == 1:
        inc = inc[:, None]
    if inc.shape != (history.grid.n_steps - k, history.dim):
        raise ValueError(
            f"increment block must be ({history.grid.n_steps - k}, {history.dim}), got {inc.shape}")
    v = history.values.copy()
    v[k + 1:] = v[k] + np.cumsum(inc, axis=0)
    return Path(history.grid, v, history.path_id)


def extend_levels(prefix: np.ndarray, block: np.ndarray) -> np.ndarray:
    """Batched :func:`extend_path` on raw arrays.

    ``prefix`` holds levels at nodes ``0..k`` (shape ``(k + 1, n)``); ``block``
    has shape ``(m, K - k, n)``.  Returns ``(m, K + 1, n)`` levels.
    """
    m, steps, n = block.shape
    k1 = prefix.shape[0]
    out = np.empty((m, k1 + steps, n))
    out[:, :k1] = prefix
    np.cumsum(block, axis=1, out=out[:, k1:])
    out[:, k1:] += prefix[-1]
    return out
