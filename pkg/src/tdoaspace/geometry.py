"""Sensor arrays and the range-difference (TDOA) forward maps.

TDOAs are expressed as range differences in meters (unit propagation speed);
any conversion from seconds happens at the I/O boundary.  For n+1 sensors the
q = n(n+1)/2 pairs (j, i), j > i, are kept in a fixed canonical order: the n
reference pairs (1,0)..(n,0) first, then the remaining pairs sorted
lexicographically by (i, j).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

# Sensors closer than this are treated as coincident (meters).
EPS_POS = 1e-9


def num_pairs(n: int) -> int:
    return n * (n + 1) // 2


def order_from_pairs(q: int) -> int:
    """Recover n from q = n(n+1)/2."""
    n = int(round((np.sqrt(8 * q + 1) - 1) / 2))
    if num_pairs(n) != q:
        raise ValueError(f"{q} is not a valid pair count n(n+1)/2")
    return n


@lru_cache(maxsize=None)
def canonical_pairs(n: int) -> tuple[tuple[int, int], ...]:
    """Canonical ordering of the q sensor pairs (j, i) with j > i."""
    if n < 2:
        raise ValueError("need at least 3 sensors (n >= 2)")
    pairs = [(j, 0) for j in range(1, n + 1)]
    pairs += [(j, i) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    return tuple(pairs)


@lru_cache(maxsize=None)
def pair_index_map(n: int) -> dict[tuple[int, int], int]:
    return {pair: k for k, pair in enumerate(canonical_pairs(n))}


class SensorArray:
    """An ordered set of n+1 sensor positions in 2D or 3D.

    Positions are frozen after construction; the pair ordering of the
    associated TDOA space is exposed through ``pairs``.
    """

    def __init__(self, positions):
        pos = np.atleast_2d(np.asarray(positions, dtype=float)).copy()
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError("positions must be an (n+1, 2) or (n+1, 3) array")
        if pos.shape[0] < 3:
            raise ValueError("need at least 3 sensors (n >= 2)")
        if not np.all(np.isfinite(pos)):
            raise ValueError("sensor positions must be finite")
        diffs = pos[:, None, :] - pos[None, :, :]
        dists = np.linalg.norm(diffs, axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() <= EPS_POS:
            raise ValueError("two sensors coincide (pairwise distance <= 1e-9 m)")
        pos.flags.writeable = False
        self.positions = pos
        self.n = pos.shape[0] - 1
        self.dim = pos.shape[1]
        self.q = num_pairs(self.n)
        self.pairs = canonical_pairs(self.n)
        pj, pi = zip(*self.pairs)
        self._j = np.array(pj)
        self._i = np.array(pi)

    @property
    def pair_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays (j, i) of the canonical pair ordering."""
        return self._j, self._i

    def pair_position(self, pair: tuple[int, int]) -> int:
        """Flat index of a pair in the canonical ordering."""
        try:
            return pair_index_map(self.n)[tuple(pair)]
        except KeyError:
            raise ValueError(f"{pair} is not a valid (j, i) pair for n={self.n}")

    def translated(self, t) -> "SensorArray":
        return SensorArray(self.positions + np.asarray(t, dtype=float))

    def __repr__(self):
        return f"SensorArray(n={self.n}, dim={self.dim})"


def cross_array(arm: float = 0.5) -> SensorArray:
    """The 7-sensor compact cross: center plus +/-arm on each 3D axis."""
    a = float(arm)
    return SensorArray([
        (0.0, 0.0, 0.0),
        (a, 0.0, 0.0), (-a, 0.0, 0.0),
        (0.0, a, 0.0), (0.0, -a, 0.0),
        (0.0, 0.0, a), (0.0, 0.0, -a),
    ])


def _check_source(array: SensorArray, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (array.dim,):
        raise ValueError(f"source must have shape ({array.dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("source position must be finite")
    return x


def sensor_distances(array: SensorArray, x) -> np.ndarray:
    x = _check_source(array, x)
    return np.linalg.norm(x - array.positions, axis=1)


def tdoa_full(array: SensorArray, x) -> np.ndarray:
    """Full TDOA vector: component (j, i) is ||x - m_j|| - ||x - m_i||."""
    d = sensor_distances(array, x)
    j, i = array.pair_indices
    return d[j] - d[i]


def tdoa_reduced(array: SensorArray, x, ref: int = 0) -> np.ndarray:
    """The n TDOAs relative to a reference sensor: entry for sensor k is
    ||x - m_k|| - ||x - m_ref||, for k != ref in increasing k."""
    if not 0 <= ref <= array.n:
        raise ValueError(f"reference index {ref} out of range 0..{array.n}")
    d = sensor_distances(array, x)
    others = np.delete(np.arange(array.n + 1), ref)
    return d[others] - d[ref]


def tdoa_jacobian(array: SensorArray, x) -> np.ndarray:
    """Jacobian of tdoa_full at x: row (j, i) is u_j - u_i with the unit
    vectors u_k = (x - m_k)/||x - m_k||.  Undefined at sensor positions."""
    x = _check_source(array, x)
    rel = x - array.positions
    d = np.linalg.norm(rel, axis=1)
    if d.min() <= EPS_POS:
        raise ValueError("source coincides with a sensor; TDOA map not differentiable")
    units = rel / d[:, None]
    j, i = array.pair_indices
    return units[j] - units[i]
