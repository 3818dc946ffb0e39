"""Feasible protection configurations: checks, exact counts, enumeration, geometry.

A configuration of N_M matrices is feasible for a block of N_P data and
N_FEC repair packets when the column counts add up to N_FEC, every matrix but
the last is full, and the last one holds the remaining packets with fewer
than one row of padding and at least one data packet per column.  The
restricted space additionally requires column counts to be non-increasing
and row counts non-decreasing along the matrix index.

Only the first N_M-1 matrices are free: the last matrix's columns follow from
the repair budget and its rows from the leftover packet count.  Distances and
neighborhoods therefore look at those 2*(N_M-1) coordinates only.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterator, Sequence

import numpy as np

from .codec import ProtectionConfig

log = logging.getLogger(__name__)

sys.setrecursionlimit(max(sys.getrecursionlimit(), 10_000))


def is_feasible(config: ProtectionConfig, n_data: int, n_fec: int, restricted: bool = False) -> bool:
    mats = config.matrices
    if not mats or config.n_fec != n_fec:
        return False
    full = sum(m.size for m in mats[:-1])
    last = mats[-1]
    left = n_data - full
    if not (full + last.columns * (last.rows - 1) < n_data <= full + last.size):
        return False
    if left < last.columns:
        return False
    if restricted:
        for a, b in zip(mats, mats[1:]):
            if a.columns < b.columns or a.rows > b.rows:
                return False
    return True


# -- counting ---------------------------------------------------------------

@lru_cache(maxsize=None)
def count_unrestricted(n_data: int, n_fec: int, n_matrices: int) -> int:
    """Cardinality of the unrestricted space via the double-sum recursion."""
    if n_matrices < 1 or n_fec < n_matrices or n_data < n_fec:
        return 0
    if n_matrices == 1:
        return 1
    if n_matrices == 2:
        return sum((n_data - n_fec + i) // i for i in range(1, n_fec))
    total = 0
    for i in range(1, n_fec - n_matrices + 2):
        for j in range(1, (n_data - n_fec + i) // i + 1):
            total += count_unrestricted(n_data - i * j, n_fec - i, n_matrices - 1)
    return total


@lru_cache(maxsize=None)
def _count_restricted(n: int, k: int, m: int, c_max: int, r_min: int) -> int:
    if m == 1:
        return int(k <= c_max and n >= k and -(-n // k) >= r_min)
    if m == 2:
        # last matrix: k-i columns, ceil((n-i*j)/(k-i)) >= j  <=>  j <= (n+k-i-1)//k
        total = 0
        for i in range(max(1, -(-k // 2)), min(c_max, k - 1) + 1):
            hi = min((n - k + i) // i, (n + k - i - 1) // k)
            if hi >= r_min:
                total += hi - r_min + 1
        return total
    total = 0
    for i in range(-(-k // m), min(c_max, k - m + 1) + 1):
        for j in range(r_min, (n - k + i) // i + 1):
            total += _count_restricted(n - i * j, k - i, m - 1, i, j)
    return total


def count_restricted(n_data: int, n_fec: int, n_matrices: int) -> int:
    """Cardinality of the restricted space (same constraints as the enumerator)."""
    if n_matrices < 1 or n_fec < n_matrices or n_data < n_fec:
        return 0
    return _count_restricted(n_data, n_fec, n_matrices, n_fec, 1)


@lru_cache(maxsize=None)
def _count_printed(n: int, k: int, m: int, c_max: int, r_min: int) -> int:
    if m == 1:
        return int((n - k) // k >= r_min)
    total = 0
    for i in range(k // m, min(c_max, k - m + 1) + 1):
        for j in range(r_min, (n - k + i) // i + 1):
            total += _count_printed(n - i * j, k - i, m - 1, i, j)
    return total


def count_restricted_printed(n_data: int, n_fec: int, n_matrices: int) -> int:
    """The restricted-count recursion with its published iterator bounds, taken literally.

    Kept for cross-checking only: its lower column bound floor(N_FEC/N_M)
    admits column sequences that increase, and its base case tests rows
    against floor((N_P-N_FEC)/N_FEC), so it disagrees with direct enumeration.
    """
    if n_matrices < 1 or n_fec < n_matrices:
        return 0
    return _count_printed(n_data, n_fec, n_matrices, n_fec - n_matrices + 1, 1)


def cross_check_restricted(n_data: int, n_fec: int, n_matrices: int) -> tuple[int, int]:
    enumerated = count_restricted(n_data, n_fec, n_matrices)
    printed = count_restricted_printed(n_data, n_fec, n_matrices)
    if enumerated != printed:
        log.info("restricted count (%d,%d,%d): enumeration %d, printed recursion %d; using enumeration",
                 n_data, n_fec, n_matrices, enumerated, printed)
    return enumerated, printed


# -- enumeration --------------------------------------------------------------

def iter_restricted(n_data: int, n_fec: int, n_matrices: int) -> Iterator[tuple[int, ...]]:
    """Coordinate vectors (C_1, R_1, ..., C_N, R_N) in lexicographic order."""

    def rec(n, k, m, c_max, r_min, prefix):
        if m == 1:
            if k <= c_max and n >= k:
                r = -(-n // k)
                if r >= r_min:
                    yield prefix + (k, r)
            return
        for i in range(-(-k // m), min(c_max, k - m + 1) + 1):
            for j in range(r_min, (n - k + i) // i + 1):
                yield from rec(n - i * j, k - i, m - 1, i, j, prefix + (i, j))

    if n_matrices < 1 or n_fec < n_matrices or n_data < n_fec:
        return
    yield from rec(n_data, n_fec, n_matrices, n_fec, 1, ())


def iter_unrestricted(n_data: int, n_fec: int, n_matrices: int) -> Iterator[tuple[int, ...]]:

    def rec(n, k, m, prefix):
        if m == 1:
            yield prefix + (k, -(-n // k))
            return
        for i in range(1, k - m + 2):
            for j in range(1, (n - k + i) // i + 1):
                yield from rec(n - i * j, k - i, m - 1, prefix + (i, j))

    if n_matrices < 1 or n_fec < n_matrices or n_data < n_fec:
        return
    yield from rec(n_data, n_fec, n_matrices, ())


@dataclass(frozen=True, eq=False)
class EnumeratedSpace:
    n_data: int
    n_fec: int
    n_matrices: int
    coords: np.ndarray = field(repr=False)
    c_max: tuple[int, ...] = ()
    c_min: tuple[int, ...] = ()
    r_max: tuple[int, ...] = ()
    r_min: tuple[int, ...] = ()
    d_init: float = 0.0

    @classmethod
    def from_coords(cls, n_data: int, n_fec: int, n_matrices: int, rows: Sequence[tuple[int, ...]]) -> "EnumeratedSpace":
        coords = np.array(rows, dtype=np.int64).reshape(-1, 2 * n_matrices)
        coords.setflags(write=False)
        if len(coords) == 0 or n_matrices == 1:
            return cls(n_data, n_fec, n_matrices, coords)
        free = coords[:, :2 * (n_matrices - 1)]
        hi, lo = free.max(axis=0), free.min(axis=0)
        c_max, r_max = tuple(int(v) for v in hi[0::2]), tuple(int(v) for v in hi[1::2])
        c_min, r_min = tuple(int(v) for v in lo[0::2]), tuple(int(v) for v in lo[1::2])
        d_init = math.sqrt(sum((a - b) ** 2 for a, b in zip(c_max, c_min))
                           + sum((a - b) ** 2 for a, b in zip(r_max, r_min)))
        return cls(n_data, n_fec, n_matrices, coords, c_max, c_min, r_max, r_min, d_init)

    def __len__(self) -> int:
        return len(self.coords)

    def __getitem__(self, i: int) -> ProtectionConfig:
        return ProtectionConfig.from_coords(self.coords[i])

    @cached_property
    def configs(self) -> list[ProtectionConfig]:
        return [self[i] for i in range(len(self))]

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(v) for v in row): i for i, row in enumerate(self.coords)}

    def index_of(self, config: ProtectionConfig) -> int:
        return self._index[config.coords]

    def __contains__(self, config: ProtectionConfig) -> bool:
        return config.coords in self._index

    @cached_property
    def free(self) -> np.ndarray:
        """The 2*(N_M-1) coordinates that distances are measured on."""
        return self.coords[:, :2 * (self.n_matrices - 1)]

    def squared_distances(self, i: int) -> np.ndarray:
        diff = self.free - self.free[i]
        return np.einsum("ij,ij->i", diff, diff)

    def within(self, i: int, radius: float) -> np.ndarray:
        """Boolean mask of configurations at distance <= radius from config ``i``."""
        return self.squared_distances(i) <= radius * radius + 1e-9


def enumerate_restricted(n_data: int, n_fec: int, n_matrices: int) -> EnumeratedSpace:
    return EnumeratedSpace.from_coords(n_data, n_fec, n_matrices, list(iter_restricted(n_data, n_fec, n_matrices)))


def enumerate_unrestricted(n_data: int, n_fec: int, n_matrices: int) -> EnumeratedSpace:
    return EnumeratedSpace.from_coords(n_data, n_fec, n_matrices, list(iter_unrestricted(n_data, n_fec, n_matrices)))


def distance(s1: ProtectionConfig, s2: ProtectionConfig) -> float:
    if s1.n_matrices != s2.n_matrices:
        raise ValueError("configurations with different matrix counts are not comparable")
    a, b = s1.coords[:-2], s2.coords[:-2]
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def neighborhood(space: EnumeratedSpace, s: ProtectionConfig, radius: float) -> list[ProtectionConfig]:
    mask = space.within(space.index_of(s), radius)
    return [space[i] for i in np.flatnonzero(mask)]


def sample_uniform(space: EnumeratedSpace, seed=None) -> ProtectionConfig:
    if len(space) == 0:
        raise ValueError("cannot sample from an empty space")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return space[int(rng.integers(len(space)))]


class SpaceCache:
    """Materialized restricted spaces keyed by (N_P, N_FEC, N_M).

    Block geometry is fixed for a whole session, so spaces are built once,
    ahead of the time-critical search.  Spaces above ``max_size`` are never
    materialized; ``get`` returns None for them.
    """

    def __init__(self, max_size: int = 300_000):
        self.max_size = max_size
        self._spaces: dict[tuple[int, int, int], EnumeratedSpace | None] = {}

    def count(self, n_data: int, n_fec: int, n_matrices: int) -> int:
        return count_restricted(n_data, n_fec, n_matrices)

    def get(self, n_data: int, n_fec: int, n_matrices: int) -> EnumeratedSpace | None:
        key = (n_data, n_fec, n_matrices)
        if key not in self._spaces:
            if self.count(*key) > self.max_size:
                self._spaces[key] = None
            else:
                self._spaces[key] = enumerate_restricted(*key)
        return self._spaces[key]

    def prepare(self, n_data: int, n_fec: int, max_matrices: int) -> None:
        """Build every space up to ``max_matrices`` (and warm the next count)."""
        for m in range(1, max_matrices + 1):
            if self.count(n_data, n_fec, m) > self.max_size:
                break
            self.get(n_data, n_fec, m)
        self.count(n_data, n_fec, max_matrices + 1)


DEFAULT_SPACES = SpaceCache()
