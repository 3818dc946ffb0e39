"""Independent reference implementations used only by the tests."""

from itertools import product

import numpy as np


def ge_power(p: float, q: float, n: int) -> np.ndarray:
    """n-step transition matrix of the two-state chain in closed form."""
    s = p + q
    lam = (1.0 - s) ** n
    return np.array([[q + p * lam, p - p * lam], [q - q * lam, p + q * lam]]) / s


def markov_by_enumeration(p: float, q: float, positions, target: int) -> float:
    """P(target lost and some other member lost), summing all 2^k loss patterns."""
    pi = np.array([q, p]) / (p + q)
    total = 0.0
    for pattern in product((0, 1), repeat=len(positions)):
        if not pattern[target] or sum(pattern) < 2:
            continue
        prob = pi[pattern[0]]
        for a in range(1, len(positions)):
            prob *= ge_power(p, q, positions[a] - positions[a - 1])[pattern[a - 1], pattern[a]]
        total += prob
    return total


def gf2_recoverable(groups, lost):
    """Lost members determined by the received parity equations (Gaussian elimination over GF(2)).

    ``groups`` lists member tuples whose parity was received; ``lost`` the
    erased data members.  Returns the set of lost members whose value is
    fixed by the equations.
    """
    lost = sorted(lost)
    index = {s: i for i, s in enumerate(lost)}
    rows = []
    for members in groups:
        mask = 0
        for s in members:
            if s in index:
                mask |= 1 << index[s]
        if mask:
            rows.append(mask)
    basis = {}
    for r in rows:
        while r:
            top = r.bit_length() - 1
            if top in basis:
                r ^= basis[top]
            else:
                basis[top] = r
                break

    def in_span(v):
        while v:
            top = v.bit_length() - 1
            if top not in basis:
                return False
            v ^= basis[top]
        return True

    return {s for s in lost if in_span(1 << index[s])}


def peel_vs_gf2(columns: int, rows: int, stop_at_first: bool = False):
    """Compare fixpoint peeling with GF(2) elimination over every loss pattern of one matrix.

    Bits 0..C*R-1 are data cells (row-major), then C column repairs, then R
    row repairs.  Returns (patterns checked, mismatching patterns).
    """
    from uepfec.codec import _peel

    n = columns * rows
    col = [tuple(r * columns + c for r in range(rows)) for c in range(columns)]
    row = [tuple(r * columns + c for c in range(columns)) for r in range(rows)]
    groups = col + row
    n_bits = n + columns + rows
    mismatches = []
    checked = 0
    for pattern in range(1 << n_bits):
        checked += 1
        lost = {i for i in range(n) if pattern >> i & 1}
        if not lost:
            continue
        alive = [(g, g) for k, g in enumerate(groups) if not pattern >> (n + k) & 1]
        peeled = _peel(alive, lost)
        exact = gf2_recoverable([g for _, g in alive], lost)
        if peeled != exact:
            mismatches.append(pattern)
            if stop_at_first:
                break
    return checked, mismatches
