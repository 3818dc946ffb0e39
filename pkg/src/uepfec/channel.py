"""Simplified Gilbert-Elliott packet-loss channel.

Two-state Markov chain: every packet sent in the bad state is lost, every
packet sent in the good state arrives.  The chain is fully determined by the
long-run loss rate and the mean burst length.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

GOOD, BAD = 0, 1


@dataclass(frozen=True)
class ChannelParams:
    plr: float
    abl_packets: float
    p_good_to_bad: float
    p_bad_to_good: float

    @property
    def transition(self) -> np.ndarray:
        p, q = self.p_good_to_bad, self.p_bad_to_good
        return np.array([[1.0 - p, p], [q, 1.0 - q]])

    @property
    def stationary(self) -> np.ndarray:
        total = self.p_good_to_bad + self.p_bad_to_good
        pb = self.p_good_to_bad / total
        return np.array([1.0 - pb, pb])

    def transition_power(self, gap: int) -> np.ndarray:
        return _matrix_power(self.p_good_to_bad, self.p_bad_to_good, gap)


@lru_cache(maxsize=4096)
def _matrix_power(p: float, q: float, gap: int) -> np.ndarray:
    m = np.array([[1.0 - p, p], [q, 1.0 - q]])
    out = np.linalg.matrix_power(m, gap)
    out.setflags(write=False)
    return out


def derive_ge(plr: float, abl_packets: float) -> ChannelParams:
    """Chain parameters matching a loss rate and mean burst length (in packets).

    ``plr == 0`` is accepted as the lossless limit (the chain never leaves the
    good state).
    """
    if not 0 <= plr < 1:
        raise ValueError(f"plr must lie in [0, 1), got {plr}")
    if abl_packets < 1:
        raise ValueError(f"abl_packets must be >= 1, got {abl_packets}")
    q = 1.0 / abl_packets
    p = plr * q / (1.0 - plr)
    return ChannelParams(plr=plr, abl_packets=abl_packets, p_good_to_bad=p, p_bad_to_good=q)


def abl_packets_from_time(abl_seconds: float, bitrate_bps: float, code_rate: Fraction | float,
                          payload_bytes: int) -> float:
    # bursts hit the on-wire flow, which carries repair packets as well
    wire_rate = bitrate_bps / float(code_rate) / (8 * payload_bytes)
    return max(1.0, abl_seconds * wire_rate)


@dataclass(frozen=True)
class LossTrace:
    losses: np.ndarray

    def __len__(self) -> int:
        return len(self.losses)

    @classmethod
    def from_bools(cls, values) -> "LossTrace":
        return cls(np.asarray(values, dtype=bool))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_losses(params: ChannelParams, n: int, seed=None) -> LossTrace:
    """One trace of ``n`` packets, starting from the stationary distribution.

    Sampled as alternating geometric sojourns, which is exact for the chain
    and avoids a per-packet Python loop.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    losses = np.zeros(n, dtype=bool)
    if params.p_good_to_bad == 0.0:
        return LossTrace(losses)
    state = BAD if rng.random() < params.plr else GOOD
    pos = 0
    while pos < n:
        if state == GOOD:
            pos += int(rng.geometric(params.p_good_to_bad))
            state = BAD
        else:
            run = int(rng.geometric(params.p_bad_to_good))
            losses[pos:pos + run] = True
            pos += run
            state = GOOD
    return LossTrace(losses)


def simulate_loss_matrix(params: ChannelParams, trials: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """``trials`` independent traces of length ``n`` as a (trials, n) bool array."""
    out = np.zeros((trials, n), dtype=bool)
    if params.p_good_to_bad == 0.0:
        return out
    u = rng.random((trials, n))
    bad = u[:, 0] < params.plr
    out[:, 0] = bad
    p, q = params.p_good_to_bad, params.p_bad_to_good
    for i in range(1, n):
        bad = np.where(bad, u[:, i] >= q, u[:, i] < p)
        out[:, i] = bad
    return out


def loss_runs(losses: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of losses as (start, length) pairs."""
    x = np.concatenate(([False], np.asarray(losses, dtype=bool), [False])).astype(np.int8)
    d = np.diff(x)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


def empirical_stats(trace: LossTrace) -> tuple[float, float]:
    losses = np.asarray(trace.losses, dtype=bool)
    if losses.size == 0:
        raise ValueError("empty trace")
    runs = loss_runs(losses)
    plr = float(losses.mean())
    abl = float(np.mean([r[1] for r in runs])) if runs else 0.0
    return plr, abl


def trace_to_rle_csv(trace: LossTrace) -> str:
    buf = io.StringIO()
    buf.write("start,length\n")
    for s, length in loss_runs(trace.losses):
        buf.write(f"{s},{length}\n")
    return buf.getvalue()


def trace_from_rle_csv(text: str, n: int) -> LossTrace:
    losses = np.zeros(n, dtype=bool)
    for line in text.strip().splitlines()[1:]:
        s, length = (int(v) for v in line.split(","))
        losses[s:s + length] = True
    return LossTrace(losses)
