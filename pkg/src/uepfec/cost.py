"""Expected distortion of a protection configuration.

D_T = sum_p D_p * P_p, where P_p is the probability that data packet p is
lost and cannot be rebuilt.  With column repairs only, p is rebuilt iff it is
the only missing member of its column (repair included), so P_p is the
probability that p and at least one column peer are both lost.  By linearity
of expectation no independence between columns is needed for the sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .channel import BAD, ChannelParams, simulate_loss_matrix
from .codec import ColumnLayout, ProtectionConfig, assign_packets, decode_batch, rank_packets
from .space import is_feasible
from .stream import ProtectionBlock

MODES = ("iid", "markov", "monte_carlo")
MC_CHUNK = 2048


@dataclass(frozen=True)
class CostEvaluator:
    mode: str
    channel: ChannelParams
    trials: int = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "monte_carlo" and self.trials < 1:
            raise ValueError("monte_carlo mode needs trials >= 1")


def p_loss_iid(plr: float, column_peers: int) -> float:
    """P(lost and at least one of ``column_peers`` peers lost) under independent losses."""
    return plr * (1.0 - (1.0 - plr) ** column_peers)


def p_loss_markov(channel: ChannelParams, member_positions: Sequence[int], target_index: int) -> float:
    """Exact P(target lost and some other member lost) on the Gilbert-Elliott chain.

    Forward pass over the members with every peer forced to arrive and the
    target forced lost; that joint probability is subtracted from P(target lost).
    """
    positions = list(member_positions)
    if any(b <= a for a, b in zip(positions, positions[1:])):
        raise ValueError("member positions must be strictly increasing")
    if channel.p_good_to_bad == 0.0:
        return 0.0
    alpha = channel.stationary.copy()
    for k, pos in enumerate(positions):
        if k > 0:
            alpha = alpha @ channel.transition_power(pos - positions[k - 1])
        if k == target_index:
            alpha[1 - BAD] = 0.0
        else:
            alpha[BAD] = 0.0
    only_target = float(alpha.sum())
    return max(0.0, float(channel.stationary[BAD]) - only_target)


def column_loss_markov(channel: ChannelParams, member_positions: Sequence[int]) -> np.ndarray:
    """``p_loss_markov`` for every member of one column in a single forward/backward sweep.

    fwd[k] is the state distribution at member k with all earlier members
    received; bwd[k] is the chance that all later members arrive given the
    state at member k.  Target k is the only loss with probability
    fwd[k][BAD] * bwd[k][BAD].
    """
    pos = np.asarray(member_positions, dtype=np.int64)
    n = len(pos)
    if np.any(np.diff(pos) <= 0):
        raise ValueError("member positions must be strictly increasing")
    if channel.p_good_to_bad == 0.0:
        return np.zeros(n)
    good = 1 - BAD
    fwd = np.empty((n, 2))
    fwd[0] = channel.stationary
    for k in range(1, n):
        keep = np.zeros(2)
        keep[good] = fwd[k - 1][good]
        fwd[k] = keep @ channel.transition_power(int(pos[k] - pos[k - 1]))
    bwd = np.empty((n, 2))
    bwd[-1] = 1.0
    for k in range(n - 2, -1, -1):
        ahead = np.zeros(2)
        ahead[good] = bwd[k + 1][good]
        bwd[k] = channel.transition_power(int(pos[k + 1] - pos[k])) @ ahead
    only_target = fwd[:, BAD] * bwd[:, BAD]
    return np.maximum(0.0, float(channel.stationary[BAD]) - only_target)


def _column_sizes(columns: int, n_members: int) -> np.ndarray:
    base, extra = divmod(n_members, columns)
    return np.array([base + (1 if c < extra else 0) for c in range(columns)])


@lru_cache(maxsize=65536)
def _profile(mode: str, plr: float, p: float, q: float, abl: float, columns: int, n_members: int) -> np.ndarray:
    sizes = _column_sizes(columns, n_members)
    col = np.arange(n_members) % columns
    if mode == "iid":
        per_col = np.array([p_loss_iid(plr, int(s)) for s in sizes])
        out = per_col[col]
    else:
        channel = ChannelParams(plr, abl, p, q)
        out = np.empty(n_members)
        for c in range(columns):
            # matrix-local layout: data contiguous in row-major order, repair c at n + c
            members = list(range(c, n_members, columns)) + [n_members + c]
            out[c::columns] = column_loss_markov(channel, members)[:-1]
    out.setflags(write=False)
    return out


def loss_profile(evaluator: CostEvaluator, columns: int, n_members: int) -> np.ndarray:
    """P_p for each row-major slot of a matrix with ``n_members`` data packets."""
    ch = evaluator.channel
    mode = "iid" if evaluator.mode == "iid" else "markov"
    return _profile(mode, ch.plr, ch.p_good_to_bad, ch.p_bad_to_good, ch.abl_packets, columns, n_members)


class BlockCost:
    """Fast D_T evaluation for many configurations of one block.

    Weight segments (a rank range re-sorted by seq) and loss profiles are
    cached, so one evaluation is a handful of dot products.
    """

    def __init__(self, block: ProtectionBlock, evaluator: CostEvaluator):
        self.block = block
        self.evaluator = evaluator
        self._weights = block.weights
        self._seqs = np.array(block.seqs)
        self._ranked = np.array(rank_packets(block), dtype=np.int64)
        self._segments: dict[tuple[int, int], np.ndarray] = {}
        self.evaluations = 0

    def segment(self, start: int, stop: int) -> np.ndarray:
        seg = self._segments.get((start, stop))
        if seg is None:
            if len(self._segments) > 200_000:
                self._segments.clear()
            idx = self._ranked[start:stop]
            seg = self._weights[idx[np.argsort(self._seqs[idx], kind="stable")]]
            self._segments[(start, stop)] = seg
        return seg

    def __call__(self, config: ProtectionConfig | Sequence[int]) -> float:
        coords = config.coords if isinstance(config, ProtectionConfig) else tuple(int(v) for v in config)
        self.evaluations += 1
        if self.evaluator.mode == "monte_carlo":
            ev = self.evaluator
            return mc_expected_distortion(self.block, ProtectionConfig.from_coords(coords), ev.channel,
                                          ev.trials, ev.seed)[0]
        n = self.block.n_data
        n_mat = len(coords) // 2
        total = 0.0
        start = 0
        for m in range(n_mat):
            c, r = coords[2 * m], coords[2 * m + 1]
            stop = n if m == n_mat - 1 else start + c * r
            total += float(self.segment(start, stop) @ loss_profile(self.evaluator, c, stop - start))
            start = stop
        return total


def expected_distortion(block: ProtectionBlock, config: ProtectionConfig, evaluator: CostEvaluator) -> float:
    if not is_feasible(config, block.n_data, block.n_fec):
        raise ValueError(f"configuration {config} is infeasible for this block")
    return BlockCost(block, evaluator)(config)


def per_matrix_loss_rates(block: ProtectionBlock, config: ProtectionConfig, evaluator: CostEvaluator) -> list[float]:
    """Mean unrecoverable-loss probability over the data packets of each matrix."""
    if not is_feasible(config, block.n_data, block.n_fec):
        raise ValueError(f"configuration {config} is infeasible for this block")
    rates = []
    start = 0
    for m, spec in enumerate(config.matrices):
        stop = block.n_data if m == config.n_matrices - 1 else start + spec.size
        rates.append(float(loss_profile(evaluator, spec.columns, stop - start).mean()))
        start = stop
    return rates


def mc_expected_distortion(block: ProtectionBlock, config: ProtectionConfig, channel: ChannelParams,
                           trials: int, seed: int = 0) -> tuple[float, float]:
    """Sample mean and standard error of realized distortion over simulated traces.

    Trials run in fixed chunks, each with its own generator derived from
    (seed, chunk index), so results do not depend on how chunks are scheduled.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    assignment = assign_packets(block, config)
    layout = ColumnLayout(assignment)
    weight_of = {p.seq: p.distortion_weight for p in block.packets}
    weights = np.array([weight_of[s] for s in layout.seqs])
    samples = np.empty(trials)
    for chunk, lo in enumerate(range(0, trials, MC_CHUNK)):
        hi = min(lo + MC_CHUNK, trials)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))
        losses = simulate_loss_matrix(channel, hi - lo, layout.n_tx, rng)
        samples[lo:hi] = decode_batch(layout, losses) @ weights
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return mean, stderr
