"""Hybrid simulated annealing / tabu search over protection configurations.

The search is split into subproblems by matrix count.  N_M = 1 has a single
candidate (the standard code) whose cost seeds the initial temperature.  Each
following subproblem anneals over its restricted space with a temperature
and a neighborhood radius that both shrink linearly over the outer loop, a
tabu list of every configuration already evaluated, and a restart from the
best-so-far at every outer iteration.  The number of outer iterations comes
from the remaining time budget and the measured duration of the first one.
A new subproblem is posed only if one of its outer iterations is estimated
to fit in the time that is left.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .codec import ProtectionConfig, standard_config
from .cost import BlockCost, CostEvaluator
from .space import DEFAULT_SPACES, EnumeratedSpace, SpaceCache
from .stream import ProtectionBlock

log = logging.getLogger(__name__)

Clock = Callable[[], float]

# rejection draws tried before materializing the candidate set
PROBES = 24


@dataclass(frozen=True)
class Budget:
    t_total: float
    i_max: int = 10
    tau: float = 0.05
    n_m_cap: int = 16
    # fixed outer-iteration count; disables time-based planning and the deadline
    outer_iters: int | None = None

    def __post_init__(self) -> None:
        if self.t_total <= 0:
            raise ValueError("t_total must be positive")
        if self.i_max < 2:
            raise ValueError("i_max must be >= 2")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


class VirtualClock:
    """Deterministic stand-in for wall time, advanced by the work the search reports.

    Cost evaluations are charged per matrix and neighborhood scans per
    configuration scanned, so larger spaces take proportionally longer.
    """

    def __init__(self, eval_seconds: float = 8e-6, scan_seconds: float = 1.5e-8, step_seconds: float = 4e-6):
        self.now = 0.0
        self.eval_seconds = eval_seconds
        self.scan_seconds = scan_seconds
        self.step_seconds = step_seconds

    def __call__(self) -> float:
        return self.now

    def charge(self, kind: str, amount: float = 1.0) -> None:
        rate = {"eval": self.eval_seconds, "scan": self.scan_seconds, "step": self.step_seconds}[kind]
        self.now += rate * amount


def temperature(i: int, i_outer: int, t_init: float) -> float:
    return (i_outer - i) / (i_outer - 1) * t_init


def plan_outer_iters(t_total: float, t_consumed: float, t_iter: float, i_max: int) -> int:
    if t_iter <= 0:
        return i_max
    return max(0, min(math.floor((t_total - t_consumed) / t_iter), i_max))


def radius_schedule(i: int, i_outer: int, d_init: float, n_matrices: int) -> float:
    # floored at the "closest neighbors" radius so the last, greedy iteration keeps candidates
    return max((i_outer - i) / (i_outer - 1) * d_init, math.sqrt(n_matrices))


def inner_iter_count(tau: float, n_nbr: int, n_close: int) -> int:
    return max(math.ceil(tau * n_nbr), n_close)


def acceptance(cost_current: float, cost_candidate: float, temperature: float, u: float) -> bool:
    if cost_candidate < cost_current:
        return True
    if temperature <= 0:
        return False
    return u <= math.exp((cost_current - cost_candidate) / temperature)


def estimate_next_iter_time(t_iter_max: float, count_next: int, count_current: int) -> float:
    if count_current < 1:
        raise ValueError("count_current must be >= 1")
    return t_iter_max * count_next / count_current


@dataclass
class OptimizerState:
    temperature: float
    radius: float
    incumbent: int
    incumbent_cost: float
    best: int
    best_cost: float
    tabu: np.ndarray
    t_consumed: float = 0.0
    t_iter: float = 0.0
    outer_index: int = 1
    i_outer: int = 0
    i_inner: int = 0


@dataclass
class SubproblemResult:
    n_matrices: int
    best: ProtectionConfig
    best_cost: float
    evaluations: int
    outer_iterations: int
    wall_time: float
    space_size: int
    t_iter_max: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best"] = str(self.best)
        return d


@dataclass
class SolveReport:
    overall_best: ProtectionConfig
    overall_cost: float
    subproblems: list[SubproblemResult] = field(default_factory=list)
    n_m_max: int = 1
    wall_time: float = 0.0

    @property
    def winning_n_matrices(self) -> int:
        return self.overall_best.n_matrices

    def to_dict(self, timing: bool = True) -> dict:
        subs = [s.to_dict() for s in self.subproblems]
        if not timing:
            for s in subs:
                s.pop("wall_time")
                s.pop("t_iter_max")
        d = {
            "overall_best": str(self.overall_best),
            "overall_cost": self.overall_cost,
            "n_m_max": self.n_m_max,
            "subproblems": subs,
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True)


class _Search:
    """Shared plumbing for one subproblem: memoized costs, clock, trace."""

    def __init__(self, space: EnumeratedSpace, cost: BlockCost, clock: Clock, deadline: float,
                 trace: list | None):
        self.space = space
        self.cost = cost
        self.clock = clock
        self.charge = getattr(clock, "charge", None)
        self.deadline = deadline
        self.trace = trace
        self.costs: dict[int, float] = {}
        self.outer = 0

    def evaluate(self, i: int) -> float:
        c = self.costs.get(i)
        if c is None:
            if self.charge:
                self.charge("eval", self.space.n_matrices)
            c = self.cost(self.space.coords[i])
            self.costs[i] = c
        return c

    def within(self, i: int, radius: float) -> np.ndarray:
        if self.charge:
            self.charge("scan", len(self.space))
        return self.space.within(i, radius)

    def expired(self) -> bool:
        return self.clock() > self.deadline

    def log(self, inner: int, i: int, c: float, accepted: bool) -> None:
        if self.trace is not None:
            self.trace.append((self.space.n_matrices, self.outer, inner, str(self.space[i]), c, accepted))


def inner_loop(state: OptimizerState, search: _Search, rng: np.random.Generator) -> OptimizerState:
    """Up to ``state.i_inner`` moves among unvisited neighbors of the incumbent.

    Candidates are drawn uniformly from C(s) by rejection from the whole
    space; when a few probes all miss, the candidate set is materialized
    once for the current incumbent and drawn from without replacement.
    """
    free = search.space.free
    n = len(free)
    r2 = state.radius * state.radius + 1e-9
    explicit, size = None, 0
    for j in range(state.i_inner):
        if search.expired():
            break
        if search.charge:
            search.charge("step")
        pick = -1
        if explicit is None:
            center = free[state.incumbent]
            for _ in range(PROBES):
                i = int(rng.integers(n))
                if not state.tabu[i]:
                    d = free[i] - center
                    if int(d @ d) <= r2:
                        pick = i
                        break
            if pick < 0:
                explicit = np.flatnonzero(search.within(state.incumbent, state.radius) & ~state.tabu)
                size = len(explicit)
        if pick < 0:
            if size == 0:
                break
            k = int(rng.integers(size))
            pick = int(explicit[k])
            explicit[k] = explicit[size - 1]
            size -= 1
        c = search.evaluate(pick)
        state.tabu[pick] = True
        accepted = acceptance(state.incumbent_cost, c, state.temperature, float(rng.random()))
        search.log(j + 1, pick, c, accepted)
        if accepted:
            state.incumbent, state.incumbent_cost = pick, c
            if c < state.best_cost:
                state.best, state.best_cost = pick, c
            explicit = None
    return state


def _prepare_iteration(state: OptimizerState, search: _Search, tau: float) -> None:
    n_m = search.space.n_matrices
    n_nbr = int(search.within(state.incumbent, state.radius).sum())
    n_close = int(search.within(state.incumbent, math.sqrt(n_m)).sum())
    state.i_inner = inner_iter_count(tau, n_nbr, n_close)


def solve_subproblem(space: EnumeratedSpace, cost: BlockCost, budget: Budget, t_init: float,
                     rng: np.random.Generator, clock: Clock = time.perf_counter, t_start: float | None = None,
                     trace: list | None = None) -> tuple[SubproblemResult, bool]:
    """Anneal over one restricted space.

    Returns the subproblem result and whether the whole procedure must stop
    because fewer than two outer iterations fit in the remaining time.
    """
    if len(space) == 0:
        raise ValueError("empty space")
    t0 = clock()
    t_start = t0 if t_start is None else t_start
    timed = budget.outer_iters is None
    deadline = t_start + budget.t_total if timed else math.inf
    search = _Search(space, cost, clock, deadline, trace)
    n_m = space.n_matrices

    # first outer iteration: whole space in reach, random start
    search.outer = 1
    start = int(rng.integers(len(space)))
    state = OptimizerState(
        temperature=t_init, radius=space.d_init, incumbent=start, incumbent_cost=search.evaluate(start),
        best=start, best_cost=0.0, tabu=np.zeros(len(space), dtype=bool),
    )
    state.best_cost = state.incumbent_cost
    state.tabu[start] = True
    search.log(0, start, state.incumbent_cost, True)
    _prepare_iteration(state, search, budget.tau)
    inner_loop(state, search, rng)
    state.t_iter = clock() - t0
    t_iter_max = state.t_iter
    outer_done = 1

    if timed:
        state.t_consumed = clock() - t_start
        state.i_outer = plan_outer_iters(budget.t_total, state.t_consumed, state.t_iter, budget.i_max)
    else:
        state.i_outer = budget.outer_iters
    terminate = state.i_outer < 2

    for i in range(2, state.i_outer + 1):
        if search.expired():
            terminate = True
            break
        t_it = clock()
        search.outer = i
        state.outer_index = i
        state.temperature = temperature(i, state.i_outer, t_init)
        state.radius = radius_schedule(i, state.i_outer, space.d_init, n_m)
        state.incumbent, state.incumbent_cost = state.best, state.best_cost
        _prepare_iteration(state, search, budget.tau)
        inner_loop(state, search, rng)
        outer_done += 1
        t_iter_max = max(t_iter_max, clock() - t_it)

    result = SubproblemResult(
        n_matrices=n_m, best=space[state.best], best_cost=state.best_cost, evaluations=len(search.costs),
        outer_iterations=outer_done, wall_time=clock() - t0, space_size=len(space), t_iter_max=t_iter_max,
    )
    return result, terminate


def optimize_block(block: ProtectionBlock, evaluator: CostEvaluator, budget: Budget, seed: int = 0,
                   clock: Clock | None = None, spaces: SpaceCache | None = None,
                   trace: list | None = None) -> SolveReport:
    """Best configuration over matrix counts 1, 2, ... within the time budget."""
    clock = clock or time.perf_counter
    spaces = spaces or DEFAULT_SPACES
    rng = np.random.default_rng(seed)
    t_start = clock()
    timed = budget.outer_iters is None

    cost = BlockCost(block, evaluator)
    s1 = standard_config(block.n_data, block.n_fec)
    charge = getattr(clock, "charge", None)
    if charge:
        charge("eval", 1)
    t_init = cost(s1)
    t_stage = clock() - t_start
    subs = [SubproblemResult(1, s1, t_init, 1, 0, t_stage, 1, t_stage)]
    report = SolveReport(s1, t_init, subs, n_m_max=1)

    if t_init > 0:
        n_m = 1
        prev_count = 1
        t_iter_max = t_stage
        while True:
            n_m += 1
            if n_m > budget.n_m_cap or n_m > block.n_fec:
                break
            count = spaces.count(block.n_data, block.n_fec, n_m)
            if count == 0:
                break
            if timed:
                remaining = budget.t_total - (clock() - t_start)
                if estimate_next_iter_time(t_iter_max, count, prev_count) > remaining:
                    break
            space = spaces.get(block.n_data, block.n_fec, n_m)
            if space is None:
                log.debug("space (%d,%d,%d) above materialization cap", block.n_data, block.n_fec, n_m)
                break
            result, terminate = solve_subproblem(space, cost, budget, t_init, rng, clock, t_start, trace)
            subs.append(result)
            report.n_m_max = n_m
            prev_count = count
            t_iter_max = result.t_iter_max
            if terminate:
                break

    best = min(subs, key=lambda s: s.best_cost)  # first minimum wins ties, so fewer matrices
    report.overall_best, report.overall_cost = best.best, best.best_cost
    report.wall_time = clock() - t_start
    return report


def exhaustive_optimum(space: EnumeratedSpace, block: ProtectionBlock, evaluator: CostEvaluator | BlockCost
                       ) -> tuple[ProtectionConfig, float]:
    """True argmin of the expected distortion over ``space`` (canonical order breaks ties)."""
    if len(space) == 0:
        raise ValueError("empty space")
    cost = evaluator if isinstance(evaluator, BlockCost) else BlockCost(block, evaluator)
    best_i, best_c = 0, math.inf
    for i in range(len(space)):
        c = cost(space.coords[i])
        if c < best_c:
            best_i, best_c = i, c
    return space[best_i], best_c
