"""Experiment harness: count tables, oracle comparisons, timing runs, PLR/ABL sweeps, N_M histograms.

Every command writes versioned CSV files whose first line is
``# uepfec <name> v1``.  Deterministic results and measured wall times go to
separate files, so the result CSVs are byte-identical across reruns with the
same seeds.  Plots are drawn from the emitted CSV only.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .channel import ChannelParams, abl_packets_from_time, derive_ge
from .codec import standard_config
from .cost import BlockCost, CostEvaluator, mc_expected_distortion
from .hsa import Budget, VirtualClock, exhaustive_optimum, optimize_block, solve_subproblem
from .space import (SpaceCache, count_restricted, count_unrestricted, enumerate_restricted,
                    enumerate_unrestricted)
from .stream import DEFAULT_PAYLOAD_BYTES, ProtectionBlock, packet_count, partition_blocks, synthesize_stream

CSV_VERSION = 1
EVALUATOR_ALIASES = {"iid": "iid", "markov": "markov", "mc": "monte_carlo", "monte_carlo": "monte_carlo"}

TABLE2_INSTANCES = ((185, 19), (185, 37), (37, 4), (37, 7))
# (bitrate Mbps, receiver window s, code rate) rows used for oracle comparisons
COMPARE_INSTANCES = ((4, 0.1, "10/11"), (4, 0.1, "5/6"), (4, 0.5, "10/11"), (4, 0.5, "5/6"))


@dataclass
class ExperimentSpec:
    bitrate_mbps: float = 8.0
    latency_s: float = 0.2
    split: float = 0.5
    code_rate: str = "5/6"
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES
    duration_s: float = 1.0
    plrs: list[float] = field(default_factory=lambda: [7.5e-3, 1.0e-2, 1.75e-2, 2.5e-2])
    abls_ms: list[float] = field(default_factory=lambda: [1.0, 3.0, 5.0])
    seeds: list[int] = field(default_factory=lambda: [0])
    stream_seed: int = 0
    # None picks per command: iid for oracle comparisons, markov elsewhere
    evaluator: str | None = None
    trials: int = 2000
    mc_trials: int = 200
    tau: float = 0.05
    imax: int = 10
    n_m_cap: int = 16
    clock: str = "virtual"
    # counts / compare
    count_instances: list[list[int]] = field(default_factory=lambda: [list(p) for p in TABLE2_INSTANCES])
    compare_instances: list[list] = field(default_factory=lambda: [list(r) for r in COMPARE_INSTANCES])
    n_matrices: list[int] = field(default_factory=lambda: [2, 3, 4])
    compare_plr: float = 0.01
    compare_abl_ms: float = 1.0
    unrestricted_cap: int = 500_000
    restricted_cap: int = 300_000

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if self.evaluator is not None and self.evaluator not in EVALUATOR_ALIASES:
            raise ValueError(f"unknown evaluator {self.evaluator!r}")
        if self.clock not in ("virtual", "wall"):
            raise ValueError("clock must be 'virtual' or 'wall'")

    @property
    def bitrate_bps(self) -> float:
        return self.bitrate_mbps * 1e6

    @property
    def t_transmitter(self) -> float:
        return self.latency_s * self.split

    @property
    def t_receiver(self) -> float:
        return self.latency_s - self.t_transmitter

    @classmethod
    def from_json(cls, text: str, **overrides) -> "ExperimentSpec":
        data = json.loads(text) if text.strip() else {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)}, indent=1, sort_keys=True)


@dataclass
class Guard:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class CommandResult:
    name: str
    tables: dict[str, str] = field(default_factory=dict)
    guards: list[Guard] = field(default_factory=list)
    extra: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(g.ok for g in self.guards)

    def write(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for fname, text in {**self.tables, **self.extra}.items():
            path = out_dir / fname
            path.write_text(text)
            written.append(path)
        return written


def to_csv(name: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# uepfec {name} v{CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_csv(text: str) -> list[dict[str, str]]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def _evaluator(spec: ExperimentSpec, channel: ChannelParams, seed: int = 0, default: str = "markov") -> CostEvaluator:
    return CostEvaluator(EVALUATOR_ALIASES[spec.evaluator or default], channel, spec.trials, seed)


def _clock(spec: ExperimentSpec) -> Callable[[], float]:
    return VirtualClock() if spec.clock == "virtual" else time.perf_counter


def channel_for(spec: ExperimentSpec, plr: float, abl_ms: float, bitrate_bps: float | None = None) -> ChannelParams:
    abl = abl_packets_from_time(abl_ms / 1000.0, bitrate_bps or spec.bitrate_bps, Fraction(spec.code_rate),
                                spec.payload_bytes)
    return derive_ge(plr, abl)


def instance_block(bitrate_bps: float, window_s: float, code_rate: str, payload_bytes: int = DEFAULT_PAYLOAD_BYTES,
                   seed: int = 0) -> ProtectionBlock:
    """First block of a synthesized stream with the given geometry."""
    duration = max(2.0 * window_s, 1.0)
    stream = synthesize_stream(bitrate_bps, duration, payload_bytes, seed=seed)
    return partition_blocks(stream, window_s, code_rate, bitrate_bps, payload_bytes)[0]


# -- counts -------------------------------------------------------------------

def cmd_counts(spec: ExperimentSpec) -> CommandResult:
    """Exact unrestricted and restricted space sizes per instance and matrix count."""
    rows = []
    for n_data, n_fec in spec.count_instances:
        for m in sorted(set([1] + list(spec.n_matrices))):
            rows.append((n_data, n_fec, m, count_unrestricted(n_data, n_fec, m), count_restricted(n_data, n_fec, m)))
    res = CommandResult("counts")
    res.tables["counts.csv"] = to_csv("counts", ("n_data", "n_fec", "n_matrices", "unrestricted", "restricted"), rows)
    bad = [r for r in rows if r[4] > r[3]]
    res.guards.append(Guard("restricted count never exceeds unrestricted", not bad, f"{len(bad)} violating rows"))
    return res


# -- compare ------------------------------------------------------------------

def cmd_compare(spec: ExperimentSpec) -> CommandResult:
    """Exhaustive oracles versus HSA per (instance, N_M) with a fixed outer-iteration count."""
    rows, timing = [], []
    notices = []
    restricted_gaps, hsa_pass = [], []
    for bitrate_mbps, window, rate in spec.compare_instances:
        bitrate = float(bitrate_mbps) * 1e6
        block = instance_block(bitrate, float(window), str(rate), spec.payload_bytes, spec.stream_seed)
        channel = channel_for(spec, spec.compare_plr, spec.compare_abl_ms, bitrate)
        cost = BlockCost(block, _evaluator(spec, channel, default="iid"))
        t_init = cost(standard_config(block.n_data, block.n_fec))
        for m in spec.n_matrices:
            n_res = count_restricted(block.n_data, block.n_fec, m)
            n_unr = count_unrestricted(block.n_data, block.n_fec, m)
            if n_res == 0 or n_res > spec.restricted_cap:
                notices.append(f"({block.n_data},{block.n_fec},{m}): restricted space {n_res} skipped")
                continue
            t0 = time.perf_counter()
            space = enumerate_restricted(block.n_data, block.n_fec, m)
            best_res, cost_res = exhaustive_optimum(space, block, cost)
            t_res = time.perf_counter() - t0

            if n_unr <= spec.unrestricted_cap:
                t0 = time.perf_counter()
                best_unr, cost_unr = exhaustive_optimum(
                    enumerate_unrestricted(block.n_data, block.n_fec, m), block, cost)
                t_unr = time.perf_counter() - t0
                gap_res = _rel_gap(cost_res, cost_unr)
                restricted_gaps.append(gap_res)
            else:
                notices.append(f"({block.n_data},{block.n_fec},{m}): unrestricted space {n_unr} above cap, oracle skipped")
                best_unr, cost_unr, t_unr, gap_res = None, math.nan, math.nan, math.nan

            budget = Budget(t_total=1.0, i_max=spec.imax, tau=spec.tau, outer_iters=spec.imax)
            hsa_costs, hsa_evals, hsa_times = [], [], []
            for seed in spec.seeds:
                rng = np.random.default_rng(seed)
                t0 = time.perf_counter()
                result, _ = solve_subproblem(space, cost, budget, t_init, rng, clock=VirtualClock())
                hsa_times.append(time.perf_counter() - t0)
                hsa_costs.append(result.best_cost)
                hsa_evals.append(result.evaluations)
            gaps = [_rel_gap(c, cost_res) for c in hsa_costs]
            within = sum(g <= 0.02 for g in gaps)
            hsa_pass.append((m, within, len(gaps)))
            rows.append((
                block.n_data, block.n_fec, m, n_unr, n_res,
                cost_unr, "" if best_unr is None else str(best_unr), cost_res, str(best_res),
                float(np.mean(hsa_costs)), gap_res, float(np.mean(gaps)), float(max(gaps)), within, len(gaps),
                float(np.mean(hsa_evals)), float(np.mean(hsa_evals)) / n_res,
            ))
            timing.append((block.n_data, block.n_fec, m, t_unr, t_res, float(np.mean(hsa_times)),
                           float(np.max(hsa_times))))

    res = CommandResult("compare")
    res.tables["compare.csv"] = to_csv("compare", (
        "n_data", "n_fec", "n_matrices", "unrestricted_size", "restricted_size",
        "unrestricted_cost", "unrestricted_best", "restricted_cost", "restricted_best",
        "hsa_mean_cost", "restricted_gap", "hsa_mean_gap", "hsa_max_gap", "hsa_within_2pct", "hsa_runs",
        "hsa_mean_evaluations", "hsa_eval_fraction"), rows)
    res.extra["compare_timing.csv"] = to_csv("compare_timing", (
        "n_data", "n_fec", "n_matrices", "unrestricted_s", "restricted_s", "hsa_mean_s", "hsa_max_s"), timing)
    if notices:
        res.extra["compare_notices.txt"] = "\n".join(notices) + "\n"
    res.guards.append(Guard("restricted oracle within 1% of unrestricted",
                            all(g <= 0.01 for g in restricted_gaps),
                            f"max gap {max(restricted_gaps, default=0.0):.3g}"))
    res.guards.append(Guard("HSA within 2% of restricted oracle in >= 90% of runs",
                            all(w >= 0.9 * n for _, w, n in hsa_pass),
                            "; ".join(f"N_M={m}: {w}/{n}" for m, w, n in hsa_pass)))
    return res


def _rel_gap(value: float, reference: float) -> float:
    if reference == 0:
        return 0.0 if value == 0 else math.inf
    return (value - reference) / reference


# -- optimize -----------------------------------------------------------------

def stream_blocks(spec: ExperimentSpec, window_s: float) -> list[ProtectionBlock]:
    if packet_count(spec.bitrate_bps, spec.duration_s, spec.payload_bytes) == 0:
        return []
    stream = synthesize_stream(spec.bitrate_bps, spec.duration_s, spec.payload_bytes, seed=spec.stream_seed)
    return partition_blocks(stream, window_s, spec.code_rate, spec.bitrate_bps, spec.payload_bytes)


def _warm(spaces: SpaceCache, blocks: Sequence[ProtectionBlock], cap: int) -> None:
    for dims in sorted({(b.n_data, b.n_fec) for b in blocks}):
        spaces.prepare(dims[0], dims[1], min(cap, dims[1]))


def cmd_optimize(spec: ExperimentSpec, spaces: SpaceCache | None = None) -> CommandResult:
    """HSA per block along a synthesized stream under the transmitter time budget."""
    spaces = spaces or SpaceCache(spec.restricted_cap)
    blocks = stream_blocks(spec, spec.t_receiver)
    _warm(spaces, blocks, spec.n_m_cap)
    plr, abl_ms = spec.plrs[0], spec.abls_ms[0]
    evaluator = _evaluator(spec, channel_for(spec, plr, abl_ms))
    budget = Budget(t_total=spec.t_transmitter, i_max=spec.imax, tau=spec.tau, n_m_cap=spec.n_m_cap)

    rows, timing, reports = [], [], []
    for b, block in enumerate(blocks):
        for seed in spec.seeds:
            rep = optimize_block(block, evaluator, budget, seed=seed, clock=_clock(spec), spaces=spaces)
            rows.append((b, seed, block.n_data, block.n_fec, rep.n_m_max, rep.winning_n_matrices,
                         str(rep.overall_best), rep.overall_cost, rep.subproblems[0].best_cost))
            timing.append((b, seed, rep.wall_time))
            reports.append(json.dumps({"block": b, "seed": seed, **rep.to_dict(timing=False)}, sort_keys=True))

    times = np.array([t[2] for t in timing]) if timing else np.zeros(0)
    n_m_max = np.array([r[4] for r in rows]) if rows else np.zeros(0)
    summary = [(
        spec.clock, spec.t_transmitter, len(rows),
        float(times.mean()) if len(times) else 0.0, float(times.max()) if len(times) else 0.0,
        float(times.var()) if len(times) else 0.0, float(n_m_max.mean()) if len(n_m_max) else 0.0,
    )]
    res = CommandResult("optimize")
    res.tables["optimize.csv"] = to_csv("optimize", (
        "block", "seed", "n_data", "n_fec", "n_m_max", "winning_n_matrices", "best", "best_cost",
        "standard_cost"), rows)
    res.tables["optimize_reports.jsonl"] = "".join(r + "\n" for r in reports)
    res.extra["optimize_timing.csv"] = to_csv("optimize_timing", ("block", "seed", "elapsed_s"), timing)
    res.extra["optimize_summary.csv"] = to_csv("optimize_summary", (
        "clock", "t_transmitter", "runs", "mean_s", "max_s", "var_s2", "mean_n_m_max"), summary)
    worst = float(times.max()) if len(times) else 0.0
    res.guards.append(Guard("every run within 1.1 x transmitter budget", worst <= 1.1 * spec.t_transmitter,
                            f"max {worst:.4g} s of {spec.t_transmitter:.4g} s"))
    dominated = [r for r in rows if r[7] > r[8]]
    res.guards.append(Guard("optimized cost never above standard cost", not dominated, f"{len(dominated)} violations"))
    return res


# -- sweep --------------------------------------------------------------------

SWEEP_SERIES = ("standard_full", "standard_half", "uep_half")


def _normalized(total: float, blocks: Sequence[ProtectionBlock]) -> float:
    weight = sum(float(b.weights.sum()) for b in blocks)
    return total / weight if weight else 0.0


def cmd_sweep(spec: ExperimentSpec, spaces: SpaceCache | None = None) -> CommandResult:
    """Model and simulated distortion across the PLR x ABL grid for three schemes.

    Distortion is reported as expected lost weight over total weight, so the
    full-window and half-window partitions of the same stream compare directly.
    """
    if not spec.plrs or not spec.abls_ms:
        raise ValueError("plr and abl grids must be nonempty")
    spaces = spaces or SpaceCache(spec.restricted_cap)
    full = stream_blocks(spec, spec.latency_s)
    half = stream_blocks(spec, spec.t_receiver)
    _warm(spaces, half, spec.n_m_cap)
    budget = Budget(t_total=spec.t_transmitter, i_max=spec.imax, tau=spec.tau, n_m_cap=spec.n_m_cap)
    seed = spec.seeds[0]

    rows = []
    violations = 0
    for abl_ms in spec.abls_ms:
        for plr in spec.plrs:
            channel = channel_for(spec, plr, abl_ms)
            evaluator = _evaluator(spec, channel, seed)
            model = dict.fromkeys(SWEEP_SERIES, 0.0)
            realized = dict.fromkeys(SWEEP_SERIES, 0.0)
            configs: dict[str, list] = {s: [] for s in SWEEP_SERIES}
            for b in full:
                configs["standard_full"].append((b, standard_config(b.n_data, b.n_fec)))
            for i, b in enumerate(half):
                s1 = standard_config(b.n_data, b.n_fec)
                configs["standard_half"].append((b, s1))
                rep = optimize_block(b, evaluator, budget, seed=seed + i, clock=_clock(spec), spaces=spaces)
                configs["uep_half"].append((b, rep.overall_best))
            for series, pairs in configs.items():
                for k, (b, cfg) in enumerate(pairs):
                    model[series] += BlockCost(b, evaluator)(cfg)
                    if spec.mc_trials > 0:
                        realized[series] += mc_expected_distortion(b, cfg, channel, spec.mc_trials, seed + k)[0]
            for series in SWEEP_SERIES:
                ref = full if series == "standard_full" else half
                rows.append((plr, abl_ms, channel.abl_packets, series, _normalized(model[series], ref),
                             _normalized(realized[series], ref) if spec.mc_trials > 0 else math.nan))
            if model["uep_half"] > model["standard_half"] * (1 + 1e-12):
                violations += 1

    res = CommandResult("sweep")
    text = to_csv("sweep", ("plr", "abl_ms", "abl_packets", "series", "model_distortion", "mc_distortion"), rows)
    res.tables["sweep.csv"] = text
    res.tables["sweep.svg"] = plot_sweep(text)
    res.guards.append(Guard("UEP never worse than standard at equal window", violations == 0,
                            f"{violations} grid points violate"))
    return res


# -- histogram ----------------------------------------------------------------

def cmd_histogram(spec: ExperimentSpec, spaces: SpaceCache | None = None) -> CommandResult:
    """Share of blocks whose optimized configuration uses each matrix count."""
    spaces = spaces or SpaceCache(spec.restricted_cap)
    blocks = stream_blocks(spec, spec.t_receiver)
    _warm(spaces, blocks, spec.n_m_cap)
    evaluator = _evaluator(spec, channel_for(spec, spec.plrs[0], spec.abls_ms[0]))
    budget = Budget(t_total=spec.t_transmitter, i_max=spec.imax, tau=spec.tau, n_m_cap=spec.n_m_cap)
    tally: dict[int, int] = {}
    for b, block in enumerate(blocks):
        for seed in spec.seeds:
            rep = optimize_block(block, evaluator, budget, seed=seed, clock=_clock(spec), spaces=spaces)
            tally[rep.winning_n_matrices] = tally.get(rep.winning_n_matrices, 0) + 1
    total = sum(tally.values())
    top = max(tally, default=1)
    rows = [(m, tally.get(m, 0), 100.0 * tally.get(m, 0) / total if total else 0.0) for m in range(1, top + 1)]
    res = CommandResult("histogram")
    text = to_csv("histogram", ("n_matrices", "count", "percent"), rows)
    res.tables["histogram.csv"] = text
    res.tables["histogram.svg"] = plot_histogram(text)
    pct = sum(r[2] for r in rows)
    res.guards.append(Guard("histogram sums to 100%", total == 0 or abs(pct - 100.0) < 1e-9, f"{pct:.6f}%"))
    return res


# -- plotting -----------------------------------------------------------------

def _svg(fig) -> str:
    import matplotlib.pyplot as plt

    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "uepfec"})
    plt.close(fig)
    return buf.getvalue()


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "uepfec"
    return plt


def plot_sweep(csv_text: str) -> str:
    plt = _pyplot()
    rows = read_csv(csv_text)
    styles = {"standard_full": "-", "standard_half": ":", "uep_half": "--"}
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    abls = sorted({float(r["abl_ms"]) for r in rows})
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for a, abl in enumerate(abls):
        for series, ls in styles.items():
            pts = sorted((float(r["plr"]), float(r["model_distortion"])) for r in rows
                         if float(r["abl_ms"]) == abl and r["series"] == series)
            if pts:
                x, y = zip(*pts)
                ax.plot(x, y, ls, marker="o", ms=3, color=colors[a % len(colors)], label=f"{series}, ABL {abl:g} ms")
    ax.set_xlabel("packet loss rate")
    ax.set_ylabel("expected lost weight / total weight")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.legend(fontsize=6, ncol=2)
    fig.tight_layout()
    return _svg(fig)


def plot_histogram(csv_text: str) -> str:
    plt = _pyplot()
    rows = read_csv(csv_text)
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    ax.bar([int(r["n_matrices"]) for r in rows], [float(r["percent"]) for r in rows], color="0.4")
    ax.set_xlabel("number of matrices")
    ax.set_ylabel("share of blocks (%)")
    fig.tight_layout()
    return _svg(fig)


COMMANDS = {
    "counts": cmd_counts,
    "compare": cmd_compare,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "histogram": cmd_histogram,
}


def run(command: str, spec: ExperimentSpec) -> CommandResult:
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    return COMMANDS[command](spec)


__all__ = [
    "ExperimentSpec", "CommandResult", "Guard", "COMMANDS", "run", "to_csv", "read_csv",
    "cmd_counts", "cmd_compare", "cmd_optimize", "cmd_sweep", "cmd_histogram",
    "instance_block", "channel_for", "stream_blocks", "plot_sweep", "plot_histogram",
]
