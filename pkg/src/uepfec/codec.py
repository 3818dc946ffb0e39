"""Pro-MPEG COP3 matrix codes, standard and multi-matrix (UEP) variants.

Data packets of a block are ranked by distortion weight; matrix 1 takes the
C_1*R_1 most important ones, matrix 2 the next C_2*R_2, and so on.  Inside a
matrix the members go back to sequence order and fill the grid row by row.
Only the last matrix may be short; its missing tail slots are virtual zero
padding that is never sent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .channel import LossTrace
from .stream import ProtectionBlock

COLUMN_ONLY = "column"
ROW_AND_COLUMN = "row-column"


@dataclass(frozen=True, order=True)
class MatrixSpec:
    columns: int
    rows: int

    def __post_init__(self) -> None:
        if self.columns < 1 or self.rows < 1:
            raise ValueError(f"matrix dimensions must be positive, got {self.columns}x{self.rows}")

    @property
    def size(self) -> int:
        return self.columns * self.rows

    def __str__(self) -> str:
        return f"[{self.columns}x{self.rows}]"


@dataclass(frozen=True, order=True)
class ProtectionConfig:
    matrices: tuple[MatrixSpec, ...]

    @classmethod
    def of(cls, *dims: tuple[int, int]) -> "ProtectionConfig":
        return cls(tuple(MatrixSpec(c, r) for c, r in dims))

    @classmethod
    def from_coords(cls, coords: Sequence[int]) -> "ProtectionConfig":
        it = [int(v) for v in coords]
        return cls(tuple(MatrixSpec(it[i], it[i + 1]) for i in range(0, len(it), 2)))

    @property
    def n_matrices(self) -> int:
        return len(self.matrices)

    @property
    def n_fec(self) -> int:
        return sum(m.columns for m in self.matrices)

    @property
    def capacity(self) -> int:
        return sum(m.size for m in self.matrices)

    @property
    def coords(self) -> tuple[int, ...]:
        return tuple(v for m in self.matrices for v in (m.columns, m.rows))

    def __str__(self) -> str:
        return " ".join(f"{m}{i}" for i, m in enumerate(self.matrices, start=1))

    @classmethod
    def parse(cls, text: str) -> "ProtectionConfig":
        """Inverse of ``str``: accepts e.g. ``"[13x4]1 [2x11]2"`` or ``"13x4,2x11"``."""
        dims = []
        for tok in text.replace(",", " ").split():
            body = tok.strip().lstrip("[").split("]")[0]
            c, r = body.lower().split("x")
            dims.append((int(c), int(r)))
        return cls.of(*dims)


def standard_config(n_data: int, n_fec: int) -> ProtectionConfig:
    """The single-matrix COP3 configuration: N_FEC columns, as many rows as needed."""
    if not 1 <= n_fec < n_data:
        raise ValueError(f"need 1 <= n_fec < n_data, got n_fec={n_fec}, n_data={n_data}")
    return ProtectionConfig.of((n_fec, math.ceil(n_data / n_fec)))


class Slot(NamedTuple):
    kind: str  # "data", "column" or "row"
    matrix: int
    index: int  # seq for data, column/row index for repairs


@dataclass(frozen=True)
class RepairPacket:
    matrix: int
    index: int
    axis: str
    payload: bytes


@dataclass(frozen=True)
class MatrixAssignment:
    config: ProtectionConfig
    members: tuple[tuple[int, ...], ...]

    @property
    def n_data(self) -> int:
        return sum(len(m) for m in self.members)

    @property
    def padding(self) -> int:
        return self.config.capacity - self.n_data

    @cached_property
    def coordinates(self) -> dict[int, tuple[int, int, int]]:
        out = {}
        for m, (spec, seqs) in enumerate(zip(self.config.matrices, self.members)):
            for k, seq in enumerate(seqs):
                out[seq] = (m, k // spec.columns, k % spec.columns)
        return out

    def column(self, m: int, c: int) -> tuple[int, ...]:
        return self.members[m][c::self.config.matrices[m].columns]

    def row(self, m: int, r: int) -> tuple[int, ...]:
        cols = self.config.matrices[m].columns
        return self.members[m][r * cols:(r + 1) * cols]

    def grid(self, m: int) -> list[list[int | None]]:
        spec = self.config.matrices[m]
        cells: list[int | None] = list(self.members[m]) + [None] * (spec.size - len(self.members[m]))
        return [cells[r * spec.columns:(r + 1) * spec.columns] for r in range(spec.rows)]

    def to_json(self) -> str:
        return json.dumps({
            "config": str(self.config),
            "padding": self.padding,
            "matrices": [
                {"columns": s.columns, "rows": s.rows, "grid": self.grid(m)}
                for m, s in enumerate(self.config.matrices)
            ],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MatrixAssignment":
        d = json.loads(text)
        dims = [(mm["columns"], mm["rows"]) for mm in d["matrices"]]
        members = tuple(
            tuple(v for row in mm["grid"] for v in row if v is not None) for mm in d["matrices"]
        )
        return cls(ProtectionConfig.of(*dims), members)


def rank_packets(block: ProtectionBlock) -> list[int]:
    """Block packet indices, most important first (ties: lower seq first)."""
    return sorted(range(block.n_data),
                  key=lambda i: (-block.packets[i].distortion_weight, block.packets[i].seq))


def assign_packets(block: ProtectionBlock, config: ProtectionConfig) -> MatrixAssignment:
    from .space import is_feasible

    if not is_feasible(config, block.n_data, block.n_fec):
        raise ValueError(f"configuration {config} is infeasible for N_P={block.n_data}, N_FEC={block.n_fec}")
    ranked = rank_packets(block)
    members = []
    start = 0
    for m, spec in enumerate(config.matrices):
        stop = min(start + spec.size, block.n_data)
        seqs = sorted(block.packets[i].seq for i in ranked[start:stop])
        members.append(tuple(seqs))
        start = stop
    return MatrixAssignment(config, tuple(members))


def _xor_payloads(payloads: Iterable[bytes]) -> bytes:
    chunks = list(payloads)
    width = max((len(p) for p in chunks), default=0)
    acc = np.zeros(width, dtype=np.uint8)
    for p in chunks:
        acc[:len(p)] ^= np.frombuffer(p, dtype=np.uint8)
    return acc.tobytes()


def _check_dims(assignment: MatrixAssignment, dims: str) -> None:
    if dims not in (COLUMN_ONLY, ROW_AND_COLUMN):
        raise ValueError(f"unknown dims {dims!r}")
    if dims == ROW_AND_COLUMN and assignment.config.n_matrices != 1:
        raise ValueError("row repairs are only available for single-matrix configurations")


def encode(assignment: MatrixAssignment, payloads: Mapping[int, bytes], dims: str = COLUMN_ONLY) -> list[RepairPacket]:
    """Column repairs for every matrix (plus row repairs in row-column mode)."""
    _check_dims(assignment, dims)
    out = []
    for m, spec in enumerate(assignment.config.matrices):
        for c in range(spec.columns):
            out.append(RepairPacket(m, c, "column", _xor_payloads(payloads[s] for s in assignment.column(m, c))))
        if dims == ROW_AND_COLUMN:
            for r in range(spec.rows):
                out.append(RepairPacket(m, r, "row", _xor_payloads(payloads[s] for s in assignment.row(m, r))))
    return out


def transmission_schedule(assignment: MatrixAssignment, dims: str = COLUMN_ONLY) -> list[Slot]:
    """Data in sequence order; each matrix's repairs right after its last member."""
    _check_dims(assignment, dims)
    closing: dict[int, list[int]] = {}
    for m, seqs in enumerate(assignment.members):
        closing.setdefault(max(seqs), []).append(m)
    order = []
    for seq in sorted(assignment.coordinates):
        m_of = assignment.coordinates[seq][0]
        order.append(Slot("data", m_of, seq))
        for m in sorted(closing.get(seq, ())):
            spec = assignment.config.matrices[m]
            order.extend(Slot("column", m, c) for c in range(spec.columns))
            if dims == ROW_AND_COLUMN:
                order.extend(Slot("row", m, r) for r in range(spec.rows))
    return order


def _groups(assignment: MatrixAssignment, dims: str) -> list[tuple[Slot, tuple[int, ...]]]:
    groups = []
    for m, spec in enumerate(assignment.config.matrices):
        groups.extend((Slot("column", m, c), assignment.column(m, c)) for c in range(spec.columns))
        if dims == ROW_AND_COLUMN:
            groups.extend((Slot("row", m, r), assignment.row(m, r)) for r in range(spec.rows))
    return groups


def _peel(groups, lost: set[int], on_rebuild=None) -> set[int]:
    """Iterate single-erasure recovery to a fixpoint; returns the recovered seqs."""
    missing = set(lost)
    progress = True
    while progress:
        progress = False
        for key, seqs in groups:
            gone = [s for s in seqs if s in missing]
            if len(gone) == 1:
                missing.discard(gone[0])
                if on_rebuild is not None:
                    on_rebuild(key, gone[0], seqs)
                progress = True
    return set(lost) - missing


def decode(assignment: MatrixAssignment, trace: LossTrace | Sequence[bool], dims: str = COLUMN_ONLY
           ) -> tuple[set[int], set[int]]:
    """Split the lost data packets into (recovered, unrecoverable).

    ``trace`` is indexed by transmit position as given by ``transmission_schedule``.
    """
    schedule = transmission_schedule(assignment, dims)
    losses = np.asarray(trace.losses if isinstance(trace, LossTrace) else trace, dtype=bool)
    if len(losses) != len(schedule):
        raise ValueError(f"trace has {len(losses)} entries, schedule has {len(schedule)}")
    lost_data = {slot.index for slot, l in zip(schedule, losses) if l and slot.kind == "data"}
    lost_repairs = {(slot.kind, slot.matrix, slot.index) for slot, l in zip(schedule, losses) if l and slot.kind != "data"}
    groups = [(k, s) for k, s in _groups(assignment, dims) if tuple(k) not in lost_repairs]
    recovered = _peel(groups, lost_data)
    return recovered, lost_data - recovered


def recover_payloads(assignment: MatrixAssignment, received: Mapping[int, bytes],
                     repairs: Iterable[RepairPacket], dims: str = COLUMN_ONLY) -> dict[int, bytes]:
    """Rebuild missing data payloads from the received data and repair packets.

    Returns the rebuilt payloads keyed by seq.  Rebuilt packets take the
    repair's length (the longest member), as the sender zero-extended them.
    """
    _check_dims(assignment, dims)
    have = dict(received)
    repair_by_key = {(r.axis, r.matrix, r.index): r.payload for r in repairs}
    groups = [(k, s) for k, s in _groups(assignment, dims) if tuple(k) in repair_by_key]
    lost = set(assignment.coordinates) - set(have)

    def rebuild(key, seq, seqs):
        peers = [have[s] for s in seqs if s != seq]
        have[seq] = _xor_payloads([repair_by_key[tuple(key)], *peers])

    _peel(groups, lost, rebuild)
    return {s: have[s] for s in lost if s in have}


class ColumnLayout:
    """Transmit-position index of every column member, for batched decoding."""

    def __init__(self, assignment: MatrixAssignment):
        schedule = transmission_schedule(assignment)
        pos = {(s.kind, s.matrix, s.index): i for i, s in enumerate(schedule)}
        self.n_tx = len(schedule)
        self.seqs = np.array(sorted(assignment.coordinates))
        seq_slot = {s: i for i, s in enumerate(self.seqs)}
        cols = [(m, c) for m, spec in enumerate(assignment.config.matrices) for c in range(spec.columns)]
        depth = max(len(assignment.column(m, c)) for m, c in cols)
        # padding entries point at a sentinel transmit slot that is never lost
        self.data_pos = np.full((len(cols), depth), self.n_tx, dtype=np.int64)
        self.repair_pos = np.empty(len(cols), dtype=np.int64)
        self.packet_col = np.empty(len(self.seqs), dtype=np.int64)
        self.packet_pos = np.empty(len(self.seqs), dtype=np.int64)
        for k, (m, c) in enumerate(cols):
            members = assignment.column(m, c)
            for r, s in enumerate(members):
                self.data_pos[k, r] = pos[("data", assignment.coordinates[s][0], s)]
                self.packet_col[seq_slot[s]] = k
                self.packet_pos[seq_slot[s]] = self.data_pos[k, r]
            self.repair_pos[k] = pos[("column", m, c)]


def decode_batch(layout: ColumnLayout, losses: np.ndarray) -> np.ndarray:
    """Column-only decoding of many traces at once.

    ``losses`` is (trials, n_tx); returns (trials, N_P) unrecoverable flags
    with packets in ascending seq order.  With column repairs only, a lost
    packet is recoverable iff it is the only loss in its column.
    """
    losses = np.asarray(losses, dtype=bool)
    padded = np.concatenate([losses, np.zeros((losses.shape[0], 1), dtype=bool)], axis=1)
    per_col = padded[:, layout.data_pos].sum(axis=2) + padded[:, layout.repair_pos]
    lost = padded[:, layout.packet_pos]
    return lost & (per_col[:, layout.packet_col] >= 2)


def realized_distortion(block: ProtectionBlock, unrecoverable: Iterable[int]) -> float:
    weight = {p.seq: p.distortion_weight for p in block.packets}
    return float(sum(weight[s] for s in unrecoverable))
