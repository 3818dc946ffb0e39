from itertools import product

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from uepfec.channel import derive_ge, simulate_losses
from uepfec.codec import (COLUMN_ONLY, ROW_AND_COLUMN, ColumnLayout, MatrixAssignment, MatrixSpec,
                          ProtectionConfig, _peel, assign_packets, decode, decode_batch, encode,
                          rank_packets, realized_distortion, recover_payloads, standard_config,
                          transmission_schedule)
from uepfec.space import enumerate_unrestricted
from uepfec.stream import make_block
from tests_support import gf2_recoverable

dims = st.tuples(st.integers(1, 30), st.integers(1, 30))


@given(st.lists(dims, min_size=1, max_size=6))
def test_config_text_roundtrip(pairs):
    cfg = ProtectionConfig.of(*pairs)
    assert ProtectionConfig.parse(str(cfg)) == cfg
    assert ProtectionConfig.parse(",".join(f"{c}x{r}" for c, r in pairs)) == cfg
    assert ProtectionConfig.from_coords(cfg.coords) == cfg
    assert cfg.n_fec == sum(c for c, _ in pairs)


def test_config_string_form():
    assert str(ProtectionConfig.of((13, 4), (2, 11))) == "[13x4]1 [2x11]2"
    with pytest.raises(ValueError):
        MatrixSpec(0, 3)


def test_standard_config():
    assert standard_config(74, 15) == ProtectionConfig.of((15, 5))
    assert standard_config(185, 19) == ProtectionConfig.of((19, 10))
    with pytest.raises(ValueError):
        standard_config(5, 5)


def random_block(data, n_data, n_fec):
    weights = data.draw(st.lists(st.integers(1, 6), min_size=n_data, max_size=n_data))
    return make_block([float(w) for w in weights], n_fec)


def feasible_config(data, n_data, n_fec):
    m = data.draw(st.integers(1, min(3, n_fec)))
    space = enumerate_unrestricted(n_data, n_fec, m)
    assume(len(space) > 0)
    return space[data.draw(st.integers(0, len(space) - 1))]


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_assignment_partitions_by_rank(data):
    n_data = data.draw(st.integers(4, 30))
    n_fec = data.draw(st.integers(1, min(6, n_data - 1)))
    block = random_block(data, n_data, n_fec)
    cfg = feasible_config(data, n_data, n_fec)
    a = assign_packets(block, cfg)
    flat = [s for m in a.members for s in m]
    assert sorted(flat) == block.seqs
    for m, seqs in enumerate(a.members):
        assert list(seqs) == sorted(seqs)
        if m < cfg.n_matrices - 1:
            assert len(seqs) == cfg.matrices[m].size
    assert 0 <= a.padding < cfg.matrices[-1].columns
    # every member of an earlier matrix is at least as important as any later one
    w = {p.seq: p.distortion_weight for p in block.packets}
    for m in range(cfg.n_matrices - 1):
        assert min(w[s] for s in a.members[m]) >= max(w[s] for s in a.members[m + 1])
    assert MatrixAssignment.from_json(a.to_json()) == a


def test_rank_breaks_ties_by_seq():
    block = make_block([1.0, 3.0, 3.0, 2.0], 1)
    assert rank_packets(block) == [1, 2, 3, 0]


def test_assign_rejects_infeasible():
    with pytest.raises(ValueError):
        assign_packets(make_block([1.0] * 10, 3), ProtectionConfig.of((2, 5)))


def test_grid_layout_and_padding():
    block = make_block([1.0] * 10, 3)
    a = assign_packets(block, ProtectionConfig.of((3, 4)))
    assert a.grid(0) == [[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, None, None]]
    assert a.column(0, 0) == (0, 3, 6, 9)
    assert a.column(0, 2) == (2, 5, 8)
    assert a.row(0, 3) == (9,)


def test_schedule_places_repairs_after_last_member():
    block = make_block([5, 5, 1, 1, 5, 5, 1, 1, 1, 1], 3)
    a = assign_packets(block, ProtectionConfig.of((2, 2), (1, 6)))
    sched = transmission_schedule(a)
    assert len(sched) == 13
    assert [s.index for s in sched if s.kind == "data"] == list(range(10))
    pos = {(s.kind, s.matrix, s.index): i for i, s in enumerate(sched)}
    # matrix 0 holds seqs 0, 1, 4, 5; its repairs follow seq 5
    assert pos[("column", 0, 0)] == pos[("data", 0, 5)] + 1
    assert pos[("column", 1, 0)] == len(sched) - 1


def payloads_for(seqs, rng):
    return {s: rng.integers(0, 256, size=int(rng.integers(1, 40)), dtype=np.uint8).tobytes() for s in seqs}


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_single_loss_per_column_rebuilds_payloads(data):
    n_data = data.draw(st.integers(4, 30))
    n_fec = data.draw(st.integers(1, min(6, n_data - 1)))
    block = random_block(data, n_data, n_fec)
    cfg = feasible_config(data, n_data, n_fec)
    a = assign_packets(block, cfg)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    payloads = payloads_for(block.seqs, rng)
    repairs = encode(a, payloads)
    lost = set()
    for m, spec in enumerate(cfg.matrices):
        for c in range(spec.columns):
            col = a.column(m, c)
            if col and data.draw(st.booleans()):
                lost.add(data.draw(st.sampled_from(col)))
    received = {s: p for s, p in payloads.items() if s not in lost}
    rebuilt = recover_payloads(a, received, repairs)
    assert set(rebuilt) == lost
    for s in lost:
        m, _, c = a.coordinates[s]
        width = max(len(payloads[t]) for t in a.column(m, c))
        assert rebuilt[s][:len(payloads[s])] == payloads[s]
        assert len(rebuilt[s]) == width
        assert not any(rebuilt[s][len(payloads[s]):])


def test_row_column_recovers_two_losses_in_a_column():
    block = make_block([1.0] * 12, 4)
    a = assign_packets(block, ProtectionConfig.of((4, 3)))
    rng = np.random.default_rng(0)
    payloads = {s: rng.integers(0, 256, 16, dtype=np.uint8).tobytes() for s in block.seqs}
    repairs = encode(a, payloads, ROW_AND_COLUMN)
    assert len(repairs) == 7
    lost = {0, 4}  # same column, different rows
    received = {s: p for s, p in payloads.items() if s not in lost}
    assert recover_payloads(a, received, repairs, COLUMN_ONLY) == {}
    rebuilt = recover_payloads(a, received, repairs, ROW_AND_COLUMN)
    assert rebuilt == {0: payloads[0], 4: payloads[4]}


def test_row_repairs_need_single_matrix():
    block = make_block([1.0] * 12, 4)
    a = assign_packets(block, ProtectionConfig.of((2, 3), (2, 3)))
    with pytest.raises(ValueError):
        encode(a, {s: b"x" for s in block.seqs}, ROW_AND_COLUMN)


@pytest.mark.parametrize("columns,rows", [(c, r) for c in range(1, 5) for r in range(1, 5) if c * r > c])
def test_single_loss_per_column_always_recovers(columns, rows):
    block = make_block([1.0] * (columns * rows), columns)
    a = assign_packets(block, ProtectionConfig.of((columns, rows)))
    sched = transmission_schedule(a)
    pos = {s.index: i for i, s in enumerate(sched) if s.kind == "data"}
    for choice in product(*[[None, *a.column(0, c)] for c in range(columns)]):
        trace = np.zeros(len(sched), dtype=bool)
        for s in choice:
            if s is not None:
                trace[pos[s]] = True
        recovered, unrecoverable = decode(a, trace)
        assert not unrecoverable
        assert recovered == {s for s in choice if s is not None}


def matrix_groups(columns, rows):
    col = [tuple(r * columns + c for r in range(rows)) for c in range(columns)]
    row = [tuple(r * columns + c for c in range(columns)) for r in range(rows)]
    return col, row


@settings(max_examples=300, deadline=None)
@given(columns=st.integers(1, 5), rows=st.integers(1, 5), data=st.data())
def test_peeling_is_sound_and_column_only_is_exact(columns, rows, data):
    col, row = matrix_groups(columns, rows)
    n = columns * rows
    lost = set(data.draw(st.sets(st.integers(0, n - 1))))
    alive_col = [g for g in col if not data.draw(st.booleans()) or not lost]
    alive_row = [g for g in row if data.draw(st.booleans())]
    # column-only: peeling equals GF(2) elimination (columns are disjoint)
    assert _peel([(g, g) for g in alive_col], lost) == gf2_recoverable(alive_col, lost)
    # with rows added peeling never claims more than elimination can justify
    both = alive_col + alive_row
    assert _peel([(g, g) for g in both], lost) <= gf2_recoverable(both, lost)


def test_elimination_can_beat_peeling():
    # every row and column holds 0 or >= 2 erasures, so peeling is stuck, yet
    # a combination of row and column equations still isolates cell 0
    lost = {0, 2, 3, 6, 7, 8, 9, 12, 13}
    col, row = matrix_groups(4, 4)
    assert _peel([(g, g) for g in col + row], lost) == set()
    assert gf2_recoverable(col + row, lost) == {0}


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_batch_decoder_matches_reference(data):
    n_data = data.draw(st.integers(4, 30))
    n_fec = data.draw(st.integers(1, min(6, n_data - 1)))
    block = random_block(data, n_data, n_fec)
    cfg = feasible_config(data, n_data, n_fec)
    a = assign_packets(block, cfg)
    layout = ColumnLayout(a)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    losses = rng.random((25, layout.n_tx)) < data.draw(st.floats(0.0, 0.6))
    batch = decode_batch(layout, losses)
    for t in range(len(losses)):
        _, unrecoverable = decode(a, losses[t])
        assert set(layout.seqs[batch[t]].tolist()) == unrecoverable


def test_decode_checks_trace_length():
    block = make_block([1.0] * 10, 2)
    a = assign_packets(block, standard_config(10, 2))
    with pytest.raises(ValueError):
        decode(a, [False] * 5)


def test_lost_repair_disables_its_column():
    block = make_block([1.0] * 6, 2)
    a = assign_packets(block, standard_config(6, 2))
    sched = transmission_schedule(a)
    trace = [s == ("data", 0, 0) or s == ("column", 0, 0) for s in map(tuple, sched)]
    recovered, unrecoverable = decode(a, trace)
    assert recovered == set() and unrecoverable == {0}


def test_realized_distortion_sums_weights():
    block = make_block([5.0, 4.0, 3.0], 1)
    assert realized_distortion(block, {0, 2}) == 8.0
    assert realized_distortion(block, set()) == 0.0


def test_decode_on_simulated_trace():
    block = make_block(list(range(74, 0, -1)), 15)
    a = assign_packets(block, ProtectionConfig.of((13, 4), (2, 11)))
    sched = transmission_schedule(a)
    trace = simulate_losses(derive_ge(0.2, 2.0), len(sched), seed=4)
    recovered, unrecoverable = decode(a, trace)
    lost = {s.index for s, l in zip(sched, trace.losses) if l and s.kind == "data"}
    assert recovered | unrecoverable == lost
    assert not recovered & unrecoverable
