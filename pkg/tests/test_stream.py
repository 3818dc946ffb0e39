from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uepfec.stream import (GopSpec, ProtectionBlock, StreamPacket, block_dimensions, blocks_from_json,
                           blocks_to_json, compute_distortion_weights, make_block, packet_count,
                           partition_blocks, repair_count, round_half_up, stream_from_json, stream_to_json,
                           synthesize_stream)

# (Mbps, receiver window s, code rate) -> (N_P, N_FEC)
REFERENCE_DIMENSIONS = [
    (4, 0.5, "10/11", 185, 19), (4, 0.5, "5/6", 185, 37),
    (4, 0.1, "10/11", 37, 4), (4, 0.1, "5/6", 37, 7),
    (8, 0.5, "10/11", 370, 37), (8, 0.5, "5/6", 370, 74),
    (8, 0.1, "10/11", 74, 7), (8, 0.1, "5/6", 74, 15),
    (12, 0.5, "10/11", 556, 56), (12, 0.5, "5/6", 556, 111),
    (12, 0.1, "10/11", 111, 11), (12, 0.1, "5/6", 111, 22),
]


@pytest.mark.parametrize("mbps,window,rate,n_data,n_fec", REFERENCE_DIMENSIONS)
def test_block_dimensions_reference_grid(mbps, window, rate, n_data, n_fec):
    assert block_dimensions(mbps * 1e6, window, rate) == (n_data, n_fec)


def test_repair_count_rounds_half_up():
    assert repair_count(185, "10/11") == 19  # 18.5
    assert repair_count(556, Fraction(5, 6)) == 111  # 111.2
    assert repair_count(74, 5 / 6) == 15  # 14.8
    assert round_half_up(Fraction(5, 2)) == 3
    assert round_half_up(Fraction(-5, 2)) == -2


def test_repair_count_rejects_bad_rate():
    with pytest.raises(ValueError):
        repair_count(10, 1)
    with pytest.raises(ValueError):
        repair_count(10, 0)


def test_packet_count_floors():
    assert packet_count(8e6, 0.1) == 74
    assert packet_count(4e6, 0.5, 1348) == 185
    assert packet_count(1e3, 0.1) == 0


@settings(max_examples=40, deadline=None)
@given(mbps=st.floats(1.0, 16.0), duration=st.floats(0.05, 1.5), seed=st.integers(0, 2**31))
def test_synthesized_stream_shape(mbps, duration, seed):
    n = packet_count(mbps * 1e6, duration)
    if n == 0:
        with pytest.raises(ValueError):
            synthesize_stream(mbps * 1e6, duration, seed=seed)
        return
    pkts = synthesize_stream(mbps * 1e6, duration, seed=seed)
    assert len(pkts) == n
    assert [p.seq for p in pkts] == list(range(n))
    frames = [(p.gop_index, p.frame_index) for p in pkts]
    assert frames == sorted(frames)
    # weights are GOP suffix sizes: they count down to 1 inside each GOP
    for g in {p.gop_index for p in pkts}:
        w = [p.distortion_weight for p in pkts if p.gop_index == g]
        assert w == [float(len(w) - i) for i in range(len(w))]


def test_every_frame_gets_a_packet():
    gop = GopSpec()
    pkts = synthesize_stream(4e6, 1.0, gop=gop, seed=3)
    per_frame = {}
    for p in pkts:
        per_frame[(p.gop_index, p.frame_index)] = per_frame.get((p.gop_index, p.frame_index), 0) + 1
    assert len(per_frame) == 25
    assert min(per_frame.values()) >= 1
    # intra frames are the largest of their GOP on average
    intra = np.mean([c for (g, f), c in per_frame.items() if f == 0])
    inter = np.mean([c for (g, f), c in per_frame.items() if f != 0])
    assert intra > 2 * inter


def test_stream_is_seeded():
    a = synthesize_stream(8e6, 0.5, seed=1)
    assert a == synthesize_stream(8e6, 0.5, seed=1)
    assert a != synthesize_stream(8e6, 0.5, seed=2)


def test_distortion_weights_reset_per_gop():
    pkts = [StreamPacket(i, 100, i // 3, 0) for i in range(7)]
    w = [p.distortion_weight for p in compute_distortion_weights(pkts)]
    assert w == [3, 2, 1, 3, 2, 1, 1]


def test_partition_drops_partial_block():
    pkts = synthesize_stream(8e6, 0.55, seed=0)
    blocks = partition_blocks(pkts, 0.1, "5/6", 8e6)
    assert len(pkts) == 408
    assert len(blocks) == 5
    assert all((b.n_data, b.n_fec) == (74, 15) for b in blocks)
    assert blocks[1].packets[0].seq == 74


def test_partition_rejects_blocks_without_repairs():
    pkts = synthesize_stream(4e6, 0.1, seed=0)
    with pytest.raises(ValueError):
        partition_blocks(pkts, 0.01, "10/11", 4e6)


def test_block_validation():
    with pytest.raises(ValueError):
        make_block([1.0] * 5, 0)
    with pytest.raises(ValueError):
        make_block([1.0] * 5, 5)
    b = make_block([3.0, 2.0, 1.0], 1)
    assert b.n_data == 3 and b.seqs == [0, 1, 2]
    assert b.weights.tolist() == [3.0, 2.0, 1.0]


packets_strategy = st.lists(
    st.builds(StreamPacket, seq=st.integers(0, 10**6), payload_bytes=st.integers(1, 1500),
              gop_index=st.integers(0, 99), frame_index=st.integers(0, 11),
              distortion_weight=st.floats(0, 1e6, allow_nan=False)),
    max_size=20)


@given(packets_strategy)
def test_stream_json_roundtrip(pkts):
    assert stream_from_json(stream_to_json(pkts)) == pkts


@given(packets_strategy.filter(lambda p: len(p) >= 2), st.data())
def test_blocks_json_roundtrip(pkts, data):
    n_fec = data.draw(st.integers(1, len(pkts) - 1))
    block = ProtectionBlock(tuple(pkts), n_fec, Fraction(10, 11), 0.1)
    assert blocks_from_json(blocks_to_json([block, block])) == [block, block]
