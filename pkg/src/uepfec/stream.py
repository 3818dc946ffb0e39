"""Synthetic GOP-structured packet streams and protection-block partitioning.

Packets carry a distortion weight equal to the number of packets of the same
GOP whose decoding depends on them.  With one intra frame followed by
predicted frames, a packet is needed by every later packet of its GOP, so
the weight is simply the size of the GOP suffix starting at that packet.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

DEFAULT_PAYLOAD_BYTES = 1348


@dataclass(frozen=True)
class GopSpec:
    frames_per_gop: int = 12
    frame_rate: float = 25.0
    intra_ratio: float = 4.0
    size_jitter: float = 0.2

    def __post_init__(self) -> None:
        if self.frames_per_gop < 1:
            raise ValueError("frames_per_gop must be >= 1")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.intra_ratio <= 0:
            raise ValueError("intra_ratio must be positive")

    @property
    def structure(self) -> tuple[str, ...]:
        return ("I",) + ("P",) * (self.frames_per_gop - 1)


@dataclass(frozen=True)
class StreamPacket:
    seq: int
    payload_bytes: int
    gop_index: int
    frame_index: int
    distortion_weight: float = 1.0

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "bytes": self.payload_bytes,
            "gop": self.gop_index,
            "frame": self.frame_index,
            "weight": self.distortion_weight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamPacket":
        return cls(int(d["seq"]), int(d["bytes"]), int(d["gop"]), int(d["frame"]), float(d["weight"]))


@dataclass(frozen=True)
class ProtectionBlock:
    packets: tuple[StreamPacket, ...]
    n_fec: int
    code_rate: Fraction
    fec_window_seconds: float

    def __post_init__(self) -> None:
        if self.n_fec < 1:
            raise ValueError("a protection block needs at least one repair packet")
        if self.n_fec >= len(self.packets):
            raise ValueError(f"n_fec={self.n_fec} must be smaller than n_data={len(self.packets)}")

    @property
    def n_data(self) -> int:
        return len(self.packets)

    @property
    def seqs(self) -> list[int]:
        return [p.seq for p in self.packets]

    @property
    def weights(self) -> np.ndarray:
        return np.array([p.distortion_weight for p in self.packets], dtype=float)

    def to_dict(self) -> dict:
        return {
            "n_data": self.n_data,
            "n_fec": self.n_fec,
            "code_rate": str(self.code_rate),
            "fec_window_seconds": self.fec_window_seconds,
            "packets": [p.to_dict() for p in self.packets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtectionBlock":
        return cls(
            packets=tuple(StreamPacket.from_dict(p) for p in d["packets"]),
            n_fec=int(d["n_fec"]),
            code_rate=Fraction(d["code_rate"]),
            fec_window_seconds=float(d["fec_window_seconds"]),
        )


def make_block(weights: Sequence[float], n_fec: int, code_rate: Fraction | str = Fraction(5, 6),
               fec_window_seconds: float = 0.1, payload_bytes: int = DEFAULT_PAYLOAD_BYTES) -> ProtectionBlock:
    """Build a block directly from a weight vector (seq = position)."""
    packets = tuple(
        StreamPacket(seq=i, payload_bytes=payload_bytes, gop_index=0, frame_index=0, distortion_weight=float(w))
        for i, w in enumerate(weights)
    )
    return ProtectionBlock(packets, n_fec, Fraction(code_rate), fec_window_seconds)


def _exact(x: float | int | Fraction | str) -> Fraction:
    # decimal-string route keeps 0.1 s windows from landing a hair under an integer
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def packet_count(bitrate_bps: float, duration_s: float, payload_bytes: int = DEFAULT_PAYLOAD_BYTES) -> int:
    return math.floor(_exact(bitrate_bps) * _exact(duration_s) / (8 * payload_bytes))


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def repair_count(n_data: int, code_rate: Fraction | str | float) -> int:
    """N_FEC for a block of ``n_data`` packets at minimum code rate ``code_rate``."""
    r = _exact(code_rate)
    if not 0 < r < 1:
        raise ValueError("code_rate must lie in (0, 1)")
    return round_half_up(n_data * (1 / r - 1))


def block_dimensions(bitrate_bps: float, fec_window_seconds: float, code_rate: Fraction | str | float,
                     payload_bytes: int = DEFAULT_PAYLOAD_BYTES) -> tuple[int, int]:
    n_data = packet_count(bitrate_bps, fec_window_seconds, payload_bytes)
    return n_data, repair_count(n_data, code_rate)


def _frame_allotment(n_packets: int, kinds: Sequence[str], intra_ratio: float, jitter: np.ndarray) -> list[int]:
    n_frames = len(kinds)
    sizes = np.array([intra_ratio if k == "I" else 1.0 for k in kinds]) * jitter
    counts = [1] * n_frames
    spare = n_packets - n_frames
    share = np.floor(spare * sizes / sizes.sum()).astype(int)
    for f in range(n_frames):
        counts[f] += int(share[f])
    remainder = spare - int(share.sum())
    intra = [f for f, k in enumerate(kinds) if k == "I"]
    for i in range(remainder):
        counts[intra[i % len(intra)]] += 1
    return counts


def synthesize_stream(bitrate_bps: float, duration_s: float, payload_bytes: int = DEFAULT_PAYLOAD_BYTES,
                      gop: GopSpec = GopSpec(), seed: int = 0) -> list[StreamPacket]:
    """Constant-bitrate packet stream laid over a repeating I P P ... GOP pattern.

    The seed only perturbs relative frame sizes; the packet count is fixed by
    the bitrate.  Weights are filled in.
    """
    if bitrate_bps <= 0 or duration_s <= 0 or payload_bytes <= 0:
        raise ValueError("bitrate, duration and payload size must be positive")
    n = packet_count(bitrate_bps, duration_s, payload_bytes)
    if n == 0:
        raise ValueError("parameters yield an empty stream")
    n_frames = max(1, round(float(_exact(duration_s) * _exact(gop.frame_rate))))
    n_frames = min(n_frames, n)
    structure = gop.structure
    kinds = [structure[f % gop.frames_per_gop] for f in range(n_frames)]
    rng = np.random.default_rng(seed)
    jitter = rng.lognormal(0.0, gop.size_jitter, size=n_frames) if gop.size_jitter > 0 else np.ones(n_frames)
    counts = _frame_allotment(n, kinds, gop.intra_ratio, jitter)

    packets = []
    seq = 0
    for f, c in enumerate(counts):
        for _ in range(c):
            packets.append(StreamPacket(seq, payload_bytes, f // gop.frames_per_gop, f % gop.frames_per_gop))
            seq += 1
    return compute_distortion_weights(packets, gop)


def compute_distortion_weights(packets: Sequence[StreamPacket], gop: GopSpec | None = None) -> list[StreamPacket]:
    """Assign D_p = number of packets from p to the end of its GOP."""
    remaining: dict[int, int] = {}
    for p in packets:
        remaining[p.gop_index] = remaining.get(p.gop_index, 0) + 1
    out = []
    for p in packets:
        out.append(replace(p, distortion_weight=float(remaining[p.gop_index])))
        remaining[p.gop_index] -= 1
    return out


def partition_blocks(stream: Sequence[StreamPacket], fec_window_seconds: float, code_rate: Fraction | str | float,
                     bitrate_bps: float, payload_bytes: int = DEFAULT_PAYLOAD_BYTES) -> list[ProtectionBlock]:
    if fec_window_seconds <= 0:
        raise ValueError("fec_window_seconds must be positive")
    n_data, n_fec = block_dimensions(bitrate_bps, fec_window_seconds, code_rate, payload_bytes)
    if n_fec == 0:
        raise ValueError(f"a block of {n_data} packets gets no repair packets at rate {code_rate}")
    if n_data == 0:
        raise ValueError("FEC window too short for a single packet")
    rate = _exact(code_rate)
    return [
        ProtectionBlock(tuple(stream[i:i + n_data]), n_fec, rate, fec_window_seconds)
        for i in range(0, len(stream) - n_data + 1, n_data)
    ]


def stream_to_json(packets: Iterable[StreamPacket]) -> str:
    return json.dumps({"packets": [p.to_dict() for p in packets]}, indent=1)


def stream_from_json(text: str) -> list[StreamPacket]:
    return [StreamPacket.from_dict(d) for d in json.loads(text)["packets"]]


def blocks_to_json(blocks: Iterable[ProtectionBlock]) -> str:
    return json.dumps({"blocks": [b.to_dict() for b in blocks]}, indent=1)


def blocks_from_json(text: str) -> list[ProtectionBlock]:
    return [ProtectionBlock.from_dict(d) for d in json.loads(text)["blocks"]]
