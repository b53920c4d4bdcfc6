"""Layered VR video source: resolution ladder, frame generation, packetized delivery.

Frame sizes come either from a CSV trace (one column per ladder level, cycled)
or from a log-normal synthetic generator matched to each level's mean size and
coefficient of variation.  Frames are decremented in whole packets; only a
frame's final packet may be smaller than ``packet_bits``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PACKET_BITS_DEFAULT = 12_000  # 1500-byte MTU-like packets

# label -> pixel count; frame bits scale with pixels at fixed bits/pixel
_LADDER_PIXELS = [
    ("480P", 854 * 480),
    ("720P", 1280 * 720),
    ("1080P", 1920 * 1080),
    ("1440P", 2560 * 1440),
    ("4K", 3840 * 2160),
    ("5K", 5120 * 2880),
    ("8K", 7680 * 4320),
]


class FrameStateError(Exception):
    """Operation applied to a frame in the wrong lifecycle state."""


class TraceFormatError(Exception):
    """Frame-size trace file violates the expected format."""


@dataclass(frozen=True)
class LadderLevel:
    index: int
    label: str
    mean_frame_bits: float
    size_cv: float


@dataclass(frozen=True)
class ResolutionLadder:
    levels: tuple[LadderLevel, ...]

    def __post_init__(self) -> None:
        bits = [lv.mean_frame_bits for lv in self.levels]
        if any(b <= 0 for b in bits):
            raise ValueError("mean_frame_bits must be positive")
        if any(b2 <= b1 for b1, b2 in zip(bits, bits[1:])):
            raise ValueError("mean_frame_bits must be strictly increasing with level")

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def top_bits(self) -> float:
        return self.levels[-1].mean_frame_bits

    def mean_bits(self, level: int) -> float:
        return self.levels[level].mean_frame_bits


def default_ladder(bits_per_pixel: float = 0.2, size_cv: float = 0.2) -> ResolutionLadder:
    levels = tuple(
        LadderLevel(i, label, px * bits_per_pixel, size_cv)
        for i, (label, px) in enumerate(_LADDER_PIXELS)
    )
    return ResolutionLadder(levels)


@dataclass
class Frame:
    frame_id: int
    user_id: int
    level: int
    size_bits: int
    arrival_slot: int
    deadline_slot: int
    remaining_bits: int
    outcome: str = "pending"  # pending | delivered | failed

    def __post_init__(self) -> None:
        if self.deadline_slot <= self.arrival_slot:
            raise ValueError("deadline_slot must be after arrival_slot")
        if not 0 <= self.remaining_bits <= self.size_bits:
            raise ValueError("remaining_bits out of range")


@dataclass
class FrameTrace:
    """Per-level frame-size sequences loaded from CSV (bits, cycled on reuse)."""

    sizes: tuple[tuple[int, ...], ...]  # one tuple per ladder level

    @property
    def n_levels(self) -> int:
        return len(self.sizes)

    def lengths(self) -> tuple[int, ...]:
        return tuple(len(col) for col in self.sizes)


def load_trace(path, n_levels: int = 7) -> FrameTrace:
    """Parse a frame-size trace CSV: header l0..l{n-1}, positive bits per cell."""
    expected_header = [f"l{i}" for i in range(n_levels)]
    cols: list[list[int]] = [[] for _ in range(n_levels)]
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise TraceFormatError(f"{path}: no frames (empty file)")
        names = [h.strip() for h in header.rstrip("\n").split(",")]
        if names != expected_header:
            raise TraceFormatError(
                f"{path}:1: expected header {','.join(expected_header)}, got {','.join(names)}"
            )
        lineno = 1
        for line in fh:
            lineno += 1
            if not line.strip():
                continue
            cells = line.rstrip("\n").split(",")
            if len(cells) != n_levels:
                raise TraceFormatError(f"{path}:{lineno}: expected {n_levels} columns, got {len(cells)}")
            for i, cell in enumerate(cells):
                try:
                    size = int(cell)
                except ValueError as exc:
                    raise TraceFormatError(f"{path}:{lineno}: malformed size {cell!r}") from exc
                if size <= 0:
                    raise TraceFormatError(f"{path}:{lineno}: non-positive frame size {size}")
                cols[i].append(size)
    if not cols[0]:
        raise TraceFormatError(f"{path}: no frames")
    return FrameTrace(sizes=tuple(tuple(c) for c in cols))


class FrameSource:
    """Per-user frame generator over a ladder, synthetic or trace-driven."""

    def __init__(
        self,
        user_id: int,
        ladder: ResolutionLadder,
        frame_interval_slots: int,
        deadline_slots: int,
        rng: np.random.Generator | None = None,
        trace: FrameTrace | None = None,
    ):
        if trace is None and rng is None:
            raise ValueError("synthetic mode needs an rng")
        if trace is not None and trace.n_levels != len(ladder):
            raise ValueError("trace level count does not match ladder")
        self.user_id = user_id
        self.ladder = ladder
        self.frame_interval_slots = frame_interval_slots
        self.deadline_slots = deadline_slots
        self.rng = rng
        self.trace = trace
        self._next_id = 0
        self._trace_pos = [0] * len(ladder)

    def next_frame(self, level: int, now: int) -> Frame:
        if not 0 <= level < len(self.ladder):
            raise ValueError(f"unknown ladder level {level}")
        if self.trace is not None:
            col = self.trace.sizes[level]
            size = col[self._trace_pos[level] % len(col)]
            self._trace_pos[level] += 1
        else:
            lv = self.ladder.levels[level]
            sigma2 = math.log(1.0 + lv.size_cv**2)
            mu = math.log(lv.mean_frame_bits) - sigma2 / 2.0
            size = max(1, int(round(self.rng.lognormal(mu, math.sqrt(sigma2)))))
        frame = Frame(
            frame_id=self._next_id,
            user_id=self.user_id,
            level=level,
            size_bits=size,
            arrival_slot=now,
            deadline_slot=now + self.deadline_slots,
            remaining_bits=size,
        )
        self._next_id += 1
        return frame


def transmit(frame: Frame, budget_bits: float, packet_bits: int = PACKET_BITS_DEFAULT) -> int:
    """Send whole packets from ``frame`` within ``budget_bits``; returns bits consumed.

    The frame is mutated in place; it becomes ``delivered`` when drained.  Only
    the final packet of a frame may be smaller than ``packet_bits``.
    """
    if frame.outcome != "pending":
        raise FrameStateError(f"transmit on {frame.outcome} frame {frame.frame_id}")
    if budget_bits < 0:
        raise ValueError("budget_bits must be >= 0")
    full, tail = divmod(frame.remaining_bits, packet_bits)
    sendable_full = min(full, int(budget_bits // packet_bits))
    consumed = sendable_full * packet_bits
    if sendable_full == full and tail and budget_bits - consumed >= tail:
        consumed += tail
    frame.remaining_bits -= consumed
    if frame.remaining_bits == 0:
        frame.outcome = "delivered"
    return consumed


def expire(frame: Frame, now: int) -> bool:
    """Fail the frame (dropping residual bits) once its deadline has passed.

    No-op on frames already delivered: delivery is checked before expiry.
    """
    if frame.outcome == "pending" and now >= frame.deadline_slot and frame.remaining_bits > 0:
        frame.outcome = "failed"
        return True
    return False
