"""802.11 DCF building blocks: timing constants, backoff rules, frames and traces.

All times are integer microseconds.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np

MAX_FRAME_BYTES = 2304
ACK_BYTES = 14
BG_PAYLOAD_MIN = 500
BG_PAYLOAD_MAX = 2000

DATA_KINDS = frozenset({"data", "key_exchange", "forged_data"})
ACK_KINDS = frozenset({"ack", "forged_ack"})
FRAME_KINDS = DATA_KINDS | ACK_KINDS | {"jam"}


class ConfigError(ValueError):
    """Raised for invalid simulator or protocol configuration."""


@dataclass(frozen=True)
class MacParams:
    slot: int = 9
    difs: int = 34
    sifs: int = 18
    ack_duration: int = 28
    cw_min: int = 32
    beta: int = 6
    retry_limit: int = 7
    bitrate: int = 54_000_000
    phy_overhead: int = 20

    @property
    def cw_max(self) -> int:
        return (2 ** self.beta) * self.cw_min

    @property
    def eifs(self) -> int:
        # deferral after an undecodable busy period
        return self.sifs + self.ack_duration + self.difs

    @property
    def ack_timeout(self) -> int:
        return self.sifs + self.ack_duration + self.slot

    @property
    def protocol_gap(self) -> int:
        """Idle time between back-to-back priority frames."""
        return self.sifs + self.ack_duration + self.difs

    def validate(self) -> "MacParams":
        for name in ("slot", "difs", "sifs", "ack_duration", "bitrate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"mac.{name} must be positive")
        if self.phy_overhead < 0:
            raise ConfigError("mac.phy_overhead must be non-negative")
        if self.sifs >= self.difs:
            raise ConfigError("mac.sifs must be smaller than mac.difs")
        if self.cw_min < 2:
            raise ConfigError("mac.cw_min must be at least 2")
        if self.beta < 0 or self.retry_limit < 0:
            raise ConfigError("mac.beta and mac.retry_limit must be non-negative")
        if self.ack_duration >= air_time(BG_PAYLOAD_MIN, self):
            raise ConfigError("mac.ack_duration must be shorter than any data frame")
        return self


def air_time(payload_len: int, params: MacParams) -> int:
    """Air time of a frame carrying `payload_len` bytes, rounded up to whole µs."""
    if payload_len <= 0:
        raise ValueError("payload_len must be positive")
    bits = payload_len * 8 * 1_000_000
    return -(-bits // params.bitrate) + params.phy_overhead


def backoff_draw(cw: int, rng) -> int:
    """Uniform backoff counter in {0, ..., cw-1}.

    `rng` needs a ``random()`` method returning a float in [0, 1).
    """
    if cw < 2:
        raise ConfigError(f"contention window must be >= 2, got {cw}")
    return int(rng.random() * cw)


def next_window(cw: int, retries: int, params: MacParams) -> tuple[int, int, bool]:
    """Contention window and retry count after a failed attempt.

    Returns ``(cw, retries, discarded)``.
    """
    if retries < params.retry_limit:
        return min(2 * cw, params.cw_max), retries + 1, False
    return params.cw_min, 0, True


@dataclass
class StationState:
    id: str
    cw: int
    backoff: int = 0
    retries: int = 0
    queue: list = field(default_factory=list)
    mode: str = "saturated"
    rate: float = 0.0


def on_tx_failure(state: StationState, params: MacParams) -> StationState:
    cw, retries, discarded = next_window(state.cw, state.retries, params)
    queue = state.queue[1:] if discarded else state.queue
    return dataclasses.replace(state, cw=cw, retries=retries, queue=queue)


# --------------------------------------------------------------------------
# frames and traces


@dataclass(eq=False)
class Frame:
    kind: str
    tx: str  # physical transmitter
    src: str  # address claimed in the header
    dest: Optional[str]
    payload_len: int
    duration: int
    audible_to: Optional[frozenset] = None  # None: every node hears it
    message: object = None
    index: int = 0
    priority: bool = False
    start: int = -1
    fid: int = -1
    overlaps: list = field(default_factory=list, repr=False)

    @property
    def end(self) -> int:
        return self.start + self.duration

    def audible(self, node: str) -> bool:
        return self.audible_to is None or node in self.audible_to


def make_frame(kind: str, tx: str, dest: Optional[str], payload_len: int,
               params: MacParams, src: Optional[str] = None, **kw) -> Frame:
    if kind not in FRAME_KINDS:
        raise ValueError(f"unknown frame kind {kind!r}")
    if kind == "jam" and dest is not None:
        raise ValueError("jam frames have no destination")
    if kind in ACK_KINDS:
        duration = params.ack_duration
    elif kind == "jam":
        duration = kw.pop("duration")
    else:
        duration = air_time(payload_len, params)
    return Frame(kind=kind, tx=tx, src=src or tx, dest=dest,
                 payload_len=payload_len, duration=duration, **kw)


class Segment(NamedTuple):
    state: str  # "busy" | "idle"
    start: int
    duration: int
    own: bool = False

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass
class ChannelTrace:
    observer: str
    segments: list = field(default_factory=list)

    def busy_segments(self) -> list:
        return [s for s in self.segments if s.state == "busy"]

    def check(self) -> None:
        prev = None
        for seg in self.segments:
            if seg.duration <= 0:
                raise AssertionError(f"non-positive segment {seg}")
            if prev is not None:
                if seg.state == prev.state:
                    raise AssertionError(f"segments do not alternate at {seg.start}")
                if seg.start != prev.end:
                    raise AssertionError(f"gap in trace at {prev.end}")
            prev = seg

    @classmethod
    def from_busy(cls, observer: str, starts: Iterable[int], ends: Iterable[int],
                  t0: int = 0) -> "ChannelTrace":
        segs = []
        cursor = t0
        for s, e in zip(starts, ends):
            s, e = int(s), int(e)
            if s > cursor:
                segs.append(Segment("idle", cursor, s - cursor))
            elif segs and s < cursor:
                raise ValueError("overlapping busy periods")
            if segs and segs[-1].state == "busy" and s == cursor:
                last = segs.pop()
                segs.append(Segment("busy", last.start, e - last.start))
            else:
                segs.append(Segment("busy", s, e - s))
            cursor = e
        return cls(observer, segs)


class TraceRecorder:
    """Builds a ChannelTrace from busy/idle transitions.

    A busy period is held back until the following idle period proves to be
    non-empty, so back-to-back frames merge into one busy segment.
    """

    def __init__(self, observer: str, listener=None):
        self.trace = ChannelTrace(observer)
        self.listener = listener
        self._busy = False
        self._since = 0
        self._own = False
        self._pending: Optional[Segment] = None

    def _emit(self, seg: Segment) -> None:
        self.trace.segments.append(seg)
        if self.listener is not None:
            self.listener(seg)

    def went_busy(self, now: int, own: bool) -> None:
        if self._pending is not None and now == self._since:
            seg = self._pending
            self._pending = None
            self._since, self._own = seg.start, seg.own or own
        else:
            if self._pending is not None:
                self._emit(self._pending)
                self._pending = None
            if now > self._since:
                self._emit(Segment("idle", self._since, now - self._since))
            self._since, self._own = now, own
        self._busy = True

    def mark_own(self) -> None:
        self._own = True

    def went_idle(self, now: int) -> None:
        self._pending = Segment("busy", self._since, now - self._since, self._own)
        self._busy = False
        self._since = now
        self._own = False

    def flush(self, now: int) -> ChannelTrace:
        """Emit whatever is still open at `now` (end of simulation)."""
        if self._pending is not None:
            self._emit(self._pending)
            self._pending = None
        if now > self._since:
            state = "busy" if self._busy else "idle"
            self._emit(Segment(state, self._since, now - self._since, self._own))
            self._since = now
        return self.trace


class MediumResolution(NamedTuple):
    start: int
    end: int
    delivered: Optional[Frame]  # frame decoded intact at the observer
    collided: bool  # two or more overlapping frames, or any jam
    frames: tuple


def resolve_medium(active: Iterable[Frame], observer: str) -> MediumResolution:
    """Resolve one busy period as seen by `observer`.

    A single audible frame is decoded intact unless it is the observer's own
    transmission or a jam; two or more overlapping frames (jams included)
    leave every one of them undecodable. The busy span is the union.
    """
    frames = tuple(active)
    if not frames:
        raise ValueError("empty busy period")
    start = min(f.start for f in frames)
    end = max(f.end for f in frames)
    has_jam = any(f.kind == "jam" for f in frames)
    if len(frames) == 1 and not has_jam:
        f = frames[0]
        delivered = None if f.tx == observer else f
        return MediumResolution(start, end, delivered, False, frames)
    return MediumResolution(start, end, None, True, frames)


# --------------------------------------------------------------------------
# random streams


class ChunkedStream:
    """Prefix-stable stream of draws from one numpy Generator.

    Values are produced in fixed-size chunks, so `prefix(n)` and repeated
    `next()` calls see the same sequence.
    """

    CHUNK = 512

    def __init__(self, rng: np.random.Generator, kind: str = "uniform"):
        self._rng = rng
        self._kind = kind
        self._buf = np.empty(0)
        self._pos = 0

    def _grow(self, need: int) -> None:
        parts = [self._buf]
        have = self._buf.size
        while have < need:
            if self._kind == "uniform":
                parts.append(self._rng.random(self.CHUNK))
            else:
                parts.append(self._rng.standard_exponential(self.CHUNK))
            have += self.CHUNK
        self._buf = np.concatenate(parts)

    def prefix(self, n: int) -> np.ndarray:
        if n > self._buf.size:
            self._grow(n)
        return self._buf[:n]

    def next(self) -> float:
        if self._pos >= self._buf.size:
            self._grow(self._pos + 1)
        v = float(self._buf[self._pos])
        self._pos += 1
        return v

    random = next


class StationStreams:
    """Independent backoff, payload and inter-arrival streams for one station."""

    def __init__(self, seed: int, index: int):
        self.backoff = ChunkedStream(np.random.default_rng([seed, index, 0]))
        self.payload = ChunkedStream(np.random.default_rng([seed, index, 1]))
        self.arrival = ChunkedStream(np.random.default_rng([seed, index, 2]), "exponential")


def payload_from_uniform(u: float) -> int:
    return BG_PAYLOAD_MIN + int(u * (BG_PAYLOAD_MAX - BG_PAYLOAD_MIN + 1))


def mean_interarrival_us(rate_bps: float) -> float:
    """Mean frame inter-arrival (µs) giving `rate_bps` of payload bits."""
    mean_bits = 8 * (BG_PAYLOAD_MIN + BG_PAYLOAD_MAX) / 2
    return mean_bits * 1e6 / rate_bps


def arrival_gap(e: float, mean_gap: float) -> int:
    return max(1, math.ceil(e * mean_gap))
