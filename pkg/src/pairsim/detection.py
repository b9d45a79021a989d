"""Receiver-side collision detection from channel occupancy.

An observer never decodes foreign frames. It only sees busy/idle durations:

    busy(> ACK) -> idle(= SIFS) -> busy(= ACK)   one successful transmission
    busy(> ACK) -> idle(> SIFS)                  one collision

and a collision longer than a maximum-size frame is flagged as
exceptionally long.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numba
import numpy as np

from .mac import MAX_FRAME_BYTES, ChannelTrace, MacParams, Segment, air_time

SUCCESS, COLLISION, LONG_COLLISION = "success", "collision", "long_collision"
KIND_CODES = {SUCCESS: 0, COLLISION: 1, LONG_COLLISION: 2}

RULE_VALUES = "rule1"  # received DH values differ, or a protocol frame after T
RULE_CONSECUTIVE = "rule2"  # m consecutive collisions
RULE_LONG = "rule3"  # exceptionally long collision


class TransmissionOutcome(NamedTuple):
    kind: str
    start: int
    duration: int
    own: bool = False
    decoded_source: Optional[str] = None

    @property
    def end(self) -> int:
        return self.start + self.duration

    @property
    def is_collision(self) -> bool:
        return self.kind != SUCCESS


def default_tolerance(params: MacParams) -> int:
    return params.slot


def long_collision_threshold(params: MacParams, tolerance: Optional[int] = None) -> int:
    """Busy time above which a collision counts as exceptionally long."""
    tol = default_tolerance(params) if tolerance is None else tolerance
    return air_time(MAX_FRAME_BYTES, params) + tol


class OccupancyClassifier:
    """Incremental occupancy-pattern classifier.

    Feed trace segments in order; each call returns the outcomes that became
    decidable. A pattern still open at the end of the trace stays pending.
    """

    def __init__(self, params: MacParams, tolerance: Optional[int] = None):
        self.params = params
        self.tol = default_tolerance(params) if tolerance is None else tolerance
        self.long_thr = long_collision_threshold(params, self.tol)
        self._short = params.ack_duration + self.tol
        self._cand: Optional[Segment] = None
        self._sifs_seen = False

    def _collision(self, seg: Segment) -> TransmissionOutcome:
        kind = LONG_COLLISION if seg.duration > self.long_thr else COLLISION
        return TransmissionOutcome(kind, seg.start, seg.duration, seg.own)

    def _fresh_busy(self, seg: Segment, out: list) -> None:
        if seg.duration <= self._short:
            return  # ACK or jam residue with no data frame in front of it
        if seg.duration > self.long_thr:
            out.append(self._collision(seg))
            return
        self._cand = seg
        self._sifs_seen = False

    def feed(self, seg: Segment) -> list:
        out: list = []
        cand = self._cand
        if seg.state == "idle":
            if cand is not None and not self._sifs_seen:
                if abs(seg.duration - self.params.sifs) <= self.tol:
                    self._sifs_seen = True
                else:
                    out.append(self._collision(cand))
                    self._cand = None
            return out
        if cand is not None:
            self._cand = None
            if self._sifs_seen and abs(seg.duration - self.params.ack_duration) <= self.tol:
                out.append(TransmissionOutcome(SUCCESS, cand.start, cand.duration, cand.own))
                return out
            out.append(self._collision(cand))
        self._fresh_busy(seg, out)
        return out


def classify_occupancy(trace: ChannelTrace | Iterable[Segment], params: MacParams,
                       tolerance: Optional[int] = None) -> list:
    segments = trace.segments if isinstance(trace, ChannelTrace) else trace
    clf = OccupancyClassifier(params, tolerance)
    out: list = []
    for seg in segments:
        out.extend(clf.feed(seg))
    return out


def classify_busy_arrays(starts: np.ndarray, ends: np.ndarray, params: MacParams,
                         tolerance: Optional[int] = None):
    """Vectorised equivalent of `classify_occupancy` for busy-interval arrays.

    Returns ``(kind_codes, starts, durations)`` for every decided outcome;
    the trailing busy period is left undecided.
    """
    tol = default_tolerance(params) if tolerance is None else tolerance
    starts = np.asarray(starts, dtype=np.int64)
    ends = np.asarray(ends, dtype=np.int64)
    dur = ends - starts
    n = dur.size
    if n < 2:
        empty = np.empty(0, dtype=np.int64)
        return empty.astype(np.int8), empty, empty
    long_thr = long_collision_threshold(params, tol)
    cand = dur[:-1] > params.ack_duration + tol
    gap = starts[1:] - ends[:-1]
    success = (cand & (np.abs(gap - params.sifs) <= tol)
               & (np.abs(dur[1:] - params.ack_duration) <= tol) & (dur[:-1] <= long_thr))
    idx = np.flatnonzero(cand)
    kinds = np.where(success[idx], 0, np.where(dur[idx] > long_thr, 2, 1)).astype(np.int8)
    return kinds, starts[idx], dur[idx]


# --------------------------------------------------------------------------
# consecutive-collision detector


def detector_update(x: int, i_n: int) -> int:
    """One step of the detector recurrence: ``i_n * (x + i_n)``."""
    return i_n * (x + i_n)


@dataclass
class DetectorState:
    """Consecutive-collision counter with alarm threshold `m`.

    Follows the detector's Markov chain: the observation after an alarm
    returns the counter to 0 whatever its value. `m` may be unknown (None)
    until the first protocol frame reveals it; `max_run` keeps enough history
    to judge the window retroactively.
    """

    m: Optional[int] = None
    x: int = 0
    alarm_count: int = 0
    run: int = 0
    max_run: int = 0
    history: int = 16
    last_collisions: deque = field(default_factory=deque)

    def observe(self, collision: bool, start: int = 0, end: int = 0) -> bool:
        i_n = 1 if collision else 0
        if self.m is not None and self.x >= self.m:
            self.x = 0
        else:
            self.x = detector_update(self.x, i_n)
        self.run = self.run + 1 if i_n else 0
        self.max_run = max(self.max_run, self.run)
        if i_n:
            self.last_collisions.append((start, end))
            while len(self.last_collisions) > self.history:
                self.last_collisions.popleft()
        else:
            self.last_collisions.clear()
        if self.m is not None and self.x >= self.m:
            self.alarm_count += 1
            return True
        return False


@numba.njit(cache=True)
def _scan_alarms(ind: np.ndarray, m: int) -> int:
    x = 0
    alarms = 0
    for k in range(ind.size):
        if x >= m:
            x = 0
        else:
            i_n = ind[k]
            x = i_n * (x + i_n)
        if x >= m:
            alarms += 1
    return alarms


def count_alarms(indicators: np.ndarray, m: int) -> int:
    """Number of alarms raised by the detector over an indicator stream."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return int(_scan_alarms(np.ascontiguousarray(indicators, dtype=np.int64), m))


def run_lengths(indicators: np.ndarray) -> np.ndarray:
    """Lengths of the maximal runs of ones."""
    ind = np.asarray(indicators, dtype=np.int8)
    if ind.size == 0:
        return np.empty(0, dtype=np.int64)
    padded = np.concatenate(([0], ind, [0]))
    d = np.diff(padded)
    return (np.flatnonzero(d == -1) - np.flatnonzero(d == 1)).astype(np.int64)


# --------------------------------------------------------------------------
# timestamp-pattern refinement


def interval_pattern_check(collisions: Sequence, params: MacParams) -> bool:
    """True iff every idle gap between consecutive collisions is SIFS+ACK+DIFS.

    `collisions` holds ``(start, end)`` pairs. A gap matches when it is less
    than one slot away from the protocol gap. Fewer than two collisions carry
    no evidence.
    """
    if len(collisions) < 2:
        return False
    target = params.protocol_gap
    for (_, prev_end), (start, _) in zip(collisions, list(collisions)[1:]):
        if abs((start - prev_end) - target) >= params.slot:
            return False
    return True


def pattern_alarm_runs(kinds: np.ndarray, starts: np.ndarray, durations: np.ndarray,
                       m: int, params: MacParams) -> int:
    """Count windows of m consecutive collisions whose gaps match the protocol gap."""
    coll = kinds != 0
    hits = 0
    k = 0
    n = kinds.size
    while k < n:
        if not coll[k]:
            k += 1
            continue
        j = k
        while j + 1 < n and coll[j + 1]:
            j += 1
        if j - k + 1 >= m:
            spans = [(int(starts[q]), int(starts[q] + durations[q])) for q in range(k, j + 1)]
            for q in range(0, len(spans) - m + 1):
                if interval_pattern_check(spans[q:q + m], params):
                    hits += 1
                    break
        k = j + 1
    return hits


# --------------------------------------------------------------------------
# rule evaluation


class Verdict(NamedTuple):
    ok: bool
    rule: Optional[str] = None
    time: Optional[int] = None


@dataclass
class DetectionContext:
    """Everything one party needs to judge the detection window."""

    params: MacParams
    window_start: int
    deadline: int
    detector: DetectorState = field(default_factory=DetectorState)
    dh_values: list = field(default_factory=list)
    pattern_check: bool = False
    alarms: list = field(default_factory=list)

    def _raise(self, rule: str, now: int) -> Verdict:
        self.alarms.append((rule, now))
        return Verdict(False, rule, now)

    def in_window(self, t: int) -> bool:
        return self.window_start <= t < self.deadline

    def set_threshold(self, m: int, now: int) -> Optional[Verdict]:
        """Fix m once known; judges the collisions already seen."""
        if self.detector.m is not None:
            return None
        self.detector.m = m
        if self.detector.max_run >= m:
            if not self.pattern_check or self._pattern_ok():
                return self._raise(RULE_CONSECUTIVE, now)
        return None

    def _pattern_ok(self) -> bool:
        m = self.detector.m
        recent = list(self.detector.last_collisions)[-m:]
        return len(recent) >= m and interval_pattern_check(recent, self.params)

    def observe_outcome(self, o: TransmissionOutcome) -> Optional[Verdict]:
        if o.own or not self.in_window(o.start):
            return None
        if o.kind == LONG_COLLISION:
            self.detector.observe(True, o.start, o.end)
            return self._raise(RULE_LONG, o.end)
        if self.detector.observe(o.is_collision, o.start, o.end):
            if not self.pattern_check or self._pattern_ok():
                return self._raise(RULE_CONSECUTIVE, o.end)
        return None

    def observe_value(self, value: int, now: int) -> Optional[Verdict]:
        if now >= self.deadline:
            self.dh_values.append(value)
            return self._raise(RULE_VALUES, now)
        self.dh_values.append(value)
        if any(v != self.dh_values[0] for v in self.dh_values):
            return self._raise(RULE_VALUES, now)
        return None


def evaluate_rules(ctx: DetectionContext, outcomes: Iterable[TransmissionOutcome],
                   dh_values: Iterable = ()) -> Verdict:
    """Batch verdict over a classified outcome stream and received DH values.

    `dh_values` holds plain values or ``(value, arrival_time)`` pairs.
    Returns the earliest alarm, or ok.
    """
    first: Optional[Verdict] = None
    for item in dh_values:
        value, when = item if isinstance(item, tuple) else (item, ctx.window_start)
        v = ctx.observe_value(value, when)
        if v is not None and (first is None or v.time < first.time):
            first = v
    for o in outcomes:
        v = ctx.observe_outcome(o)
        if v is not None and (first is None or v.time < first.time):
            first = v
    return first if first is not None else Verdict(True)


# --------------------------------------------------------------------------
# offline re-classification from an event log


def read_event_log(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def trace_from_event_log(rows: Iterable[dict], observer: Optional[str] = None,
                         t_end: Optional[int] = None) -> ChannelTrace:
    """Rebuild what `observer` senses from frame start/end rows of an event log.

    With no observer, every frame is assumed audible.
    """
    starts: dict = {}
    intervals = []
    for row in rows:
        kind = row["event_kind"]
        if not (kind.endswith("_start") or kind.endswith("_end")):
            continue
        frame_kind, edge = kind.rsplit("_", 1)
        key = (row["station"], frame_kind)
        t = int(row["time_us"])
        if edge == "start":
            audience = row.get("outcome") or ""
            heard = True
            if observer is not None and audience.startswith("to:"):
                heard = observer in audience[3:].split("|") or row["station"] == observer
            starts.setdefault(key, []).append((t, heard))
        else:
            t0, heard = starts[key].pop(0)
            if heard:
                intervals.append((t0, t))
    if t_end is not None:
        # frames still on the air when the run stopped
        for pending in starts.values():
            intervals.extend((t0, t_end) for t0, heard in pending if heard and t0 < t_end)
    intervals.sort()
    merged: list = []
    for s, e in intervals:
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    trace = ChannelTrace.from_busy(observer or "*", [m[0] for m in merged],
                                   [m[1] for m in merged])
    if t_end is not None and merged and t_end > merged[-1][1]:
        trace.segments.append(Segment("idle", merged[-1][1], t_end - merged[-1][1]))
    return trace
