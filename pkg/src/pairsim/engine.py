"""Event-driven single-collision-domain DCF simulator.

Each node keeps its own view of the medium (which frames it can hear), its
own busy/idle trace and its own deferral state. Ties at equal timestamps are
broken by event priority and then by scheduling order, so a run is fully
determined by its configuration and seed.
"""

from __future__ import annotations

import heapq
from collections import deque
from typing import Callable, Optional

from .detection import OccupancyClassifier
from .mac import (ACK_BYTES, ACK_KINDS, DATA_KINDS, Frame, MacParams, StationStreams,
                  TraceRecorder, arrival_gap, backoff_draw, make_frame, mean_interarrival_us,
                  next_window, payload_from_uniform, resolve_medium)

# priorities for events sharing a timestamp
ARRIVAL, FRAME_END, TIMEOUT, TIMER, TX = -1, 0, 1, 2, 3

LOG_COLUMNS = ("time_us", "event_kind", "station", "dest", "payload_len", "outcome")


class Simulator:
    def __init__(self, params: MacParams, t_end: int, log: bool = True):
        self.params = params
        self.t_end = t_end
        self.now = 0
        self.nodes: dict = {}
        self.watchers: list = []
        self.log: Optional[list] = [] if log else None
        self._queue: list = []
        self._seq = 0
        self._fid = 0
        self._active: list = []

    def add(self, node: "Node") -> "Node":
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id!r}")
        node.sim = self
        self.nodes[node.id] = node
        return node

    def watch(self, hook) -> None:
        """Register an object whose ``on_frame_start(frame, now)`` sees every frame."""
        self.watchers.append(hook)

    def schedule(self, time: int, prio: int, fn: Callable, *args) -> None:
        if time < self.now:
            raise AssertionError(f"event scheduled in the past: {time} < {self.now}")
        self._seq += 1
        heapq.heappush(self._queue, (time, prio, self._seq, fn, args))

    def record(self, kind: str, station: str, dest: Optional[str] = None,
               payload_len: int = 0, outcome: str = "") -> None:
        if self.log is not None:
            self.log.append((self.now, kind, station, dest or "", payload_len, outcome))

    def run(self) -> None:
        for node in self.nodes.values():
            node.start(0)
        q = self._queue
        while q and q[0][0] <= self.t_end:
            time, _, _, fn, args = heapq.heappop(q)
            self.now = time
            fn(*args)
        self.now = self.t_end
        for node in self.nodes.values():
            node.finish(self.t_end)

    # -- medium ---------------------------------------------------------

    def transmit(self, frame: Frame) -> Frame:
        frame.start = self.now
        self._fid += 1
        frame.fid = self._fid
        frame.overlaps = []
        for other in self._active:
            other.overlaps.append(frame)
            frame.overlaps.append(other)
        self._active.append(frame)
        audience = ""
        if frame.audible_to is not None:
            audience = "to:" + "|".join(sorted(frame.audible_to))
        self.record(f"{frame.kind}_start", frame.tx, frame.dest, frame.payload_len, audience)
        for node in list(self.nodes.values()):
            if node.hears(frame):
                node.hear_start(frame, self.now)
        self.schedule(frame.end, FRAME_END, self._frame_end, frame)
        for hook in self.watchers:
            hook.on_frame_start(frame, self.now)
        return frame

    def _frame_end(self, frame: Frame) -> None:
        self._active.remove(frame)
        outcome = ""
        if frame.dest is not None:
            dest = self.nodes.get(frame.dest)
            ok = dest is not None and dest.hears(frame) and not any(
                g.tx == frame.dest or dest.hears(g) for g in frame.overlaps)
            outcome = "delivered" if ok else "undecodable"
        self.record(f"{frame.kind}_end", frame.tx, frame.dest, frame.payload_len, outcome)
        for node in list(self.nodes.values()):
            if node.hears(frame):
                node.hear_end(frame, self.now)


class Node:
    """A radio in the collision domain with its own view of the medium."""

    def __init__(self, node_id: str, params: MacParams, record_trace: bool = False):
        self.id = node_id
        self.params = params
        self.sim: Optional[Simulator] = None
        self.busy = 0
        self.idle_since = 0
        self.defer = params.difs
        self._period: list = []
        self.recorder: Optional[TraceRecorder] = None
        self.classifier: Optional[OccupancyClassifier] = None
        self.outcomes: list = []
        if record_trace:
            self.classifier = OccupancyClassifier(params)
            self.recorder = TraceRecorder(node_id, self._segment)

    def _segment(self, seg) -> None:
        for o in self.classifier.feed(seg):
            self.outcomes.append(o)
            self.on_outcome(o, self.sim.now)

    def hears(self, frame: Frame) -> bool:
        return frame.tx == self.id or frame.audible(self.id)

    def hear_start(self, frame: Frame, now: int) -> None:
        own = frame.tx == self.id
        if self.busy == 0:
            if self.recorder is not None:
                self.recorder.went_busy(now, own)
            self.busy = 1
            self._period = [frame]
            self.on_busy(now)
            return
        if own and self.recorder is not None:
            self.recorder.mark_own()
        self.busy += 1
        self._period.append(frame)

    def hear_end(self, frame: Frame, now: int) -> None:
        self.busy -= 1
        if self.busy:
            return
        res = resolve_medium(self._period, self.id)
        self._period = []
        if self.recorder is not None:
            self.recorder.went_idle(now)
        self.idle_since = now
        self.defer = self.params.eifs if res.collided else self.params.difs
        if res.delivered is not None:
            f = res.delivered
            if f.kind in DATA_KINDS and f.dest == self.id:
                ack = make_frame("ack", self.id, f.src, ACK_BYTES, self.params)
                self.sim.schedule(now + self.params.sifs, TX, self.sim.transmit, ack)
            self.on_delivered(f, now)
        self.on_idle(now, res)

    # hooks
    def start(self, now: int) -> None:
        pass

    def finish(self, now: int) -> None:
        if self.recorder is not None:
            self.recorder.flush(now)

    def on_busy(self, now: int) -> None:
        pass

    def on_idle(self, now: int, res) -> None:
        pass

    def on_delivered(self, frame: Frame, now: int) -> None:
        pass

    def on_outcome(self, outcome, now: int) -> None:
        pass


class Station(Node):
    """DCF station with a FIFO queue and binary exponential backoff.

    Frames flagged ``priority`` skip the backoff and go out DIFS after the
    medium turns idle.
    """

    def __init__(self, node_id: str, params: MacParams, streams: StationStreams,
                 mode: str = "silent", rate_bps: float = 0.0, dest: str = "ap",
                 record_trace: bool = False):
        super().__init__(node_id, params, record_trace)
        self.streams = streams
        self.mode = mode
        self.dest = dest
        self.mean_gap = mean_interarrival_us(rate_bps) if mode == "poisson" else 0.0
        self.queue: deque = deque()
        self.state = "idle"  # idle | contend | wait_ack
        self.cw = params.cw_min
        self.retries = 0
        self.backoff = 0
        self.countdown_from: Optional[int] = None
        self.tx_time: Optional[int] = None
        self._token = 0
        self.n_attempts = 0
        self.current: Optional[Frame] = None

    # -- traffic ---------------------------------------------------------

    def _background_frame(self) -> Frame:
        payload = payload_from_uniform(self.streams.payload.next())
        return make_frame("data", self.id, self.dest, payload, self.params)

    def start(self, now: int) -> None:
        if self.mode == "saturated":
            self.enqueue(self._background_frame(), now)
        elif self.mode == "poisson":
            gap = arrival_gap(self.streams.arrival.next(), self.mean_gap)
            self.sim.schedule(now + gap, ARRIVAL, self._arrival)

    def _arrival(self) -> None:
        now = self.sim.now
        gap = arrival_gap(self.streams.arrival.next(), self.mean_gap)
        self.sim.schedule(now + gap, ARRIVAL, self._arrival)
        self.enqueue(self._background_frame(), now)

    def enqueue(self, frame: Frame, now: int) -> None:
        self.queue.append(frame)
        if self.state == "idle":
            self._new_head(now)

    # -- contention --------------------------------------------------------

    def _new_head(self, now: int) -> None:
        if not self.queue:
            self.state = "idle"
            return
        self.state = "contend"
        if not self.queue[0].priority:
            self.backoff = backoff_draw(self.cw, self.streams.backoff)
        self._resume(now)

    def _resume(self, now: int) -> None:
        if self.state != "contend" or self.busy:
            return
        p = self.params
        if self.queue[0].priority:
            self.countdown_from = None
            t = max(self.idle_since + p.difs, now)
        else:
            ready = self.idle_since + self.defer
            if now <= ready:
                cs = ready
            else:
                cs = ready + -(-(now - ready) // p.slot) * p.slot
            self.countdown_from = cs
            t = cs + (self.backoff + 1) * p.slot
        self._token += 1
        self.tx_time = t
        self.sim.schedule(t, TX, self._transmit, self._token)

    def on_busy(self, now: int) -> None:
        if self.state != "contend" or self.tx_time is None:
            return
        if self.tx_time == now:
            return  # already committed to this slot
        cs = self.countdown_from
        if cs is not None and now > cs:
            self.backoff -= (now - cs) // self.params.slot
        self.countdown_from = None
        self.tx_time = None
        self._token += 1

    def on_idle(self, now: int, res) -> None:
        if self.state == "contend":
            self._resume(now)

    def _transmit(self, token: int) -> None:
        if token != self._token:
            return
        now = self.sim.now
        head = self.queue[0]
        frame = Frame(head.kind, head.tx, head.src, head.dest, head.payload_len,
                      head.duration, head.audible_to, head.message, head.index, head.priority)
        self.current = frame
        self.tx_time = None
        self.countdown_from = None
        self.state = "wait_ack"
        self.n_attempts += 1
        self._token += 1
        self.sim.transmit(frame)
        self.sim.schedule(frame.end + self.params.ack_timeout, TIMEOUT, self._timeout, self._token)
        self.on_sent(frame, now)

    def on_delivered(self, frame: Frame, now: int) -> None:
        if frame.kind in ACK_KINDS and frame.dest == self.id and self.state == "wait_ack":
            self._token += 1
            sent = self.current
            self.queue.popleft()
            self.cw = self.params.cw_min
            self.retries = 0
            self._refill()
            self.on_ack(sent, frame, now)
            self._new_head(now)
        elif frame.kind in DATA_KINDS:
            self.on_data(frame, now)

    def _timeout(self, token: int) -> None:
        if token != self._token:
            return
        now = self.sim.now
        sent = self.current
        self.cw, self.retries, discarded = next_window(self.cw, self.retries, self.params)
        if discarded:
            self.queue.popleft()
            self._refill()
        self.defer = self.params.eifs
        self.on_ack_missing(sent, discarded, now)
        self._new_head(now)

    def _refill(self) -> None:
        if self.mode == "saturated" and not self.queue:
            self.queue.append(self._background_frame())

    # protocol hooks
    def on_sent(self, frame: Frame, now: int) -> None:
        pass

    def on_ack(self, frame: Frame, ack: Frame, now: int) -> None:
        pass

    def on_ack_missing(self, frame: Frame, discarded: bool, now: int) -> None:
        pass

    def on_data(self, frame: Frame, now: int) -> None:
        pass


class Sink(Node):
    """Access point: acknowledges data addressed to it and nothing else."""
