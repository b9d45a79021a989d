"""One pairing experiment: background stations, an access point, Alice, Bob and maybe an attacker."""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .adversary import AttackerMachine, AttackerStrategy
from .engine import LOG_COLUMNS, TIMER, TX, Node, Simulator, Sink, Station
from .mac import (ACK_BYTES, MAX_FRAME_BYTES, ConfigError, Frame, MacParams, StationStreams,
                  make_frame)
from .pairing import (AliceMachine, BobMachine, DhGroup, Event, PairingConfig, PartyMachine,
                      generate_keypair, parse_message)

GRACE_US = 2000

RUN_FIELDS = ("run_id", "seed", "n_tx", "n_success", "n_collision",
              "max_consecutive_collisions", "alarm", "alarm_rule", "detected_by", "keys_match")


class InvariantViolation(AssertionError):
    """A simulation produced a state its own contracts rule out."""


@dataclass(frozen=True)
class TrafficConfig:
    n_background: int = 5
    mode: str = "saturated"
    rate_bps: float = 0.0

    def validate(self) -> "TrafficConfig":
        if self.n_background < 0:
            raise ConfigError("traffic.n_background must be non-negative")
        if self.mode not in ("saturated", "poisson"):
            raise ConfigError(f"traffic.mode must be saturated or poisson, got {self.mode!r}")
        if self.mode == "poisson" and self.n_background and self.rate_bps <= 0:
            raise ConfigError("traffic.rate_bps must be positive for poisson traffic")
        return self


@dataclass(frozen=True)
class ScenarioConfig:
    mac: MacParams = field(default_factory=MacParams)
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    protocol: PairingConfig = field(default_factory=PairingConfig)
    dh: DhGroup = field(default_factory=DhGroup)
    attacker: AttackerStrategy = field(default_factory=AttackerStrategy)
    warmup: float = 0.0  # s of background traffic before association
    duration: Optional[float] = None  # total simulated s; default warmup + T + grace
    replications: int = 1
    base_seed: int = 0

    def validate(self) -> "ScenarioConfig":
        self.mac.validate()
        self.traffic.validate()
        self.protocol.validate()
        self.dh.validate()
        self.attacker.validate()
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.warmup < 0:
            raise ConfigError("warmup must be non-negative")
        if self.duration is not None and self.duration < self.warmup + self.protocol.T:
            raise ConfigError("duration must cover warmup + protocol.T_s")
        return self

    @property
    def horizon_us(self) -> int:
        if self.duration is not None:
            return int(round(self.duration * 1e6))
        return int(round((self.warmup + self.protocol.T) * 1e6)) + GRACE_US


class RunResult(NamedTuple):
    run_id: int
    seed: int
    n_tx: int
    n_success: int
    n_collision: int
    max_consecutive_collisions: int
    alarm: bool
    alarm_rule: Optional[str]
    detected_by: str
    keys_match: bool

    def check(self) -> "RunResult":
        if self.n_tx != self.n_success + self.n_collision:
            raise InvariantViolation(f"run {self.run_id}: n_tx != n_success + n_collision")
        if self.alarm and not self.alarm_rule:
            raise InvariantViolation(f"run {self.run_id}: alarm without a rule")
        return self

    def row(self) -> list:
        return [self.run_id, self.seed, self.n_tx, self.n_success, self.n_collision,
                self.max_consecutive_collisions, int(self.alarm), self.alarm_rule or "",
                self.detected_by, int(self.keys_match)]


class PartyStation(Station):
    """A DCF station driven by a pairing state machine."""

    def __init__(self, machine: PartyMachine, params: MacParams, streams: StationStreams,
                 associate_at: int):
        super().__init__(machine.role, params, streams, mode="silent", record_trace=True)
        self.machine = machine
        self.associate_at = associate_at
        self.sent: list = []

    def start(self, now: int) -> None:
        self.sim.schedule(self.associate_at, TIMER, self._event, Event("associate"))

    def _event(self, event: Event) -> None:
        now = self.sim.now
        for action in self.machine.step(event, now):
            if action.kind == "arm":
                name, when = action.data
                self.sim.schedule(when, TIMER, self._event, Event("timer", name))
            elif action.kind == "send":
                msg, priority = action.data
                frame = make_frame("key_exchange", self.id, msg.dest, len(msg.serialize()),
                                   self.params, message=msg, index=msg.index, priority=priority)
                self.enqueue(frame, now)
            elif action.kind == "alarm":
                self.sim.record("alarm", self.id, outcome=action.data)
            elif action.kind == "install":
                self.sim.record("key_installed", self.id)

    def on_sent(self, frame: Frame, now: int) -> None:
        self.sent.append(frame)

    def on_outcome(self, outcome, now: int) -> None:
        self._event(Event("outcome", outcome))

    def on_data(self, frame: Frame, now: int) -> None:
        if frame.dest != self.id or frame.message is None:
            return
        msg = parse_message(frame.message.serialize(), sender=frame.src, dest=frame.dest)
        self._event(Event("message", msg))

    def on_ack(self, frame: Frame, ack: Frame, now: int) -> None:
        self._event(Event("acked", frame.message))

    def on_ack_missing(self, frame: Frame, discarded: bool, now: int) -> None:
        self._event(Event("ack_missing", (frame.message, discarded)))


class AttackerNode(Node):
    """Executes an AttackerMachine's actions; hears every frame on the medium."""

    def __init__(self, machine: AttackerMachine, params: MacParams):
        super().__init__(machine.me, params)
        self.machine = machine
        self._pending: list = []
        self._token = 0
        self._scheduled: Optional[int] = None

    def on_frame_start(self, frame: Frame, now: int) -> None:
        self._run(self.machine.step(("frame_start", frame), now), now)

    def _timer(self, tag) -> None:
        self._run(self.machine.step(("timer", tag), self.sim.now), self.sim.now)

    def _everyone_but(self, node_id: str) -> frozenset:
        return frozenset(n for n in self.sim.nodes if n != node_id)

    def _run(self, actions: list, now: int) -> None:
        p = self.params
        for a in actions:
            if a.kind == "jam":
                duration, exclude = a.data
                jam = make_frame("jam", self.id, None, 0, p, duration=duration,
                                 audible_to=self._everyone_but(exclude))
                self.sim.transmit(jam)
            elif a.kind == "forge_ack":
                when, src, dest = a.data
                ack = make_frame("forged_ack", self.id, dest, ACK_BYTES, p, src=src,
                                 audible_to=frozenset({dest}))
                self.sim.schedule(when, TX, self.sim.transmit, ack)
            elif a.kind == "forge_data":
                msg = a.data
                frame = make_frame("forged_data", self.id, msg.dest, MAX_FRAME_BYTES, p,
                                   src=msg.sender, audible_to=self._everyone_but(msg.sender),
                                   message=msg, index=msg.index, priority=True)
                self._pending = [frame]
                self._try_send(now)
            elif a.kind == "arm":
                tag, when = a.data
                self.sim.schedule(when, TIMER, self._timer, tag)

    def _try_send(self, now: int) -> None:
        if not self._pending or self.busy:
            return
        when = max(self.idle_since + self.params.difs, now)
        self._token += 1
        self._scheduled = when
        self.sim.schedule(when, TX, self._send, self._token)

    def _send(self, token: int) -> None:
        if token != self._token or not self._pending:
            return
        frame = self._pending.pop(0)
        self._scheduled = None
        self.sim.transmit(frame)

    def on_busy(self, now: int) -> None:
        if self._scheduled is not None and self._scheduled != now:
            self._token += 1
            self._scheduled = None

    def on_idle(self, now: int, res) -> None:
        if self._scheduled is None:
            self._try_send(now)


class RunOutput(NamedTuple):
    result: RunResult
    log: list
    traces: dict
    alice: AliceMachine
    bob: BobMachine
    attacker: Optional[AttackerMachine]
    sim: Simulator


def build(config: ScenarioConfig, seed: int, log: bool = True, observers: tuple = ()):
    """Assemble the simulator for one seeded run without running it."""
    mac, traffic, proto = config.mac, config.traffic, config.protocol
    sim = Simulator(mac, config.horizon_us, log=log)
    n = traffic.n_background
    for k in range(n):
        sim.add(Station(f"bg{k}", mac, StationStreams(seed, k), traffic.mode, traffic.rate_bps))
    sim.add(Sink("ap", mac))
    rng = random.Random(f"dh:{seed}")
    alice = AliceMachine("alice", "bob", config.dh, generate_keypair(config.dh, rng), proto, mac)
    bob = BobMachine("bob", "alice", config.dh, generate_keypair(config.dh, rng), proto, mac)
    t_assoc = int(round(config.warmup * 1e6))
    sim.add(PartyStation(alice, mac, StationStreams(seed, n), t_assoc))
    sim.add(PartyStation(bob, mac, StationStreams(seed, n + 1), t_assoc))
    attacker = None
    if config.attacker.kind != "none":
        attacker = AttackerMachine.create(config.attacker, mac, config.dh, rng)
        node = sim.add(AttackerNode(attacker, mac))
        sim.watch(node)
    for name in observers:
        sim.add(Node(name, mac, record_trace=True))
    return sim, alice, bob, attacker


def run(config: ScenarioConfig, seed: int, run_id: int = 0, log: bool = True,
        check: bool = True) -> RunOutput:
    """Simulate one seeded pairing attempt."""
    config.validate()
    sim, alice, bob, attacker = build(config, seed, log)
    sim.run()
    traces = {nid: node.recorder.trace for nid, node in sim.nodes.items()
              if node.recorder is not None}
    if check:
        for trace in traces.values():
            try:
                trace.check()
            except AssertionError as exc:
                raise InvariantViolation(f"trace of {trace.observer}: {exc}") from exc
    bob_node = sim.nodes["bob"]
    ns = nc = 0
    for o in bob_node.outcomes:
        if not o.own and bob.ctx is not None and bob.ctx.in_window(o.start):
            if o.is_collision:
                nc += 1
            else:
                ns += 1
    alarms = [(mach.alarm_time, mach.role, mach.alarm_rule) for mach in (alice, bob)
              if mach.alarm_rule is not None]
    alarms.sort(key=lambda a: (a[0], a[1]))
    max_run = max(m.ctx.detector.max_run if m.ctx else 0 for m in (alice, bob))
    result = RunResult(
        run_id=run_id, seed=seed, n_tx=ns + nc, n_success=ns, n_collision=nc,
        max_consecutive_collisions=max_run, alarm=bool(alarms),
        alarm_rule=alarms[0][2] if alarms else None,
        detected_by="|".join(sorted(a[1] for a in alarms)),
        keys_match=alice.key is not None and alice.key == bob.key)
    if check:
        result.check()
    return RunOutput(result, sim.log or [], traces, alice, bob, attacker, sim)


# --------------------------------------------------------------------------
# CSV helpers


def write_event_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        w.writerows(rows)


def write_runs(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_FIELDS)
        for r in results:
            w.writerow(r.row())


def exchange_gaps(station: "PartyStation", log: list) -> tuple:
    """Idle gaps between a party's consecutive copies, and foreign frames in between.

    Copy 1 may be retried under ordinary contention, so the span starts at
    its last transmission. `foreign` lists frame starts from any station
    other than the two parties.
    """
    sent = station.sent
    if not sent:
        return [], []
    first = max(k for k, f in enumerate(sent) if f.index == 1)
    frames = sent[first:]
    gaps = [b.start - a.end for a, b in zip(frames, frames[1:])]
    lo, hi = frames[0].start, frames[-1].end
    foreign = [(t, st, kind) for t, kind, st, *_ in log
               if lo < t < hi and kind.endswith("_start") and st not in ("alice", "bob")]
    return gaps, foreign
