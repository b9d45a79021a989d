"""Diffie-Hellman arithmetic and the two party state machines of the pairing exchange.

Each party sends its public value m times in maximum-size frames. The first
copy contends normally; the rest go out DIFS after the previous ACK so no
other station can get in between. Both parties watch the channel for
collision runs and only install the key when their timer expires without
an alarm.
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

from .analysis import false_positive_ratio, minimal_m
from .detection import DetectionContext, DetectorState, TransmissionOutcome
from .mac import MAX_FRAME_BYTES, ConfigError, MacParams

HEADER_BYTES = 6

SAFE_PRIME_64 = 18446744073709550147
SAFE_PRIME_64_ORDER = 9223372036854775073


def is_probable_prime(n: int, rounds: int = 32, seed: int = 0) -> bool:
    """Miller-Rabin test."""
    if n < 2:
        return False
    for small in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % small == 0:
            return n == small
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    rng = random.Random(seed)
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class DhGroup:
    p: int = SAFE_PRIME_64
    g: int = 4
    order: int = SAFE_PRIME_64_ORDER

    def validate(self) -> "DhGroup":
        if not is_probable_prime(self.p):
            raise ConfigError("dh.p must be prime")
        if not 1 < self.g < self.p:
            raise ConfigError("dh.g must satisfy 1 < g < p")
        return self

    @property
    def public_bytes(self) -> int:
        return (self.p.bit_length() + 7) // 8


def dh_public(group: DhGroup, secret: int) -> int:
    if not 0 <= secret <= group.p - 1:
        raise ValueError("secret out of range")
    return pow(group.g, secret, group.p)


def dh_shared(group: DhGroup, secret: int, peer_public: int) -> int:
    if not 1 <= peer_public < group.p:
        raise ValueError("peer public value out of range")
    return pow(peer_public, secret, group.p)


class DhKeyPair(NamedTuple):
    secret: int
    public: int


def generate_keypair(group: DhGroup, rng: random.Random) -> DhKeyPair:
    secret = rng.randrange(2, group.order)
    return DhKeyPair(secret, dh_public(group, secret))


# --------------------------------------------------------------------------
# wire format


@dataclass(frozen=True)
class ProtocolMessage:
    index: int
    total: int
    dh_public: int
    sender: str = ""
    dest: str = ""

    def serialize(self) -> bytes:
        return build_message(self.index, self.total, self.dh_public)


def build_message(i: int, m: int, dh_value: int) -> bytes:
    """Fixed-size frame body: index, total, value length, value, zero padding."""
    if not 1 <= i <= m or m > 0xFFFF:
        raise ValueError(f"bad message index {i} of {m}")
    if dh_value < 0:
        raise ValueError("public value must be non-negative")
    body = dh_value.to_bytes(max(1, (dh_value.bit_length() + 7) // 8), "big")
    if len(body) > MAX_FRAME_BYTES - HEADER_BYTES:
        raise ValueError("public value does not fit in one frame")
    head = i.to_bytes(2, "big") + m.to_bytes(2, "big") + len(body).to_bytes(2, "big")
    return (head + body).ljust(MAX_FRAME_BYTES, b"\x00")


def parse_message(data: bytes, sender: str = "", dest: str = "") -> ProtocolMessage:
    if len(data) != MAX_FRAME_BYTES:
        raise ValueError(f"frame must be {MAX_FRAME_BYTES} bytes, got {len(data)}")
    i = int.from_bytes(data[0:2], "big")
    m = int.from_bytes(data[2:4], "big")
    n = int.from_bytes(data[4:6], "big")
    if not 1 <= i <= m or n == 0 or HEADER_BYTES + n > MAX_FRAME_BYTES:
        raise ValueError("malformed protocol frame")
    value = int.from_bytes(data[HEADER_BYTES:HEADER_BYTES + n], "big")
    return ProtocolMessage(i, m, value, sender, dest)


# --------------------------------------------------------------------------
# channel estimate and m selection


@dataclass(frozen=True)
class PairingConfig:
    T: float = 1.5  # key exchange timer, s
    t: float = 1.0  # monitoring window, s
    target_pfp: float = 0.005
    safety_margin: int = 2
    fixed_m: Optional[int] = None  # skip estimation and use this m
    detection: bool = True
    pattern_check: bool = False

    def validate(self) -> "PairingConfig":
        if not 0 < self.t < self.T:
            raise ConfigError("protocol.t_s must satisfy 0 < t < T")
        if not 0 < self.target_pfp:
            raise ConfigError("protocol.target_pfp must be positive")
        if self.safety_margin < 0:
            raise ConfigError("protocol.safety_margin must be non-negative")
        if self.fixed_m is not None and self.fixed_m < 1:
            raise ConfigError("protocol.fixed_m must be >= 1")
        return self


class ChannelEstimate(NamedTuple):
    p_ch_hat: float
    k_hat: int
    observed_success: int
    observed_collision: int
    low_confidence: bool = False


def estimate_from_counts(n_success: int, n_collision: int, monitor_s: float,
                         window_s: float) -> ChannelEstimate:
    total = n_success + n_collision
    if total == 0:
        return ChannelEstimate(0.0, 0, 0, 0, True)
    # round half up; k_hat is a count, not a banker's-rounded float
    k_hat = int(total * window_s / monitor_s + 0.5)
    return ChannelEstimate(n_collision / total, k_hat, n_success, n_collision)


def estimate_channel(outcomes: Iterable[TransmissionOutcome], monitor_s: float,
                     window_s: float) -> ChannelEstimate:
    """Collision ratio and expected window size from the monitoring-window outcomes.

    The observer's own transmissions are not observations and are skipped.
    """
    ns = nc = 0
    for o in outcomes:
        if o.own:
            continue
        if o.is_collision:
            nc += 1
        else:
            ns += 1
    return estimate_from_counts(ns, nc, monitor_s, window_s)


def select_m(est: ChannelEstimate, cfg: PairingConfig) -> int:
    if est.p_ch_hat >= 1.0:
        raise ConfigError("estimated collision probability is 1: no finite m exists")
    return minimal_m(est.k_hat, est.p_ch_hat, cfg.target_pfp) + cfg.safety_margin


def explain_selection(est: ChannelEstimate, cfg: PairingConfig, upto: int = 8) -> list:
    """``(m, expected false alarms)`` rows used when reporting a selection."""
    return [(m, false_positive_ratio(est.k_hat, est.p_ch_hat, m)) for m in range(1, upto + 1)]


# --------------------------------------------------------------------------
# party state machines


class Event(NamedTuple):
    kind: str  # associate | timer | outcome | message | acked | ack_missing
    data: object = None


class Action(NamedTuple):
    kind: str  # arm | send | alarm | install
    data: object = None


@dataclass
class PartyMachine:
    role: str
    peer: str
    group: DhGroup
    keys: DhKeyPair
    cfg: PairingConfig
    params: MacParams
    t0: int = 0
    m: Optional[int] = None
    phase: str = "unassociated"
    ctx: Optional[DetectionContext] = None
    received: list = field(default_factory=list)
    sent_acked: int = 0
    alarm_rule: Optional[str] = None
    alarm_time: Optional[int] = None
    key: Optional[int] = None

    @property
    def monitor_end(self) -> int:
        return self.t0 + int(round(self.cfg.t * 1e6))

    @property
    def deadline(self) -> int:
        return self.t0 + int(round(self.cfg.T * 1e6))

    def _associate(self, now: int) -> list:
        self.t0 = now
        self.ctx = DetectionContext(self.params, self.monitor_end, self.deadline,
                                    DetectorState(), pattern_check=self.cfg.pattern_check)
        self.phase = "monitor"
        return [Action("arm", ("monitor_end", self.monitor_end)),
                Action("arm", ("deadline", self.deadline))]

    def _message(self, i: int, priority: bool) -> Action:
        msg = ProtocolMessage(i, self.m, self.keys.public, self.role, self.peer)
        return Action("send", (msg, priority))

    def _verdict(self, verdict, out: list) -> None:
        if verdict is None or verdict.ok or not self.cfg.detection:
            return
        if self.alarm_rule is None:
            self.alarm_rule, self.alarm_time = verdict.rule, verdict.time
            out.append(Action("alarm", verdict.rule))

    def _receive(self, msg: ProtocolMessage, now: int, out: list) -> None:
        self.received.append((msg.dh_public, now))
        self._verdict(self.ctx.observe_value(msg.dh_public, now), out)

    def _install(self, out: list) -> None:
        self.phase = "done"
        if self.alarm_rule is not None or not self.received or self.sent_acked < (self.m or 1):
            return
        self.key = dh_shared(self.group, self.keys.secret, self.received[0][0])
        out.append(Action("install", self.key))

    def step(self, event: Event, now: int) -> list:
        out: list = []
        kind = event.kind
        if kind == "associate":
            return self._associate(now)
        if self.phase == "unassociated":
            return out
        if self.phase == "done":
            if kind == "message":
                self._receive(event.data, now, out)  # too late: always an alarm
            return out
        if kind == "outcome":
            self._outcome(event.data, now, out)
        elif kind == "message":
            self._on_message(event.data, now, out)
        elif kind == "acked":
            msg = event.data
            self.sent_acked = max(self.sent_acked, msg.index)
            if msg.index < self.m:
                out.append(self._message(msg.index + 1, True))
        elif kind == "ack_missing":
            msg, discarded = event.data
            if discarded:
                out.append(self._message(msg.index, msg.index > 1))
        elif kind == "timer":
            self._timer(event.data, now, out)
        return out

    def _outcome(self, o: TransmissionOutcome, now: int, out: list) -> None:
        self._verdict(self.ctx.observe_outcome(o), out)

    def _timer(self, name: str, now: int, out: list) -> None:
        if name == "deadline":
            self._install(out)


@dataclass
class AliceMachine(PartyMachine):
    """Initiator: estimates the channel, picks m and sends first."""

    monitor: list = field(default_factory=list)
    estimate: Optional[ChannelEstimate] = None

    def _outcome(self, o: TransmissionOutcome, now: int, out: list) -> None:
        if self.t0 <= o.start < self.monitor_end:
            self.monitor.append(o)
        super()._outcome(o, now, out)

    def _timer(self, name: str, now: int, out: list) -> None:
        if name == "monitor_end":
            self.estimate = estimate_channel(self.monitor, self.cfg.t, self.cfg.T - self.cfg.t)
            self.m = self.cfg.fixed_m or select_m(self.estimate, self.cfg)
            self._verdict(self.ctx.set_threshold(self.m, now), out)
            self.phase = "exchange"
            out.append(self._message(1, False))
        else:
            super()._timer(name, now, out)

    def _on_message(self, msg: ProtocolMessage, now: int, out: list) -> None:
        self._receive(msg, now, out)


@dataclass
class BobMachine(PartyMachine):
    """Responder: learns m from the first decoded frame and replies once all copies arrived."""

    seen: set = field(default_factory=set)

    def _associate(self, now: int) -> list:
        actions = super()._associate(now)
        return [a for a in actions if a.data[0] != "monitor_end"]

    def _on_message(self, msg: ProtocolMessage, now: int, out: list) -> None:
        if self.m is None:
            self.m = msg.total
            self._verdict(self.ctx.set_threshold(self.m, now), out)
        self._receive(msg, now, out)
        self.seen.add(msg.index)
        if self.phase == "monitor" and self.seen >= set(range(1, self.m + 1)):
            self.phase = "exchange"
            out.append(self._message(1, False))


def alice_step(state: AliceMachine, event: Event, now: int):
    """Pure step: returns ``(new_state, actions)`` leaving `state` untouched."""
    nxt = copy.deepcopy(state)
    return nxt, nxt.step(event, now)


def bob_step(state: BobMachine, event: Event, now: int):
    nxt = copy.deepcopy(state)
    return nxt, nxt.step(event, now)
