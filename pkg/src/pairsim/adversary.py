"""Man-in-the-middle attacker strategies.

The attacker hears every frame, reads headers with no delay, and can only add
energy to the channel: it jams, forges data frames under a party's address,
and forges ACKs with a directional antenna so the impersonated party never
hears them.

Strategies are built from four phases:

    jam_X    jam each key-exchange frame from X and fake the peer's ACK to X
    forge_X  deliver m forged copies of X's message to X's peer, jamming the
             peer's ACKs so X does not receive them
"""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .mac import Frame, MacParams
from .pairing import DhGroup, DhKeyPair, ProtocolMessage, dh_shared, generate_keypair

STRATEGIES = ("none", "type1", "type2", "long_jam", "partial_jam")
PREAMBLE_JAM_US = 10

PHASES = {
    "type1": ("jam_alice", "forge_alice", "jam_bob", "forge_bob"),
    "type2": ("jam_alice", "forge_bob", "forge_alice", "jam_bob"),
    "long_jam": ("jam_alice", "forge_bob", "forge_alice", "jam_bob"),
    "partial_jam": ("jam_alice", "forge_bob", "forge_alice", "jam_bob"),
}


class Action(NamedTuple):
    kind: str  # jam | forge_ack | forge_data | arm
    data: object = None


@dataclass
class AttackerStrategy:
    kind: str = "none"
    preamble_only: bool = False
    skip: int = 2  # partial_jam leaves this copy of Alice's message untouched
    forged_a: Optional[DhKeyPair] = None  # poses as Alice towards Bob
    forged_b: Optional[DhKeyPair] = None  # poses as Bob towards Alice

    def validate(self) -> "AttackerStrategy":
        if self.kind not in STRATEGIES:
            from .mac import ConfigError
            raise ConfigError(f"attacker.strategy must be one of {STRATEGIES}, got {self.kind!r}")
        return self


@dataclass
class AttackerMachine:
    strategy: AttackerStrategy
    params: MacParams
    group: DhGroup
    alice: str = "alice"
    bob: str = "bob"
    me: str = "eve"
    phase_idx: int = 0
    m: Optional[int] = None
    observed: dict = field(default_factory=dict)  # party -> public value read from headers
    forging: int = 0  # index of the forged copy in flight, 0 when none
    forged_end: Optional[int] = None
    acked: set = field(default_factory=set)
    log: list = field(default_factory=list)

    @classmethod
    def create(cls, strategy: AttackerStrategy, params: MacParams, group: DhGroup,
               rng: random.Random, **kw) -> "AttackerMachine":
        strategy = copy.copy(strategy)
        if strategy.forged_a is None:
            strategy.forged_a = generate_keypair(group, rng)
        if strategy.forged_b is None:
            strategy.forged_b = generate_keypair(group, rng)
        return cls(strategy, params, group, **kw)

    # -- bookkeeping -------------------------------------------------------

    @property
    def phases(self) -> tuple:
        return PHASES.get(self.strategy.kind, ())

    @property
    def phase(self) -> Optional[str]:
        return self.phases[self.phase_idx] if self.phase_idx < len(self.phases) else None

    def peer(self, party: str) -> str:
        return self.bob if party == self.alice else self.alice

    def session_key(self, party: str) -> Optional[int]:
        """Key the attacker shares with `party`, once it has seen that party's value."""
        if party not in self.observed:
            return None
        pair = self.strategy.forged_b if party == self.alice else self.strategy.forged_a
        return dh_shared(self.group, pair.secret, self.observed[party])

    def _advance(self, out: list) -> None:
        self.phase_idx += 1
        self.log.append(self.phase or "done")
        self.forging = 0
        self.acked = set()
        if self.phase and self.phase.startswith("forge"):
            self._forge_next(out)

    def _forge_next(self, out: list) -> None:
        target = self.phase.split("_", 1)[1]
        pair = self.strategy.forged_a if target == self.alice else self.strategy.forged_b
        i = max(self.acked, default=0) + 1
        self.forging = i
        self.forged_end = None
        msg = ProtocolMessage(i, self.m, pair.public, target, self.peer(target))
        out.append(Action("forge_data", msg))

    # -- reactions ---------------------------------------------------------

    def step(self, event: tuple, now: int) -> list:
        kind, data = event
        out: list = []
        phase = self.phase
        if phase is None:
            return out
        if kind == "frame_start":
            self._frame_start(data, now, phase, out)
        elif kind == "timer" and phase.startswith("forge"):
            i = data
            if i == self.forging and i not in self.acked:
                self._forge_next(out)  # no ACK seen: send the copy again
        return out

    def _frame_start(self, f: Frame, now: int, phase: str, out: list) -> None:
        p = self.params
        if f.kind == "key_exchange" and f.message is not None:
            self.observed.setdefault(f.tx, f.message.dh_public)
            if self.m is None:
                self.m = f.message.total
        if phase.startswith("jam"):
            target = phase.split("_", 1)[1]
            if f.kind != "key_exchange" or f.tx != target:
                return
            i = f.message.index
            kind = self.strategy.kind
            if kind == "partial_jam" and target == self.alice and i == self.strategy.skip:
                pass
            elif kind == "long_jam" and target == self.alice and i in (1, 2) and self.m >= 2:
                if i == 1:
                    span = 2 * f.duration + p.sifs + p.ack_duration + p.difs
                    out.append(Action("jam", (span, target)))
                out.append(Action("forge_ack", (f.end + p.sifs, self.peer(target), target)))
            else:
                dur = PREAMBLE_JAM_US if self.strategy.preamble_only else f.duration
                out.append(Action("jam", (min(dur, f.duration), target)))
                out.append(Action("forge_ack", (f.end + p.sifs, self.peer(target), target)))
            if i >= self.m:
                self._advance(out)
            return
        # forge phase: watch our own copy and the peer's ACK for it
        target = phase.split("_", 1)[1]
        receiver = self.peer(target)
        if f.tx == self.me and f.kind == "forged_data" and f.message.index == self.forging:
            self.forged_end = f.end
            out.append(Action("arm", (self.forging, f.end + p.ack_timeout)))
        elif (f.kind == "ack" and f.tx == receiver and f.dest == target
              and self.forged_end is not None and f.start == self.forged_end + p.sifs):
            out.append(Action("jam", (f.duration, receiver)))
            self.acked.add(self.forging)
            self.forged_end = None
            if self.forging >= self.m:
                self._advance(out)
            else:
                self._forge_next(out)


def attacker_step(machine: AttackerMachine, event: tuple, now: int):
    """Pure step: returns ``(new_machine, actions)`` leaving `machine` untouched."""
    nxt = copy.deepcopy(machine)
    return nxt, nxt.step(event, now)
