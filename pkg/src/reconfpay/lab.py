"""Schedule-exploration harness for the lattice-agreement layer.

Runs rla/vg participants over an in-memory network whose delivery order is
fully controllable, so properties can be checked under seeded random
schedules and under bounded exhaustive interleaving search. Commitment is
tracked conservatively at send time: a decision counts as committed as soon
as a quorum of distinct members have produced matching confirmation
envelopes, whether or not anyone collected them yet.
"""

from __future__ import annotations

import random
from typing import Callable, Optional

from .authenticity import KeyChain, SignedEnvelope
from .codec import digest
from .core import ProcessId, View, plus, server
from .messages import AckCon, AckReq, Disclosure, Nack, RbcMsg, SetEvidence, VgInput
from .proofs import Verifier
from .rla import RlaInstance
from .simnet import RbcEngine
from .viewgen import VgInstance


class LabViolation(AssertionError):
    pass


class _LabCtx:
    def __init__(self, world: "LabWorld", me: ProcessId):
        self.world = world
        self.me = me

    def send(self, to: ProcessId, payload) -> None:
        self.world.post(self.me, to, payload)

    def flag_violation(self, why: str) -> None:
        self.world.violations.append((self.me, why))


class _CorrectActor:
    """Holds the rla (or vg) instances of one correct member plus its rbc."""

    def __init__(self, world: "LabWorld", me: ProcessId):
        self.world = world
        self.ctx = _LabCtx(world, me)
        self.rbc = RbcEngine(self.ctx, self._rbc_deliver)
        self.units: dict[tuple[bytes, int], object] = {}  # (view digest, rid) -> RlaInstance
        self.vgs: dict[bytes, VgInstance] = {}

    def add_rla(self, inst: RlaInstance) -> None:
        self.units[(digest(inst.view), inst.rid)] = inst

    def add_vg(self, vg: VgInstance) -> None:
        self.vgs[digest(vg.view)] = vg
        self.units[(digest(vg.view), 1)] = vg.rla1
        self.units[(digest(vg.view), 2)] = vg.rla2

    def _rbc_deliver(self, view: View, rid: int, origin: ProcessId, body: Disclosure) -> None:
        unit = self.units.get((digest(view), rid))
        if unit is not None:
            unit.on_rbc_deliver(origin, body)

    def receive(self, env: SignedEnvelope) -> None:
        p = env.payload
        if isinstance(p, RbcMsg):
            self.rbc.on_message(env)
        elif isinstance(p, (AckReq, AckCon, Nack)):
            unit = self.units.get((digest(p.view), p.rid))
            if unit is not None:
                unit.on_envelope(env)


class ByzActor:
    """Scripted faulty member. Modes:

    - silent: drops everything.
    - agreeable: confirms every proposal it sees without accepting anything.
    - nacker: answers proposals with a NACK carrying a fixed extra element.
    - equivocator: rbc-SENDs two different disclosures to two halves.
    """

    def __init__(self, world: "LabWorld", me: ProcessId, mode: str, view: View, extra=None):
        self.world = world
        self.ctx = _LabCtx(world, me)
        self.me = me
        self.mode = mode
        self.view = view
        self.extra = extra

    def kickoff(self, rid: int = 1) -> None:
        if self.mode == "equivocator" and self.extra is not None:
            a, b = self.extra
            members = sorted(self.view.members())
            half = len(members) // 2
            for r in members[:half]:
                self.ctx.send(r, RbcMsg("send", self.view, rid, self.me, Disclosure(self.view, rid, frozenset({a}))))
            for r in members[half:]:
                self.ctx.send(r, RbcMsg("send", self.view, rid, self.me, Disclosure(self.view, rid, frozenset({b}))))

    def receive(self, env: SignedEnvelope) -> None:
        p = env.payload
        if self.mode == "silent":
            return
        if isinstance(p, RbcMsg):
            # relay echoes/readys honestly enough to stay live
            if p.phase == "send":
                self.ctx.send(env.sender, RbcMsg("echo", p.view, p.rid, p.origin, p.body))
            return
        if isinstance(p, AckReq):
            if self.mode == "agreeable":
                self.ctx.send(env.sender, AckCon(p.view, p.rid, p.proposal))
            elif self.mode == "nacker" and self.extra is not None:
                self.ctx.send(
                    env.sender, Nack(p.view, p.rid, frozenset({self.extra}), p.proposal)
                )


class LabWorld:
    def __init__(self, seed: int, view: View, quorum_view: Optional[View] = None):
        self.view = view
        self.keys = KeyChain(seed)
        self.verifier = Verifier(self.keys, view)
        self.actors: dict[ProcessId, object] = {}
        self.pending: list[tuple[ProcessId, ProcessId, SignedEnvelope]] = []
        self.violations: list[tuple[ProcessId, str]] = []
        self.decisions: dict[ProcessId, list] = {}
        self.started: set[ProcessId] = set()
        # conservative commit tracking per (view digest, rid, dec)
        self._confirms: dict[tuple[bytes, int, frozenset], set[ProcessId]] = {}
        self.committed: dict[tuple[bytes, int], list[frozenset]] = {}

    def post(self, frm: ProcessId, to: ProcessId, payload) -> None:
        env = self.keys.signer(frm).sign(payload)
        if isinstance(payload, AckCon) and frm in payload.view.members():
            key = (digest(payload.view), payload.rid, payload.accepted)
            senders = self._confirms.setdefault(key, set())
            senders.add(frm)
            if len(senders) >= payload.view.quorum():
                bucket = self.committed.setdefault(key[:2], [])
                if payload.accepted not in bucket:
                    bucket.append(payload.accepted)
        self.pending.append((frm, to, env))

    def deliver(self, index: int) -> None:
        frm, to, env = self.pending.pop(index)
        actor = self.actors.get(to)
        if actor is not None:
            actor.receive(env)

    def run_random(self, seed: int, max_deliveries: int = 10_000) -> None:
        rng = random.Random(seed)
        count = 0
        while self.pending and count < max_deliveries:
            self.deliver(rng.randrange(len(self.pending)))
            count += 1

    def run_fifo(self, max_deliveries: int = 10_000) -> None:
        count = 0
        while self.pending and count < max_deliveries:
            self.deliver(0)
            count += 1

    def check_comparability(self) -> None:
        for decs in self.committed.values():
            for i, a in enumerate(decs):
                for b in decs[i + 1 :]:
                    if not (a <= b or a > b):
                        raise LabViolation(f"incomparable decisions: {a} vs {b}")

    def check_validity(self, valid_fn: Callable[[object], bool]) -> None:
        for decs in self.committed.values():
            for dec in decs:
                if not dec:
                    raise LabViolation("empty decision committed")
                for x in dec:
                    if not valid_fn(x):
                        raise LabViolation(f"invalid element committed: {x}")


def explore_schedules(build: Callable[[], LabWorld], budget: int, depth_cap: int = 60,
                      check: Optional[Callable[[LabWorld], None]] = None) -> int:
    """Bounded DFS over delivery interleavings, replaying from scratch along
    each prefix. Safety is checked at every explored prefix. Returns the
    number of prefixes explored."""
    explored = 0

    def run_prefix(prefix: list[int]) -> LabWorld:
        world = build()
        for i in prefix:
            world.deliver(i)
        return world

    def dfs(prefix: list[int]) -> None:
        nonlocal explored
        if explored >= budget:
            return
        world = run_prefix(prefix)
        explored += 1
        world.check_comparability()
        if check is not None:
            check(world)
        if len(prefix) >= depth_cap:
            return
        for i in range(len(world.pending)):
            if explored >= budget:
                return
            dfs(prefix + [i])

    dfs([])
    return explored


# ---------------------------------------------------------------------------
# World builders


def rla_world(
    seed: int,
    n: int = 4,
    universe: tuple = ("a", "b", "c"),
    proposers: Optional[dict[ProcessId, object]] = None,
    byz: Optional[dict[ProcessId, str]] = None,
) -> LabWorld:
    """One rla(view, 1) instance over n members; opaque string elements."""
    members = [server(i + 1) for i in range(n)]
    view = View(frozenset({plus(r) for r in members}))
    world = LabWorld(seed, view)
    byz = byz or {}
    valid = lambda x: x in universe
    world.element_valid = valid
    for r in members:
        if r in byz:
            actor = ByzActor(world, r, byz[r], view, extra=universe[-1] if byz[r] == "nacker" else (universe[0], universe[1]))
            world.actors[r] = actor
        else:
            actor = _CorrectActor(world, r)
            inst = RlaInstance(
                view, 1, actor.ctx, valid,
                on_decide=lambda dec, omega, _r=r: world.decisions.setdefault(_r, []).append((dec, omega)),
                rbc_broadcast=actor.rbc.broadcast,
            )
            actor.add_rla(inst)
            world.actors[r] = actor
    proposers = proposers if proposers is not None else {members[0]: universe[0]}
    for r in members:
        if r in byz:
            world.actors[r].kickoff()
            continue
        inst = world.actors[r].units[(digest(view), 1)]
        element = proposers.get(r)
        world.started.add(r)
        inst.start(frozenset({element}) if element is not None else None)
    return world


def vg_world(
    seed: int,
    n: int,
    inputs: dict[ProcessId, Optional[VgInput]],
    valid_input: Callable[[VgInput], bool],
    byz: Optional[dict[ProcessId, str]] = None,
) -> LabWorld:
    """A vg(view) instance per correct member; inputs given per member."""
    members = [server(i + 1) for i in range(n)]
    view = View(frozenset({plus(r) for r in members}))
    world = LabWorld(seed, view)
    byz = byz or {}
    for r in members:
        if r in byz:
            world.actors[r] = ByzActor(world, r, byz[r], view)
            continue
        actor = _CorrectActor(world, r)
        vg = VgInstance(
            view, actor.ctx, world.verifier, valid_input,
            on_decide=lambda views, omega, _r=r: world.decisions.setdefault(_r, []).append((views, omega)),
            rbc_broadcast=actor.rbc.broadcast,
        )
        actor.add_vg(vg)
        world.actors[r] = actor
    for r in members:
        if r in byz:
            continue
        world.started.add(r)
        world.actors[r].vgs[digest(view)].start(inputs.get(r))
    return world
