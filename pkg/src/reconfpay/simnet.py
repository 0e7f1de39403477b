"""Deterministic discrete-event simulator.

Logical time is the count of processed events. Delivery order is a pure
function of (scenario, seed): the event heap orders by (deliver-at, target,
enqueue counter) and every fan-out iterates processes in their total order,
so two runs with the same inputs produce byte-identical traces.

Communication primitives: perfect links (`send`), best-effort broadcast,
Bracha-style reliable broadcast over a fixed group, and gossip. Gossip is
implemented as an event-driven pool: a gossiped payload is offered once to
every current process and replayed to processes that start later; since
receivers keep unconsumed messages and handlers are idempotent upon-rules,
this is behaviorally equivalent to periodic re-offers while keeping traces
small.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .authenticity import KeyChain, SignedEnvelope, Signer
from .codec import digest, short_hex
from .core import Balances, MotionId, ProcessId, View
from .messages import Disclosure, RbcMsg
from .proofs import Verifier

INACTIVE = "inactive"
OBEDIENT = "obedient"
DISOBEDIENT = "disobedient"
HALTED = "halted"


@dataclass
class SimParams:
    max_steps: int = 20000
    delay_cap: int = 3
    gossip_period: int = 5  # delay spread for gossip offers
    fairness_bound: int = 10  # upon-rules actually run to fixpoint per event
    debug_checks: bool = False


@dataclass(frozen=True)
class Record:
    step: int
    primitive: str
    frm: str
    to: str
    kind: str
    digest: str
    note: str = ""

    def line(self) -> str:
        return f"{self.step}|{self.primitive}|{self.frm}|{self.to}|{self.kind}|{self.digest}|{self.note}"

    @staticmethod
    def parse(line: str) -> "Record":
        step, primitive, frm, to, kind, dig, note = line.split("|", 6)
        return Record(int(step), primitive, frm, to, kind, dig, note)


class Trace:
    def __init__(self, header_note: str = "{}"):
        self.records: list[Record] = [Record(0, "meta", "-", "-", "scenario", "-", header_note)]
        self.inconclusive = False
        self.reasons: list[str] = []

    def add(self, rec: Record) -> None:
        self.records.append(rec)

    def finish(self, step: int, inconclusive: bool, reasons: list[str]) -> None:
        self.inconclusive = inconclusive
        self.reasons = reasons
        note = json.dumps({"inconclusive": inconclusive, "reasons": reasons}, sort_keys=True)
        self.records.append(Record(step, "meta", "-", "-", "end", "-", note))

    def text(self) -> str:
        return "\n".join(r.line() for r in self.records) + "\n"

    def digest_hex(self) -> str:
        import hashlib

        return hashlib.sha256(self.text().encode("utf-8")).hexdigest()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.text())

    @staticmethod
    def parse(text: str) -> "Trace":
        trace = Trace.__new__(Trace)
        trace.records = [Record.parse(line) for line in text.splitlines() if line]
        trace.inconclusive = False
        trace.reasons = []
        for rec in trace.records:
            if rec.primitive == "meta" and rec.kind == "end":
                info = json.loads(rec.note)
                trace.inconclusive = info.get("inconclusive", False)
                trace.reasons = info.get("reasons", [])
        return trace

    @staticmethod
    def read(path) -> "Trace":
        with open(path, "r", encoding="utf-8") as fh:
            return Trace.parse(fh.read())

    def events(self, kind: Optional[str] = None) -> list[Record]:
        return [r for r in self.records if r.primitive == "event" and (kind is None or r.kind == kind)]

    def scenario_note(self) -> dict:
        return json.loads(self.records[0].note)


class MotionBook:
    """Reverse map from reserved motion digests to (action, server)."""

    def __init__(self):
        self._map: dict[MotionId, tuple[str, ProcessId]] = {}

    def register_server(self, r: ProcessId) -> None:
        from .core import add_server_motion, remove_server_motion

        self._map[add_server_motion(r)] = ("add", r)
        self._map[remove_server_motion(r)] = ("remove", r)

    def lookup(self, motion: MotionId) -> Optional[tuple[str, ProcessId]]:
        return self._map.get(motion)


class RunContext:
    """State shared by all actors of one simulation run."""

    def __init__(self, seed: int, genesis: View, balances: Balances, params: SimParams):
        self.seed = seed
        self.genesis = genesis
        self.balances = dict(balances)
        self.params = params
        self.keys = KeyChain(seed)
        self.verifier = Verifier(self.keys, genesis)
        self.motions = MotionBook()


class Actor:
    """Base class for simulated processes."""

    def __init__(self, ctx: "ActorContext"):
        self.ctx = ctx

    @property
    def pid(self) -> ProcessId:
        return self.ctx.me

    def on_start(self) -> None:
        pass

    def receive(self, env: SignedEnvelope) -> None:
        pass

    def pending_obligations(self) -> list[str]:
        return []


class Simulation:
    def __init__(self, run_ctx: RunContext, header_note: str = "{}"):
        self.ctx = run_ctx
        self.params = run_ctx.params
        self.trace = Trace(header_note)
        self.step = 0
        self._heap: list[tuple[int, tuple, int, int]] = []
        self._payloads: dict[int, tuple] = {}
        self._seq = 0
        self._rng = _DelayRng(run_ctx.seed)
        self.actors: dict[ProcessId, Actor] = {}
        self.phase: dict[ProcessId, str] = {}
        self._prestart_inbox: dict[ProcessId, list[tuple[str, SignedEnvelope]]] = {}
        self._seen: dict[ProcessId, set[bytes]] = {}
        self._gossip_pool: dict[bytes, SignedEnvelope] = {}
        self._logged_views: set[bytes] = set()

    # -- wiring ---------------------------------------------------------------

    def add_actor(self, actor: Actor, start_at: int = 0, byzantine: bool = False) -> None:
        pid = actor.pid
        self.actors[pid] = actor
        self.phase[pid] = INACTIVE
        self._prestart_inbox[pid] = []
        self._seen[pid] = set()
        self._schedule(start_at, pid, ("start", pid, byzantine))

    def at_step(self, when: int, action: Callable[[], None], pid: Optional[ProcessId] = None) -> None:
        key = pid if pid is not None else ProcessId("server", 0)
        self._schedule(when, key, ("control", action))

    def _schedule(self, deliver_at: int, target: ProcessId, item: tuple) -> None:
        self._seq += 1
        self._payloads[self._seq] = item
        heapq.heappush(self._heap, (deliver_at, (target.kind, target.index), self._seq, self._seq))

    # -- primitives (called through ActorContext) -------------------------------

    def _delay(self, cap: int) -> int:
        return self._rng.delay(cap)

    def send(self, frm: ProcessId, to: ProcessId, env: SignedEnvelope, primitive: str = "link") -> None:
        if self.phase.get(to) == HALTED:
            return
        self._schedule(self.step + self._delay(self.params.delay_cap), to, ("deliver", primitive, frm, to, env))

    def broadcast(self, frm: ProcessId, targets, env: SignedEnvelope) -> None:
        for to in sorted(targets):
            self.send(frm, to, env, primitive="bcast")

    def gossip(self, frm: ProcessId, env: SignedEnvelope) -> None:
        dig = env.digest()
        self.trace.add(
            Record(self.step, "gossip", frm.label(), "*", _kind_of(env), short_hex(digest(env.payload)))
        )
        if dig in self._gossip_pool:
            return
        self._gossip_pool[dig] = env
        for to in sorted(self.actors):
            if self.phase[to] != HALTED:
                self._schedule(
                    self.step + self._delay(self.params.gossip_period), to, ("deliver", "gossip", frm, to, env)
                )

    def emit(self, frm: ProcessId, kind: str, dig: bytes = b"", **fields) -> None:
        note = json.dumps(fields, sort_keys=True, separators=(",", ":")) if fields else ""
        assert "\n" not in note and "|" not in note, "trace notes must stay line-safe"
        self.trace.add(Record(self.step, "event", frm.label(), "-", kind, short_hex(dig) if dig else "-", note))

    def log_view(self, view: View) -> str:
        dig = digest(view)
        hexd = short_hex(dig)
        if dig not in self._logged_views:
            self._logged_views.add(dig)
            note = json.dumps(
                {
                    "changes": sorted(f"{c.sign}{c.server.label()}" for c in view.changes),
                    "members": sorted(r.label() for r in view.members()),
                },
                sort_keys=True,
                separators=(",", ":"),
            )
            self.trace.add(Record(self.step, "event", "-", "-", "view-def", hexd, note))
        return hexd

    def halt(self, pid: ProcessId) -> None:
        if self.phase.get(pid) in (OBEDIENT, DISOBEDIENT):
            self.phase[pid] = HALTED
            self.emit(pid, "halted")

    def flag_violation(self, pid: ProcessId, why: str) -> None:
        self.emit(pid, "protocol-violation", why=why)
        if self.phase.get(pid) != HALTED:
            self.phase[pid] = DISOBEDIENT

    # -- main loop ----------------------------------------------------------------

    def run(self) -> Trace:
        while self._heap and self.step < self.params.max_steps:
            _, _, _, seq = heapq.heappop(self._heap)
            item = self._payloads.pop(seq)
            self.step += 1
            self._dispatch(item)
        reasons = []
        if self._heap:
            reasons.append(f"{len(self._heap)} undelivered events at max-steps")
        for pid in sorted(self.actors):
            if self.phase[pid] in (OBEDIENT, DISOBEDIENT):
                for reason in self.actors[pid].pending_obligations():
                    reasons.append(f"{pid.label()}: {reason}")
        self.trace.finish(self.step, bool(reasons), reasons)
        return self.trace

    def _dispatch(self, item: tuple) -> None:
        kind = item[0]
        if kind == "control":
            item[1]()
            return
        if kind == "start":
            _, pid, byzantine = item
            if self.phase[pid] != INACTIVE:
                return
            self.phase[pid] = DISOBEDIENT if byzantine else OBEDIENT
            self.emit(pid, "start")
            self.actors[pid].on_start()
            for dig, env in self._gossip_pool.items():
                if dig not in self._seen[pid]:
                    self._schedule(
                        self.step + self._delay(self.params.gossip_period),
                        pid,
                        ("deliver", "gossip", env.sender, pid, env),
                    )
            for primitive, env in self._prestart_inbox.pop(pid, []):
                self._deliver(primitive, env.sender, pid, env)
            return
        _, primitive, frm, to, env = item
        phase = self.phase.get(to)
        if phase == HALTED:
            return
        if phase == INACTIVE:
            self._prestart_inbox[to].append((primitive, env))
            return
        self._deliver(primitive, frm, to, env)

    def _deliver(self, primitive: str, frm: ProcessId, to: ProcessId, env: SignedEnvelope) -> None:
        dig = env.digest()
        if dig in self._seen[to]:
            return
        self._seen[to].add(dig)
        self.trace.add(
            Record(self.step, primitive, frm.label(), to.label(), _kind_of(env), short_hex(dig))
        )
        if not self.ctx.verifier.envelope_ok(env):
            self.emit(to, "discard", dig)
            return
        self.actors[to].receive(env)


def _kind_of(env: SignedEnvelope) -> str:
    return getattr(env.payload, "WIRE", type(env.payload).__name__)


class _DelayRng:
    """Seeded delay source; draws happen in enqueue order, hence deterministic."""

    def __init__(self, seed: int):
        import random

        self._rng = random.Random(seed ^ 0x5DEECE66D)

    def delay(self, cap: int) -> int:
        return self._rng.randint(1, max(1, cap))


class ActorContext:
    """Per-actor capability handed out by the harness."""

    def __init__(self, sim: Simulation, me: ProcessId):
        self.sim = sim
        self.me = me
        self.run = sim.ctx
        self.signer: Signer = sim.ctx.keys.signer(me)
        self.verifier: Verifier = sim.ctx.verifier
        self.genesis: View = sim.ctx.genesis
        self.balances = sim.ctx.balances
        self.motions = sim.ctx.motions
        self.debug = sim.params.debug_checks

    @property
    def step(self) -> int:
        return self.sim.step

    def sign(self, payload) -> SignedEnvelope:
        return self.signer.sign(payload)

    def send(self, to: ProcessId, payload) -> None:
        self.sim.send(self.me, to, self.sign(payload))

    def send_env(self, to: ProcessId, env: SignedEnvelope) -> None:
        self.sim.send(self.me, to, env)

    def broadcast(self, targets, payload) -> None:
        self.sim.broadcast(self.me, targets, self.sign(payload))

    def gossip(self, payload) -> None:
        self.sim.gossip(self.me, self.sign(payload))

    def emit(self, kind: str, dig: bytes = b"", **fields) -> None:
        self.sim.emit(self.me, kind, dig, **fields)

    def view_digest(self, view: View) -> str:
        return self.sim.log_view(view)

    def halt_self(self) -> None:
        self.sim.halt(self.me)

    def flag_violation(self, why: str) -> None:
        self.sim.flag_violation(self.me, why)


class RbcEngine:
    """Bracha reliable broadcast over the fixed member set of a view.

    Instances are keyed by (view, rla-id, origin); each key delivers at most
    once. Echo at first SEND from the origin, ready at a quorum of echoes or
    a plurality of readys, deliver at a quorum of readys.
    """

    def __init__(self, ctx: ActorContext, deliver: Callable[[View, int, ProcessId, Disclosure], None]):
        self.ctx = ctx
        self.deliver_cb = deliver
        self._echoed: set[bytes] = set()
        self._readied: set[bytes] = set()
        self._delivered: set[bytes] = set()
        self._echoes: dict[tuple[bytes, bytes], set[ProcessId]] = {}
        self._readys: dict[tuple[bytes, bytes], set[ProcessId]] = {}

    def broadcast(self, view: View, rid: int, body: Disclosure) -> None:
        msg = RbcMsg("send", view, rid, self.ctx.me, body)
        for r in sorted(view.members()):
            self.ctx.send(r, msg)

    def on_message(self, env: SignedEnvelope) -> None:
        m: RbcMsg = env.payload
        members = m.view.members()
        if self.ctx.me not in members or m.origin not in members:
            return
        key = digest((m.view, m.rid, m.origin))
        slot = (key, digest(m.body))
        if m.phase == "send":
            if env.sender != m.origin or key in self._echoed:
                return
            self._echoed.add(key)
            self._fanout(RbcMsg("echo", m.view, m.rid, m.origin, m.body), members)
        elif m.phase == "echo":
            senders = self._echoes.setdefault(slot, set())
            if env.sender in senders:
                return
            senders.add(env.sender)
            if len(senders) >= m.view.quorum() and key not in self._readied:
                self._readied.add(key)
                self._fanout(RbcMsg("ready", m.view, m.rid, m.origin, m.body), members)
        elif m.phase == "ready":
            senders = self._readys.setdefault(slot, set())
            if env.sender in senders:
                return
            senders.add(env.sender)
            if len(senders) >= m.view.plurality() and key not in self._readied:
                self._readied.add(key)
                self._fanout(RbcMsg("ready", m.view, m.rid, m.origin, m.body), members)
            if len(senders) >= m.view.quorum() and key not in self._delivered:
                self._delivered.add(key)
                self.deliver_cb(m.view, m.rid, m.origin, m.body)

    def _fanout(self, msg: RbcMsg, members) -> None:
        for r in sorted(members):
            self.ctx.send(r, msg)
