"""Scripted Byzantine actors.

Faulty processes sign with their own identities only; the keychain never
hands them another process's signer, so they can replay and forward observed
envelopes but not forge. Each behavior below deviates in one specific way
and behaves like the honest code otherwise.
"""

from __future__ import annotations

from .authenticity import SignedEnvelope
from .codec import digest
from .core import Minting, View
from .messages import Ack, Commit, Install, Prepare, Proof
from .reconfig import ReconfigModule
from .server import Server
from .simnet import Actor, ActorContext
from .tracefmt import tx_json


class SilentServer(Actor):
    """Crash-faulty from the start: receives nothing, sends nothing."""

    def receive(self, env: SignedEnvelope) -> None:
        pass


class _NeverStopReconfig(ReconfigModule):
    """Answers state requests but lies: keeps processing and never moves on."""

    def rule_state_request(self) -> bool:
        storage = self.server.storage
        from .messages import StateRequest, StateUpdate

        for env in self.server.take_bucket(StateRequest):
            m = env.payload
            if m.source not in storage.source:
                continue
            install = storage.install_by_pair.get((digest(m.source), digest(m.views)))
            if install is None:
                continue
            key = (env.digest(), b"byz")
            if key in self._replied:
                continue
            self._replied.add(key)
            reply_view = self.current_view if self.current_view is not None else View()
            self.ctx.send(
                env.sender, StateUpdate(m.source, m.views, self.server.tx.snapshot(), reply_view)
            )
            return True
        return False

    def rule_transition_start(self) -> bool:
        return False

    def rule_transition_finish(self) -> bool:
        return False


class StaleAckerServer(Server):
    """Keeps serving its stale view: never stops processing, never transitions."""

    RECONFIG_CLS = _NeverStopReconfig

    def pending_obligations(self) -> list[str]:
        return []


class MuteAfterInstallServer(Server):
    """Correct up to (and including) installing a view beyond genesis, mute after."""

    def __init__(self, ctx: ActorContext):
        super().__init__(ctx)
        self._muted = False

    def receive(self, env: SignedEnvelope) -> None:
        if self._muted:
            return
        super().receive(env)
        if self.reconfig.installed and self.reconfig.current_view != self.ctx.genesis:
            self._muted = True

    def pending_obligations(self) -> list[str]:
        return []


class Fig3Client(Actor):
    """Reconfiguration-safety adversary.

    Commits o1 in the genesis view; once the all-new view shows up in the
    gossip stream, probes it with conflicting o3; the first ACK for o3
    proves a quorum of the old view already vouched to stop (state transfer
    completed at the acker), at which point conflicting o2 races the stale
    view."""

    def __init__(self, ctx: ActorContext):
        super().__init__(ctx)
        me = ctx.me
        self.o1 = Minting(me, 5, 1)
        self.o2 = Minting(me, 7, 2)
        self.o3 = Minting(me, 9, 2)
        self.new_view: View | None = None
        self.o1_committed = False
        self.probed = False
        self.fired = False
        self.acks: dict[tuple, set] = {}
        self.committed_sent: set = set()

    def on_start(self) -> None:
        for label, tx in (("o1", self.o1), ("o2", self.o2), ("o3", self.o3)):
            self.ctx.emit("byz-issued", digest(tx), role=label, tx=tx_json(tx))
        self.ctx.broadcast(self.ctx.genesis.members(), Prepare(self.o1, self.ctx.genesis))

    def receive(self, env: SignedEnvelope) -> None:
        p = env.payload
        if isinstance(p, Install):
            dest = p.destination()
            if not (dest.members() & self.ctx.genesis.members()):
                self.new_view = dest
        elif isinstance(p, Proof):
            if p.tx == self.o1 and self.ctx.verifier.verify_commit(p.tx, p.committeds):
                self.o1_committed = True
        elif isinstance(p, Ack):
            if p.tx == self.o3 and not self.fired:
                self.fired = True
                self.ctx.emit("byz-fired-o2")
                self.ctx.broadcast(self.ctx.genesis.members(), Prepare(self.o2, self.ctx.genesis))
            key = (digest(p.tx), digest(p.view))
            self.acks.setdefault(key, set()).add(env)
            senders = {e.sender for e in self.acks[key] if e.sender in p.view.members()}
            if len(senders) >= p.view.quorum() and key not in self.committed_sent:
                self.committed_sent.add(key)
                self.ctx.broadcast(
                    p.view.members(), Commit(p.tx, frozenset(self.acks[key]), p.view)
                )
        self._maybe_probe()

    def _maybe_probe(self) -> None:
        if self.probed or not self.o1_committed or self.new_view is None:
            return
        self.probed = True
        self.ctx.emit("byz-probed-o3")
        self.ctx.broadcast(self.new_view.members(), Prepare(self.o3, self.new_view))


class EquivocatorClient(Actor):
    """Sends conflicting sn-1 transactions to disjoint server halves, then
    cross-sends both to everyone while chasing certificates for each."""

    def __init__(self, ctx: ActorContext):
        super().__init__(ctx)
        me = ctx.me
        self.tx_a = Minting(me, 5, 1)
        self.tx_b = Minting(me, 6, 1)
        self.crossed = False
        self.acks: dict[tuple, set] = {}
        self.committed_sent: set = set()

    def on_start(self) -> None:
        for label, tx in (("a", self.tx_a), ("b", self.tx_b)):
            self.ctx.emit("byz-issued", digest(tx), role=label, tx=tx_json(tx))
        members = sorted(self.ctx.genesis.members())
        half = len(members) // 2
        for r in members[:half]:
            self.ctx.send(r, Prepare(self.tx_a, self.ctx.genesis))
        for r in members[half:]:
            self.ctx.send(r, Prepare(self.tx_b, self.ctx.genesis))

    def receive(self, env: SignedEnvelope) -> None:
        p = env.payload
        if isinstance(p, Ack):
            if not self.crossed:
                self.crossed = True
                members = self.ctx.genesis.members()
                self.ctx.broadcast(members, Prepare(self.tx_a, self.ctx.genesis))
                self.ctx.broadcast(members, Prepare(self.tx_b, self.ctx.genesis))
            key = (digest(p.tx), digest(p.view))
            self.acks.setdefault(key, set()).add(env)
            senders = {e.sender for e in self.acks[key] if e.sender in p.view.members()}
            if len(senders) >= p.view.quorum() and key not in self.committed_sent:
                self.committed_sent.add(key)
                self.ctx.broadcast(
                    p.view.members(), Commit(p.tx, frozenset(self.acks[key]), p.view)
                )


SERVER_BEHAVIORS = {
    "correct": Server,
    "silent": SilentServer,
    "stale-acker": StaleAckerServer,
    "mute-after-install": MuteAfterInstallServer,
}

CLIENT_BEHAVIORS = {
    "correct": None,  # handled by scenario (needs the script)
    "fig3": Fig3Client,
    "equivocator": EquivocatorClient,
}
