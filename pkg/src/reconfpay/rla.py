"""Lattice agreement over set union, one instance per (view, id).

Every participant plays both roles: proposer (discloses its element, then
pushes a growing proposal until a quorum confirms it unchanged) and acceptor
(confirms proposals that contain everything it accepted so far, otherwise
answers with the missing elements). Elements are opaque; a validity
predicate is injected by the instantiator and gates what may ever enter a
safe set. Messages whose content is not yet covered by the local safe set
park in a waiting list and are re-examined whenever the safe set grows.
"""

from __future__ import annotations

from typing import Callable, Optional

from .authenticity import SignedEnvelope
from .core import View
from .messages import AckCon, AckReq, Disclosure, Nack

DISCLOSING = "disclosing"
PROPOSING = "proposing"
DECIDED = "decided"


class RlaInstance:
    def __init__(
        self,
        view: View,
        rid: int,
        ctx,
        valid_fn: Callable[[object], bool],
        on_decide: Callable[[frozenset, frozenset], None],
        rbc_broadcast: Callable[[View, int, Disclosure], None],
    ):
        self.view = view
        self.rid = rid
        self.ctx = ctx
        self.valid = valid_fn
        self.on_decide = on_decide
        self.rbc_broadcast = rbc_broadcast

        self.started = False
        self.stopped = False
        self._rbc_queue: list[tuple] = []
        self.waiting: list[SignedEnvelope] = []

        # proposer
        self.proposed_value: Optional[frozenset] = None
        self.init_counter = 0
        self.proposed_set: frozenset = frozenset()
        self.ack_set: set = set()
        self.omega: list[SignedEnvelope] = []
        self.safe_set: frozenset = frozenset()
        self.state = DISCLOSING
        self.refinements = 0

        # acceptor
        self.accepted_set: frozenset = frozenset()

    # -- interface --------------------------------------------------------------

    def start(self, proposal: Optional[frozenset]) -> None:
        if self.ctx.me not in self.view.members():
            self.ctx.flag_violation("rla start by non-member")
            return
        if self.started:
            self.ctx.flag_violation("rla started twice")
            return
        self.started = True
        if proposal is not None:
            self._disclose(proposal)
        self.pump()

    def propose(self, proposal: frozenset) -> None:
        if not self.started or self.stopped:
            self.ctx.flag_violation("rla propose before start")
            return
        if self.proposed_value is None:
            self._disclose(proposal)
        self.pump()

    def stop(self) -> None:
        self.stopped = True

    def _disclose(self, proposal: frozenset) -> None:
        if len(proposal) != 1 or not all(self.valid(x) for x in proposal):
            self.ctx.flag_violation("rla proposal must be a single valid element")
            return
        self.proposed_value = proposal
        self.safe_set |= proposal
        self.proposed_set |= proposal
        self.rbc_broadcast(self.view, self.rid, Disclosure(self.view, self.rid, proposal))

    # -- inbound ------------------------------------------------------------------

    def on_rbc_deliver(self, origin, body: Disclosure) -> None:
        self._rbc_queue.append((origin, body))
        self.pump()

    def on_envelope(self, env: SignedEnvelope) -> None:
        if env.sender not in self.view.members():
            return
        self.waiting.append(env)
        self.pump()

    # -- upon rules ------------------------------------------------------------------

    def pump(self) -> None:
        if not self.started or self.stopped:
            return
        progress = True
        while progress and not self.stopped:
            progress = (
                self._pump_disclosures()
                or self._pump_ack_reqs()
                or self._pump_ack_cons()
                or self._pump_nacks()
                or self._rule_quorum_disclosed()
                or self._rule_decide()
            )

    def _pump_disclosures(self) -> bool:
        while self._rbc_queue:
            _, body = self._rbc_queue.pop(0)
            proposal = body.proposal
            if len(proposal) != 1 or not all(self.valid(x) for x in proposal):
                continue
            self.safe_set |= proposal
            self.init_counter += 1
            if self.state == DISCLOSING:
                if self.proposed_value is None:
                    self.proposed_value = proposal
                    self.rbc_broadcast(self.view, self.rid, Disclosure(self.view, self.rid, proposal))
                self.proposed_set |= proposal
            return True
        return False

    def _pump_ack_reqs(self) -> bool:
        for env in self.waiting:
            m = env.payload
            if not isinstance(m, AckReq) or not m.proposal:
                continue
            if not m.proposal <= self.safe_set:
                continue
            self.waiting.remove(env)
            if self.accepted_set <= m.proposal:
                self.accepted_set = m.proposal
                self.ctx.send(env.sender, AckCon(self.view, self.rid, self.accepted_set))
            else:
                self.ctx.send(env.sender, Nack(self.view, self.rid, self.accepted_set, m.proposal))
                self.accepted_set = self.accepted_set | m.proposal
            return True
        return False

    def _pump_ack_cons(self) -> bool:
        if self.state != PROPOSING:
            return False
        for env in self.waiting:
            m = env.payload
            if not isinstance(m, AckCon) or m.accepted != self.proposed_set:
                continue
            if not m.accepted <= self.safe_set:
                continue
            self.waiting.remove(env)
            if env.sender not in self.ack_set:
                self.ack_set.add(env.sender)
                self.omega.append(env)
            return True
        return False

    def _pump_nacks(self) -> bool:
        if self.state != PROPOSING:
            return False
        for env in self.waiting:
            m = env.payload
            if not isinstance(m, Nack) or m.proposed != self.proposed_set:
                continue
            if not m.update <= self.safe_set:
                continue
            self.waiting.remove(env)
            if m.update | self.proposed_set != self.proposed_set:
                self.proposed_set = self.proposed_set | m.update
                self.ack_set = set()
                self.omega = []
                self.refinements += 1
                self._broadcast_ack_req()
            return True
        return False

    def _rule_quorum_disclosed(self) -> bool:
        if self.state == DISCLOSING and self.init_counter >= self.view.quorum():
            self.state = PROPOSING
            self._broadcast_ack_req()
            return True
        return False

    def _rule_decide(self) -> bool:
        if self.state == PROPOSING and len(self.ack_set) >= self.view.quorum():
            self.state = DECIDED
            self.on_decide(self.proposed_set, frozenset(self.omega))
            return True
        return False

    def _broadcast_ack_req(self) -> None:
        msg = AckReq(self.view, self.rid, self.proposed_set)
        for r in sorted(self.view.members()):
            self.ctx.send(r, msg)
