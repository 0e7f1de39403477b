"""Server reconfiguration module: membership requests, proposing to the view
generator, view transition, state transfer and dischargement.

The view transition is a resumable two-phase machine: phase one fixes the
destination and kicks off state transfer (for staying members) and
dischargement (for leavers), phase two completes once both are satisfied.
STATE-REQUEST and DISCHARGEMENT-REQUEST stay parked after being answered and
are re-answered once per current view, standing in for the repeated
deliveries the gossip primitive would provide.
"""

from __future__ import annotations

from typing import Optional

from .authenticity import SignedEnvelope
from .codec import digest, sort_key
from .core import (
    MINUS,
    PLUS,
    Change,
    MotionId,
    View,
    add_server_motion,
    minus,
    plus,
    remove_server_motion,
)
from .messages import (
    AckCon,
    DischargeConfirm,
    DischargeRequest,
    Evidence,
    Install,
    Join,
    Leave,
    MotionPassed,
    SetEvidence,
    StateRequest,
    StateUpdate,
    VgInput,
    VotingProof,
)
from .proofs import Verifier, path_destination, path_tail
from .txmod import verify_state


def valid_input(inp: VgInput, v: View, verifier: Verifier, genesis: View) -> bool:
    """Membership-input validity for the view generator of view `v`."""
    if not isinstance(inp, VgInput) or not isinstance(inp.evidence, Evidence):
        return False
    v_p, set_p, eps = inp.view, inp.views, inp.evidence
    requests = eps.requests_map()
    proofs = eps.voting_proofs_map()

    def change_backed(c: Change) -> bool:
        if c in genesis.changes:
            return True
        if c.sign == PLUS:
            env = requests.get(c)
            return (
                isinstance(env, SignedEnvelope)
                and isinstance(env.payload, Join)
                and env.sender == c.server
                and verifier.envelope_ok(env)
                and verifier.verify_voting(add_server_motion(c.server), env.payload.proof)
            )
        env = requests.get(c)
        left_ok = (
            isinstance(env, SignedEnvelope)
            and isinstance(env.payload, Leave)
            and env.sender == c.server
            and verifier.envelope_ok(env)
        )
        if left_ok:
            return True
        sv = proofs.get(c)
        return sv is not None and verifier.verify_voting(remove_server_motion(c.server), sv)

    if v == genesis:
        if not (v < v_p) or set_p or eps.path is not None:
            return False
        if any(c.sign == MINUS and plus(c.server) not in v.changes for c in v_p.changes):
            return False
        return all(change_backed(c) for c in sorted(v_p.changes))

    if set_p and v_p not in set_p:
        return False
    if not set_p and not (v < v_p):
        return False
    if any(not (v < w) for w in set_p):
        return False
    for w in set_p:
        if any(c.sign == MINUS and plus(c.server) not in v.changes for c in w.changes):
            return False
    if any(c.sign == MINUS and plus(c.server) not in v.changes for c in v_p.changes):
        return False
    if eps.path is None or not verifier.path_ok(eps.path, v):
        return False
    if path_tail(eps.path) != set_p:
        return False
    all_changes = set(v_p.changes)
    for w in set_p:
        all_changes |= w.changes
    return all(change_backed(c) for c in sorted(all_changes))


class ReconfigModule:
    def __init__(self, server):
        self.server = server
        self.ctx = server.ctx
        self.current_view: Optional[View] = None
        self.installed = False
        self.processing = False
        self.proof: Optional[tuple] = None

        self.joined = False
        self.stop_processing_until = View()
        self.proposed = False

        self.requested: set[Change] = set()
        self.requests: dict[Change, SignedEnvelope] = {}
        self.voting_proofs: dict[Change, VotingProof] = {}

        self.rc_source: Optional[View] = None
        self.rc_destination: Optional[View] = None
        self.rc_sequence: Optional[frozenset[View]] = None
        self.prepared = False
        self.discharged = False
        self._transition_path: Optional[tuple] = None

        self.st_in_progress = False
        self.st_states: dict[View, list] = {}
        self.st_states_msgs: dict[View, list[SignedEnvelope]] = {}
        self.st_states_from: dict[View, set] = {}

        self.d_view: Optional[View] = None
        self.d_confirms: dict[View, set] = {}

        # scripted intents
        self.join_pending = False
        self.join_requested = False
        self.leave_pending = False
        self.leave_when_plus: Optional[int] = None  # leave once this many joins are requested
        self.leave_gossiped = False

        # leave-push
        self.pushing = False
        self.pushed_views: set[View] = set()

        self._replied: set[tuple[bytes, bytes]] = set()
        self._passed_seen: set[bytes] = set()
        self._sr_stamp = None
        self._dr_stamp = None

    # -- initialization ------------------------------------------------------------

    def on_start(self) -> None:
        genesis = self.ctx.genesis
        if self.ctx.me in genesis.members():
            self.current_view = genesis
            self.ctx.emit("view-update", digest(genesis), view=self.server.view_digest(genesis))
            self.installed = True
            self.ctx.emit("install", digest(genesis), view=self.server.view_digest(genesis))
            self.server.tx.installed(genesis)
            self.processing = True
            self.joined = True
            self.ctx.emit("joined")
            for r in sorted(genesis.members()):
                self.ctx.emit("r-joined", server=r.label())
            self.server.vg_for(genesis).start(None)

    # -- membership requests ----------------------------------------------------------

    def rule_join_message(self) -> bool:
        for env in self.server.take_bucket(Join):
            change = plus(env.sender)
            if change in self.requested:
                self.server.consume(env)
                continue
            if not self.ctx.verifier.verify_voting(add_server_motion(env.sender), env.payload.proof):
                self.server.consume(env)  # verdict is pure; never becomes valid
                continue
            self.server.consume(env)
            self.requested.add(change)
            self.requests[change] = env
            self.ctx.emit("join-indexed", server=env.sender.label())
            return True
        return False

    def rule_leave_message(self) -> bool:
        for env in self.server.take_bucket(Leave):
            change = minus(env.sender)
            if change in self.requested:
                self.server.consume(env)
                continue
            self.server.consume(env)
            self.requested.add(change)
            self.requests[change] = env
            self.ctx.emit("leave-indexed", server=env.sender.label())
            return True
        return False

    def rule_motion_passed_message(self) -> bool:
        for env in self.server.take_bucket(MotionPassed):
            m: MotionPassed = env.payload
            self.server.consume(env)
            if digest(m) in self._passed_seen:
                continue
            self._passed_seen.add(digest(m))
            if not self.ctx.verifier.verify_voting(m.motion, m.proof):
                continue
            self.server.voting.on_passed_gossip(m.motion, m.proof)
            self.on_voting_proof(m.motion, m.proof)
            return True
        return False

    def on_voting_proof(self, motion: MotionId, proof: VotingProof) -> None:
        entry = self.ctx.motions.lookup(motion)
        if entry is None:
            return
        action, r = entry
        if action == "remove":
            change = minus(r)
            if change not in self.requested:
                self.requested.add(change)
                self.voting_proofs[change] = proof
                self.ctx.emit("removal-indexed", server=r.label())

    def rule_scripted_join(self) -> bool:
        if not self.join_pending or self.join_requested:
            return False
        proof = self.server.voting.passed.get(add_server_motion(self.ctx.me))
        if proof is None:
            return False
        self.join_requested = True
        self.ctx.gossip(Join(proof))
        return True

    def rule_scripted_leave(self) -> bool:
        if not self.leave_pending or self.leave_gossiped or not self.joined:
            return False
        self.leave_gossiped = True
        self.ctx.gossip(Leave())
        return True

    # -- proposing -----------------------------------------------------------------------

    def to_propose(self) -> set[Change]:
        view = self.current_view
        proposal: set[Change] = set()
        for change in self.requested:
            if change in view.changes:
                continue
            if change.sign == PLUS:
                proposal.add(change)
            elif plus(change.server) in view.changes:
                proposal.add(change)
        return proposal

    def _evidence(self) -> Evidence:
        return Evidence(
            self.proof,
            frozenset(self.requests.items()),
            frozenset(self.voting_proofs.items()),
        )

    def rule_propose(self) -> bool:
        if not self.installed or self.proposed:
            return False
        proposal = self.to_propose()
        if not proposal:
            return False
        target = View(self.current_view.changes | frozenset(proposal))
        self.proposed = True
        self.server.vg_for(self.current_view).propose(
            VgInput(target, frozenset(), self._evidence())
        )
        self.ctx.emit("proposed", digest(target), view=self.server.view_digest(target))
        return True

    def on_vg_decide(self, view: View, views: frozenset[View], omega: frozenset) -> None:
        if view != self.current_view:
            return
        install = self._make_install(view, views, omega)
        self.server.storage.receive(self.ctx.sign(install))

    def _make_install(self, source: View, views: frozenset[View], omega: frozenset) -> Install:
        needed: set[Change] = set()
        for w in views:
            needed |= w.changes
        needed -= self.ctx.genesis.changes
        requests: dict[Change, SignedEnvelope] = {}
        proofs: dict[Change, VotingProof] = {}
        for c in needed:
            if c in self.requests:
                requests[c] = self.requests[c]
            if c in self.voting_proofs:
                proofs[c] = self.voting_proofs[c]
        for c, env in _chain_requests(omega):
            if c in needed and c not in requests:
                requests[c] = env
        for c, pf in _chain_proofs(omega):
            if c in needed and c not in proofs:
                proofs[c] = pf
        return Install(
            source, views, omega, frozenset(requests.items()), frozenset(proofs.items())
        )

    # -- view transition --------------------------------------------------------------------

    def rule_transition_start(self) -> bool:
        if self.rc_destination is not None:
            return False
        candidates = []
        storage = self.server.storage
        if not self.joined:
            for v in storage.history:
                src = storage.source.get(v)
                if src is None:
                    continue
                if self.ctx.me in v.members() and self.ctx.me not in src.members():
                    candidates.append(v)
        else:
            for v in storage.history:
                src = storage.source.get(v)
                if src is None:
                    continue
                if self.current_view < v and src <= self.current_view:
                    candidates.append(v)
        if not candidates:
            return False
        v = min(candidates, key=View.key)
        self.rc_destination = v
        self.rc_source = storage.source[v]
        self.rc_sequence = storage.sequence[v]
        self._transition_path = storage.view_path[v]
        me = self.ctx.me
        if me not in v.members():
            self.prepared = True
        else:
            self.st_in_progress = True
            self.ctx.gossip(StateRequest(self.rc_source, self.rc_sequence))
        if me in v.members():
            self.discharged = True
        else:
            self.d_view = v
            self.ctx.gossip(DischargeRequest(v))
            if self.joined:
                self.pushing = True
                self.pushed_views = {v}
                self.server.tx.push_all(v)
        self.ctx.emit(
            "transition-start",
            digest(v),
            destination=self.server.view_digest(v),
            source=self.server.view_digest(self.rc_source),
        )
        return True

    def rule_repush(self) -> bool:
        if not self.pushing or self.rc_destination is None:
            return False
        storage = self.server.storage
        candidates = [
            v
            for v in storage.history
            if self.rc_destination <= v and v not in self.pushed_views
        ]
        if not candidates:
            return False
        w = max(candidates, key=View.key)
        self.pushed_views.add(w)
        self.server.tx.push_all(w)
        return True

    def rule_transition_finish(self) -> bool:
        if self.rc_destination is None or not (self.prepared and self.discharged):
            return False
        me = self.ctx.me
        dst = self.rc_destination
        src = self.rc_source
        seq = self.rc_sequence
        path = self._transition_path
        is_member = me in dst.members()
        if not is_member and not self.server.tx.push_complete(dst):
            return False

        if self.joined:
            self.server.vg_for(self.current_view).stop()
        if is_member:
            self.current_view = dst
            self.installed = False
            self.processing = False
            self.ctx.emit("view-update", digest(dst), view=self.server.view_digest(dst))
            self.proof = path
        if not self.joined:
            self.joined = True
            self.ctx.emit("joined")

        self.rc_source = None
        self.rc_destination = None
        self._transition_path = None
        self.st_states = {}
        self.st_states_msgs = {}
        self.st_states_from = {}
        self.d_view = None
        self.d_confirms = {}
        self.prepared = False
        self.discharged = False
        self.proposed = False

        if not is_member:
            self.pushing = False
            self.leave_pending = False
            self.ctx.emit("left")
            self.ctx.halt_self()
            return True

        for r in sorted(dst.members() - src.members()):
            self.ctx.emit("r-joined", server=r.label())
        for r in sorted(src.members() - dst.members()):
            self.ctx.emit("r-left", server=r.label())

        self.server.tx.mark_view_changed()
        if seq == frozenset({self.current_view}):
            self.installed = True
            self.ctx.emit("install", digest(dst), view=self.server.view_digest(dst))
            self.server.tx.installed(self.current_view)
            if self.stop_processing_until < self.current_view:
                self.stop_processing_until = View()
                self.processing = True
            else:
                self.processing = False
            self.server.vg_for(self.current_view).start(None)
        else:
            tail = path_tail(path)
            vg_input = VgInput(
                min(tail, key=View.key), tail, self._evidence()
            )
            self.proposed = True
            self.server.vg_for(self.current_view).start(vg_input)
        self.rc_sequence = None
        return True

    # -- state transfer ------------------------------------------------------------------------

    def rule_state_request(self) -> bool:
        storage = self.server.storage
        stamp = (
            len(storage.bucket(StateRequest)),
            len(storage.install_messages),
            None if self.current_view is None else self.current_view.digest(),
        )
        if stamp == self._sr_stamp:
            return False
        for env in self.server.take_bucket(StateRequest):
            m: StateRequest = env.payload
            if m.source not in storage.source:
                continue
            install = storage.install_by_pair.get((digest(m.source), digest(m.views)))
            if install is None:
                continue
            if env.sender not in install.destination().members():
                self.server.consume(env)
                continue
            current_dig = digest(self.current_view) if self.current_view is not None else b"-"
            key = (env.digest(), current_dig)
            if key in self._replied:
                continue
            self._replied.add(key)
            if self.ctx.me in m.source.members() and (
                self.current_view is None or self.current_view <= m.source
            ):
                self.processing = False
                self.ctx.emit(
                    "stop-processing", digest(m.source), view=self.server.view_digest(m.source)
                )
                if self.stop_processing_until < m.source:
                    self.stop_processing_until = m.source
            reply_view = self.current_view if self.current_view is not None else View()
            self.ctx.send(
                env.sender,
                StateUpdate(m.source, m.views, self.server.tx.snapshot(), reply_view),
            )
            return True
        self._sr_stamp = stamp
        return False

    def rule_state_update(self) -> bool:
        if not self.st_in_progress:
            return False
        for env in self.server.take_bucket(StateUpdate):
            m: StateUpdate = env.payload
            if m.source != self.rc_source or m.views != self.rc_sequence:
                continue
            if not verify_state(m.state, self.ctx.verifier, self.ctx.balances):
                continue
            self.server.consume(env)
            sender = env.sender
            index_views = [m.view] if m.view == m.source else [m.view, m.source]
            for key_view in index_views:
                seen = self.st_states_from.setdefault(key_view, set())
                if sender in key_view.members() and sender not in seen:
                    seen.add(sender)
                    self.st_states.setdefault(key_view, []).append(m.state)
                    self.st_states_msgs.setdefault(key_view, []).append(env)
            return True
        return False

    def enough_states_received(self, v: View):
        states = []
        senders = set()
        for rep in sorted(v.members()):
            for w in sorted(self.st_states_from, key=View.key):
                if v <= w and rep in self.st_states_from[w] and rep not in senders:
                    for env in self.st_states_msgs[w]:
                        if env.sender == rep:
                            senders.add(rep)
                            states.append(env.payload.state)
                            break
                    break
        if len(senders) < v.plurality():
            return None
        return states

    def rule_prepared_from_source_quorum(self) -> bool:
        if not self.st_in_progress or self.rc_source is None:
            return False
        senders = self.st_states_from.get(self.rc_source, set())
        if len(senders) < self.rc_source.quorum():
            return False
        self.prepared = True
        self.st_in_progress = False
        self.server.tx.refine_state(self.st_states[self.rc_source])
        return True

    def rule_prepared_from_bigger_view(self) -> bool:
        if not self.st_in_progress or self.rc_source is None:
            return False
        for v in self.server.storage.history:
            if not (self.rc_source < v):
                continue
            states = self.enough_states_received(v)
            if states is not None:
                self.prepared = True
                self.st_in_progress = False
                self.server.tx.refine_state(states)
                return True
        return False

    # -- dischargement ----------------------------------------------------------------------------

    def rule_discharge_request(self) -> bool:
        storage = self.server.storage
        stamp = (
            len(storage.bucket(DischargeRequest)),
            self.joined,
            None if self.current_view is None else self.current_view.digest(),
        )
        if stamp == self._dr_stamp:
            return False
        for env in self.server.take_bucket(DischargeRequest):
            m: DischargeRequest = env.payload
            if not self.joined or self.current_view is None or not (m.view <= self.current_view):
                continue
            key = (env.digest(), digest(self.current_view))
            if key in self._replied:
                continue
            self._replied.add(key)
            self.ctx.send(env.sender, DischargeConfirm(self.current_view))
            return True
        self._dr_stamp = stamp
        return False

    def rule_discharge_confirm(self) -> bool:
        storage = self.server.storage
        for env in self.server.take_bucket(DischargeConfirm):
            m: DischargeConfirm = env.payload
            if m.view not in storage.source or env.sender not in m.view.members():
                continue
            self.server.consume(env)
            self.d_confirms.setdefault(m.view, set()).add(env.sender)
            return True
        return False

    def rule_discharged(self) -> bool:
        if self.d_view is None or self.discharged:
            return False
        for v, senders in self.d_confirms.items():
            if self.d_view <= v and v.members() and len(senders) >= v.quorum():
                self.discharged = True
                return True
        return False

    # -- install bookkeeping ------------------------------------------------------------------------

    def extract_requests_and_voting_proofs(self, m: Install) -> None:
        for c, env in sorted(m.requests, key=lambda kv: sort_key(kv[0])):
            if c not in self.requests:
                self.requests[c] = env
        for c, pf in sorted(m.voting_proofs, key=lambda kv: sort_key(kv[0])):
            if c not in self.voting_proofs:
                self.voting_proofs[c] = pf


def _chain_elements(omega: frozenset):
    """Walk a round-2 certificate down to the membership inputs it carries.

    All envelopes of an rla certificate carry the same decision, so one
    ACK_CON per certificate level suffices.
    """
    decision = None
    for env in sorted(omega, key=sort_key):
        if isinstance(env.payload, AckCon):
            decision = env.payload.accepted
            break
    if decision is None:
        return
    for element in sorted(decision, key=sort_key):
        if not isinstance(element, SetEvidence):
            continue
        inner_dec = None
        for inner in sorted(element.certificate, key=sort_key):
            if isinstance(inner.payload, AckCon):
                inner_dec = inner.payload.accepted
                break
        if inner_dec is None:
            continue
        for vg_input in sorted(inner_dec, key=sort_key):
            if isinstance(vg_input, VgInput):
                yield vg_input


def _chain_requests(omega: frozenset):
    for vg_input in _chain_elements(omega):
        for c, env in sorted(vg_input.evidence.requests, key=lambda kv: sort_key(kv[0])):
            yield c, env


def _chain_proofs(omega: frozenset):
    for vg_input in _chain_elements(omega):
        for c, pf in sorted(vg_input.evidence.voting_proofs, key=lambda kv: sort_key(kv[0])):
            yield c, pf
