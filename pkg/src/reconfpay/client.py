"""Client actor: issues transactions across views, collects certificates and
commitment proofs, and queries the total money supply.

A scripted operation list drives the client; each op starts only when the
previous one completed (the client is idle) and its prerequisites hold: a
deposit waits until the referenced withdrawal's commitment proof reached us.
Ops that would break the client rules (e.g. overdraft) mark the client
disobedient and are skipped.
"""

from __future__ import annotations

from typing import Optional

from .authenticity import SignedEnvelope
from .codec import digest
from .core import (
    Deposit,
    Minting,
    ProcessId,
    Transaction,
    View,
    Vote,
    Withdrawal,
    motion_id,
)
from .messages import Ack, Commit, Install, Prepare, Proof, Query, QueryResponse
from .simnet import Actor, ActorContext
from .tracefmt import tx_json

IDLE = "idle"
CERT_COLLECTION = "certificate collection"
PROOF_COLLECTION = "commitment proof collection"
QUERYING = "query"


class Client(Actor):
    def __init__(self, ctx: ActorContext, script: Optional[list[dict]] = None):
        super().__init__(ctx)
        self.script = list(script or [])
        self.op_index = 0
        self.current_view: View = ctx.genesis
        self.history: list[View] = [ctx.genesis]
        self.install_messages: dict[bytes, Install] = {}
        self.waiting: dict[bytes, SignedEnvelope] = {}

        self.state = IDLE
        self.current_transaction: Optional[Transaction] = None
        self.acks_from: dict[View, set[ProcessId]] = {}
        self.acks: dict[View, set[SignedEnvelope]] = {}
        self.certificate: Optional[frozenset] = None

        self.query_id = 0
        self.responses_from: dict[View, set[ProcessId]] = {}
        self.responses: dict[View, dict[ProcessId, int]] = {}
        self.query_results: list[int] = []

        self.next_sn = 1
        self.balance = ctx.balances.get(ctx.me, 0)
        self.committed: set[Transaction] = set()
        self.incoming: dict[tuple[str, int], Withdrawal] = {}
        self.deposited: set[Withdrawal] = set()

    # -- lifecycle ------------------------------------------------------------

    def on_start(self) -> None:
        self.pump()

    def receive(self, env: SignedEnvelope) -> None:
        dig = env.digest()
        if dig not in self.waiting:
            self.waiting[dig] = env
        self.pump()

    def pending_obligations(self) -> list[str]:
        pending = []
        if self.state != IDLE:
            pending.append(f"operation in flight ({self.state})")
        if self.op_index < len(self.script):
            pending.append(f"script stalled at op {self.op_index}")
        return pending

    # -- rule pump ----------------------------------------------------------------

    def pump(self) -> None:
        progress = True
        while progress:
            progress = (
                self._rule_install()
                or self._rule_view_update()
                or self._rule_ack()
                or self._rule_ack_quorum()
                or self._rule_proof()
                or self._rule_query_response()
                or self._rule_query_quorum()
                or self._rule_next_op()
            )

    def _consume(self, env: SignedEnvelope) -> None:
        self.waiting.pop(env.digest(), None)

    def _rule_install(self) -> bool:
        for env in list(self.waiting.values()):
            m = env.payload
            if not isinstance(m, Install):
                continue
            if m.source not in self.history:
                continue
            mdig = digest(m)
            if mdig in self.install_messages:
                self._consume(env)
                continue
            if not self.ctx.verifier.install_ok(m):
                self._consume(env)
                continue
            self._consume(env)
            self.install_messages[mdig] = m
            self.ctx.gossip(m)
            dest = m.destination()
            if dest not in self.history:
                self.history.append(dest)
            return True
        return False

    def _rule_view_update(self) -> bool:
        bigger = [v for v in self.history if self.current_view < v]
        if not bigger:
            return False
        self.current_view = max(bigger, key=View.key)
        self.ctx.emit(
            "client-view-update",
            digest(self.current_view),
            view=self.ctx.view_digest(self.current_view),
        )
        if self.state == QUERYING:
            self.ctx.broadcast(self.current_view.members(), Query(self.query_id, self.current_view))
        elif self.state == CERT_COLLECTION:
            self.ctx.broadcast(
                self.current_view.members(), Prepare(self.current_transaction, self.current_view)
            )
        elif self.state == PROOF_COLLECTION:
            self.ctx.broadcast(
                self.current_view.members(),
                Commit(self.current_transaction, self.certificate, self.current_view),
            )
        return True

    # -- transactions ------------------------------------------------------------------

    def issue(self, tx: Transaction) -> None:
        self.acks_from = {}
        self.acks = {}
        self.certificate = None
        self.state = CERT_COLLECTION
        self.current_transaction = tx
        self.ctx.emit("issued", digest(tx), tx=tx_json(tx))
        self.ctx.broadcast(self.current_view.members(), Prepare(tx, self.current_view))

    def _rule_ack(self) -> bool:
        if self.state != CERT_COLLECTION:
            return False
        for env in list(self.waiting.values()):
            m = env.payload
            if not isinstance(m, Ack) or m.tx != self.current_transaction:
                continue
            if env.sender not in m.view.members():
                self._consume(env)
                continue
            if not self.ctx.verifier.path_ok(m.path, m.view):
                self._consume(env)
                continue
            self._consume(env)
            senders = self.acks_from.setdefault(m.view, set())
            if env.sender not in senders:
                senders.add(env.sender)
                self.acks.setdefault(m.view, set()).add(env)
            return True
        return False

    def _rule_ack_quorum(self) -> bool:
        if self.state != CERT_COLLECTION:
            return False
        for v, senders in self.acks_from.items():
            if not v.members() or len(senders) < v.quorum():
                continue
            self.state = PROOF_COLLECTION
            self.certificate = frozenset(self.acks[v])
            self.ctx.emit(
                "certified",
                digest(self.current_transaction),
                tx=tx_json(self.current_transaction),
                view=self.ctx.view_digest(v),
            )
            self.ctx.broadcast(
                self.current_view.members(),
                Commit(self.current_transaction, self.certificate, self.current_view),
            )
            return True
        return False

    def _rule_proof(self) -> bool:
        for env in list(self.waiting.values()):
            m = env.payload
            if not isinstance(m, Proof):
                continue
            self._consume(env)
            if not self.ctx.verifier.verify_commit(m.tx, m.committeds):
                continue
            self._on_committed(m.tx)
            return True
        return False

    def _on_committed(self, tx: Transaction) -> None:
        if tx in self.committed:
            return
        self.committed.add(tx)
        self.ctx.emit("client-committed", digest(tx), tx=tx_json(tx))
        if isinstance(tx, Withdrawal) and tx.receiver == self.ctx.me and tx.issuer != self.ctx.me:
            self.incoming[(tx.issuer.label(), tx.sn)] = tx
        if tx.issuer == self.ctx.me:
            if isinstance(tx, Minting):
                self.balance += tx.amount
            elif isinstance(tx, Withdrawal):
                self.balance -= tx.amount
            elif isinstance(tx, Deposit):
                self.balance += tx.withdrawal.amount
        if tx == self.current_transaction:
            self.state = IDLE
            self.current_transaction = None

    # -- queries ------------------------------------------------------------------------

    def query_market(self) -> None:
        self.responses_from = {}
        self.responses = {}
        self.state = QUERYING
        self.query_id += 1
        self.ctx.broadcast(self.current_view.members(), Query(self.query_id, self.current_view))

    def _rule_query_response(self) -> bool:
        if self.state != QUERYING:
            return False
        for env in list(self.waiting.values()):
            m = env.payload
            if not isinstance(m, QueryResponse) or m.qid != self.query_id:
                continue
            if env.sender not in m.view.members():
                self._consume(env)
                continue
            if not self.ctx.verifier.path_ok(m.path, m.view):
                self._consume(env)
                continue
            self._consume(env)
            senders = self.responses_from.setdefault(m.view, set())
            if env.sender not in senders:
                senders.add(env.sender)
                self.responses.setdefault(m.view, {})[env.sender] = m.total
            return True
        return False

    def _rule_query_quorum(self) -> bool:
        if self.state != QUERYING:
            return False
        for v, senders in self.responses_from.items():
            if not v.members() or len(senders) < v.quorum():
                continue
            values = sorted(self.responses[v].values())
            median = values[(len(values) - 1) // 2]  # lower middle on even counts
            self.state = IDLE
            self.query_results.append(median)
            self.ctx.emit("total-money", total=median, qid=self.query_id)
            return True
        return False

    # -- script runner ----------------------------------------------------------------------

    def _rule_next_op(self) -> bool:
        if self.state != IDLE or self.op_index >= len(self.script):
            return False
        op = self.script[self.op_index]
        kind = op["op"]
        if kind == "query":
            self.op_index += 1
            self.query_market()
            return True
        tx = self._build_tx(op)
        if tx is None:
            return False  # prerequisites not met yet; stay idle
        if tx is _SKIP:
            self.op_index += 1
            return True
        self.op_index += 1
        self.next_sn += 1
        self.issue(tx)
        return True

    def _build_tx(self, op: dict):
        kind = op["op"]
        me, sn = self.ctx.me, self.next_sn
        if kind == "mint":
            return Minting(me, op["amount"], sn)
        if kind == "withdraw":
            if op["amount"] > self.balance:
                self.ctx.flag_violation("script overdraft")
                return _SKIP
            return Withdrawal(me, ProcessId.parse(op["to"]), op["amount"], sn)
        if kind == "deposit":
            w = self.incoming.get((op["from"], op["sn"]))
            if w is None:
                return None  # wait for the withdrawal's commitment proof
            if w in self.deposited:
                self.ctx.flag_violation("script reuses a withdrawal")
                return _SKIP
            self.deposited.add(w)
            return Deposit(me, w, sn)
        if kind == "vote":
            return Vote(me, motion_id(op["statement"]), sn)
        raise ValueError(f"unknown client op: {kind}")


_SKIP = object()
