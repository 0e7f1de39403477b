"""Server transaction module: PREPARE/ACK, COMMIT/COMMIT-CONFIRM,
quasi-commitment, COMMITTED fan-out, queries, and transferable state.

The transferable state pairs every logged transaction with the COMMIT
envelope proving its certificate, plus the allowed-acks ledger recording
which transaction (or conflicting transactions) each (client, sn) slot has
been seen with. A state verifies iff every proof checks out, the extracted
log is admissible, and every ledger bucket matches its slot.
"""

from __future__ import annotations

from typing import Optional

from .authenticity import SignedEnvelope
from .codec import digest, encode, sort_key
from .core import (
    Deposit,
    Log,
    Minting,
    ProcessId,
    Transaction,
    View,
    Vote,
    Withdrawal,
    admissible,
    client_log,
    total_money,
)
from .messages import (
    Ack,
    Commit,
    CommitConfirm,
    Committed,
    Prepare,
    Proof,
    Query,
    QueryResponse,
    StateRepresentation,
)
from .proofs import Verifier


def extract_log(state: StateRepresentation, verifier: Verifier) -> Optional[Log]:
    log = set()
    for tx, env in state.log:
        if not verifier.verify_transaction_proof(tx, env):
            return None
        log.add(tx)
    return frozenset(log)


def verify_allowed_acks(state: StateRepresentation) -> bool:
    for c, sn, txs in state.allowed_acks:
        for tx in txs:
            if tx.issuer != c or tx.sn != sn:
                return False
    return True


def verify_state(state: StateRepresentation, verifier: Verifier, balances) -> bool:
    key = b"S" + digest(state)
    got = verifier._memo.get(key)
    if got is not None:
        return got
    log = extract_log(state, verifier)
    ok = log is not None and admissible(log, balances) and verify_allowed_acks(state)
    verifier._memo[key] = ok
    return ok


def merge_logs(
    state1: StateRepresentation,
    state2: StateRepresentation,
    verifier: Verifier,
    balances,
) -> Optional[dict]:
    if not verify_state(state1, verifier, balances) or not verify_state(state2, verifier, balances):
        return None
    new_log = dict(state1.log)
    for tx, env in sorted(state2.log, key=lambda kv: sort_key(kv[0])):
        new_log[tx] = env
    return new_log


class TransactionModule:
    def __init__(self, server):
        self.server = server
        self.ctx = server.ctx
        self.log: set[Transaction] = set()
        self.quasi_committed: dict[Transaction, bool] = {}
        self.confirmed: dict[Transaction, bool] = {}
        self.log_height: dict[ProcessId, int] = {}
        self.log_quasi_committed_height: dict[ProcessId, int] = {}
        self.state_log: dict[Transaction, SignedEnvelope] = {}
        self.allowed_acks: dict[tuple[ProcessId, int], frozenset] = {}
        self.faulty_clients: set[ProcessId] = set()
        self.quasi_committed_current_view: set[Transaction] = set()
        self.commit_confirms_from: dict[tuple[Transaction, View], set[ProcessId]] = {}
        self.commit_confirms: dict[tuple[Transaction, View], set[SignedEnvelope]] = {}
        self.committed_from: dict[tuple[Transaction, View], set[ProcessId]] = {}
        self.committeds: dict[tuple[Transaction, View], set[SignedEnvelope]] = {}
        self._committed_broadcast: set[tuple[Transaction, View]] = set()
        self._proof_sent: set[tuple[Transaction, View]] = set()
        self._balance_cache: dict[tuple[ProcessId, int], int] = {}
        self._by_client: dict[tuple[ProcessId, int], Transaction] = {}
        # dirty flags gate the scanning rules; set by every mutation that
        # could enable the corresponding guard
        self._dirty_quasi = True
        self._dirty_committed = True
        self._dirty_collect = True

    def mark_view_changed(self) -> None:
        self._dirty_quasi = True
        self._dirty_committed = True

    # -- state representation ---------------------------------------------------

    def snapshot(self) -> StateRepresentation:
        return StateRepresentation(
            frozenset(self.state_log.items()),
            frozenset((c, sn, txs) for (c, sn), txs in self.allowed_acks.items() if txs),
        )

    def _debug_verify(self) -> None:
        if self.ctx.debug:
            assert verify_state(self.snapshot(), self.ctx.verifier, self.ctx.balances), (
                "state representation failed verification at a correct server"
            )

    # -- balances -----------------------------------------------------------------

    def balance_after_height(self, c: ProcessId, height: int) -> int:
        if height <= 0:
            return self.ctx.balances.get(c, 0)
        cached = self._balance_cache.get((c, height))
        if cached is not None:
            return cached
        balance = self.balance_after_height(c, height - 1)
        tx = self._by_client.get((c, height))
        if tx is None:
            raise LookupError(f"log of {c.label()} has no transaction at height {height}")
        if isinstance(tx, Withdrawal):
            balance -= tx.amount
        elif isinstance(tx, Deposit):
            balance += tx.withdrawal.amount
        elif isinstance(tx, Minting):
            balance += tx.amount
        self._balance_cache[(c, height)] = balance
        return balance

    def _extend_log(self, tx: Transaction, env: SignedEnvelope) -> None:
        self.state_log[tx] = env
        self.log.add(tx)
        self._by_client[(tx.issuer, tx.sn)] = tx
        self.log_height[tx.issuer] = tx.sn
        if self.server.mpt_mode and isinstance(tx, Deposit):
            self.server.mpt_record(tx)
        self._dirty_quasi = True
        self._dirty_committed = True
        self.server.voting.mark_log_changed()
        self.server.emit_tx_event("log-extended", tx)

    # -- PREPARE ------------------------------------------------------------------

    def rule_prepare(self) -> bool:
        reconf = self.server.reconfig
        if not (reconf.installed and reconf.processing):
            return False
        view = reconf.current_view
        for env in self.server.take_bucket(Prepare):
            m: Prepare = env.payload
            tx = m.tx
            if m.view != view or tx.issuer in self.faulty_clients:
                continue
            if tx.sn != self.log_height.get(tx.issuer, 0) + 1:
                continue
            if isinstance(tx, Deposit) and tx.withdrawal not in self.log:
                continue
            self.server.consume(env)
            self._handle_prepare(tx, view)
            return True
        return False

    def _handle_prepare(self, tx: Transaction, view: View) -> None:
        slot = (tx.issuer, tx.sn)
        bucket = self.allowed_acks.get(slot, frozenset())
        if bucket and bucket != frozenset({tx}):
            # new proof of misbehavior: two transactions for one slot
            self.allowed_acks[slot] = bucket | {tx}
            if tx.issuer not in self.faulty_clients:
                self.faulty_clients.add(tx.issuer)
                self.server.emit_tx_event("blacklist", tx, client=tx.issuer.label())
            self._debug_verify()
            return
        if isinstance(tx, Withdrawal):
            if tx.amount > self.balance_after_height(tx.issuer, tx.sn - 1):
                return  # not enough money
        elif isinstance(tx, Deposit):
            used = any(
                isinstance(t, Deposit) and t.issuer == tx.issuer and t.withdrawal == tx.withdrawal
                for t in self.log
            )
            if self.server.mpt_mode:
                self.server.mpt_compare(tx, log_accept=not used)
            if used:
                return  # withdrawal already used
        elif isinstance(tx, Vote):
            if any(
                isinstance(t, Vote) and t.issuer == tx.issuer and t.motion == tx.motion
                for t in self.log
            ):
                return  # motion already being voted for
        self.allowed_acks[slot] = frozenset({tx})
        path = self.server.storage.view_path[view]
        self.ctx.send(tx.issuer, Ack(tx, view, path))
        self.server.emit_tx_event("ack", tx, view=self.server.view_digest(view))
        self._debug_verify()

    # -- COMMIT ---------------------------------------------------------------------

    def allowed_to_commit_confirm(self, tx: Transaction) -> bool:
        if tx in self.log:
            return True
        if tx.sn != self.log_height.get(tx.issuer, 0) + 1:
            return False
        if isinstance(tx, Deposit):
            return tx.withdrawal in self.log
        return True

    def rule_commit(self) -> bool:
        reconf = self.server.reconfig
        if not (reconf.installed and reconf.processing):
            return False
        view = reconf.current_view
        for env in self.server.take_bucket(Commit):
            m: Commit = env.payload
            if m.view != view or not self.allowed_to_commit_confirm(m.tx):
                continue
            if not self.ctx.verifier.verify_transaction_certificate(m.tx, m.certificate):
                continue
            self.server.consume(env)
            if m.tx not in self.log:
                self._extend_log(m.tx, env)
                # re-broadcast to every member, self included: the own
                # confirmation counts toward the quasi-commitment quorum
                self.ctx.broadcast(view.members(), Commit(m.tx, m.certificate, view))
            path = self.server.storage.view_path[view]
            self.ctx.send(env.sender, CommitConfirm(m.tx, view, path))
            self._debug_verify()
            return True
        return False

    def rule_commit_confirm(self) -> bool:
        for env in self.server.take_bucket(CommitConfirm):
            m: CommitConfirm = env.payload
            if m.tx not in self.log or env.sender not in m.view.members():
                continue
            if not self.ctx.verifier.path_ok(m.path, m.view):
                continue
            self.server.consume(env)
            key = (m.tx, m.view)
            senders = self.commit_confirms_from.setdefault(key, set())
            if env.sender not in senders:
                senders.add(env.sender)
                self.commit_confirms.setdefault(key, set()).add(env)
                self._dirty_quasi = True
            return True
        return False

    # -- quasi-commitment -------------------------------------------------------------

    def _quorum_views(self, tx: Transaction) -> list[View]:
        views = [
            v
            for (t, v), senders in self.commit_confirms_from.items()
            if t == tx and v.members() and len(senders) >= v.quorum()
        ]
        return sorted(views, key=View.key)

    def allowed_to_quasi_commit(self, tx: Transaction) -> bool:
        if tx not in self.log or self.quasi_committed.get(tx, False):
            return False
        if self.log_quasi_committed_height.get(tx.issuer, 0) + 1 != tx.sn:
            return False
        if isinstance(tx, Deposit) and (
            tx.withdrawal not in self.log or not self.quasi_committed.get(tx.withdrawal, False)
        ):
            return False
        views = self._quorum_views(tx)
        if not views:
            return False
        v = views[0]
        current = self.server.reconfig.current_view
        if current is not None and v < current:
            return True
        if not self.quasi_committed_current_view:
            return True
        intersection: Optional[set] = None
        for t in self.quasi_committed_current_view:
            confirms = self.commit_confirms_from.get((t, v), set())
            intersection = confirms if intersection is None else intersection & confirms
        return len(self.commit_confirms_from.get((tx, v), set()) & intersection) >= v.quorum()

    def rule_quasi_commit(self) -> bool:
        if not self._dirty_quasi:
            return False
        for tx in sorted(self.log, key=encode):
            if not self.allowed_to_quasi_commit(tx):
                continue
            self.quasi_committed[tx] = True
            self.log_quasi_committed_height[tx.issuer] = tx.sn
            v = self._quorum_views(tx)[0]
            if v == self.server.reconfig.current_view:
                self.quasi_committed_current_view.add(tx)
            self._dirty_committed = True
            self.server.emit_tx_event("quasi-commit", tx)
            return True
        self._dirty_quasi = False
        return False

    # -- COMMITTED fan-out ----------------------------------------------------------------

    def rule_committed_receipt(self) -> bool:
        for env in self.server.take_bucket(Committed):
            m: Committed = env.payload
            if env.sender not in m.view.members():
                continue
            if not self.ctx.verifier.path_ok(m.path, m.view):
                continue
            self.server.consume(env)
            key = (m.tx, m.view)
            senders = self.committed_from.setdefault(key, set())
            if env.sender not in senders:
                senders.add(env.sender)
                self.committeds.setdefault(key, set()).add(env)
                self._dirty_collect = True
            return True
        return False

    def allowed_to_broadcast_committed(self, tx: Transaction) -> bool:
        if not self.quasi_committed.get(tx, False):
            return False
        if tx.sn == 1 and not isinstance(tx, Deposit):
            return True
        if tx.sn == 1:
            return self.confirmed.get(tx.withdrawal, False)
        prev = self._by_client.get((tx.issuer, tx.sn - 1))
        prev_ok = prev is not None and self.confirmed.get(prev, False)
        if not isinstance(tx, Deposit):
            return prev_ok
        return prev_ok and self.confirmed.get(tx.withdrawal, False)

    def rule_broadcast_committed(self) -> bool:
        if not self._dirty_committed:
            return False
        reconf = self.server.reconfig
        if not reconf.installed:
            return False
        view = reconf.current_view
        for tx in sorted(self.log, key=encode):
            if (tx, view) in self._committed_broadcast:
                continue
            if not self.allowed_to_broadcast_committed(tx):
                continue
            self._committed_broadcast.add((tx, view))
            path = self.server.storage.view_path[view]
            self.ctx.broadcast(view.members(), Committed(tx, view, path))
            return True
        self._dirty_committed = False
        return False

    def rule_collect_commitment_proof(self) -> bool:
        if not self._dirty_collect:
            return False
        for (tx, v), senders in self.committed_from.items():
            if (tx, v) in self._proof_sent or not v.members():
                continue
            if len(senders) < v.plurality():
                continue
            self._proof_sent.add((tx, v))
            self.confirmed[tx] = True
            proof = frozenset(self.committeds[(tx, v)])
            self.server.emit_tx_event(
                "confirmed",
                tx,
                view=self.server.view_digest(v),
                signers=sorted(r.label() for r in senders),
            )
            self._dirty_committed = True  # confirmed[] unblocks successors
            self.ctx.send(tx.issuer, Proof(tx, proof))
            if isinstance(tx, Withdrawal):
                self.ctx.send(tx.receiver, Proof(tx, proof))
            return True
        self._dirty_collect = False
        return False

    # -- queries ---------------------------------------------------------------------------

    def rule_query(self) -> bool:
        reconf = self.server.reconfig
        if not (reconf.installed and reconf.processing):
            return False
        view = reconf.current_view
        for env in self.server.take_bucket(Query):
            m: Query = env.payload
            if m.view != view:
                continue
            self.server.consume(env)
            quasi_log = frozenset(t for t, ok in self.quasi_committed.items() if ok)
            path = self.server.storage.view_path[view]
            self.ctx.send(env.sender, QueryResponse(total_money(quasi_log), m.qid, view, path))
            return True
        return False

    # -- state transfer hooks ------------------------------------------------------------------

    def refine_state(self, states: list[StateRepresentation]) -> None:
        verifier, balances = self.ctx.verifier, self.ctx.balances
        ordered = sorted(states, key=digest)
        for rec in ordered:
            for c, sn, txs in sorted(rec.allowed_acks, key=sort_key):
                slot = (c, sn)
                self.allowed_acks[slot] = self.allowed_acks.get(slot, frozenset()) | txs
        if verify_state(self.snapshot(), verifier, balances):
            for rec in ordered:
                merged = merge_logs(self.snapshot(), rec, verifier, balances)
                if merged is not None:
                    self.state_log = merged
        new_log = extract_log(self.snapshot(), verifier)
        assert new_log is not None, "refine_state broke the state representation"
        self.log = set(new_log)
        self._by_client = {(tx.issuer, tx.sn): tx for tx in self.log}
        self.log_height = {}
        for c in {tx.issuer for tx in self.log}:
            self.log_height[c] = len(client_log(frozenset(self.log), c))
        self.faulty_clients = {
            c for (c, _), txs in self.allowed_acks.items() if len(txs) >= 2
        }
        self._balance_cache.clear()
        self._dirty_quasi = True
        self._dirty_committed = True
        self.server.voting.mark_log_changed()
        for tx in sorted(self.log, key=encode):
            self.server.emit_tx_event("log-extended", tx)
        self._debug_verify()

    def installed(self, view: View) -> None:
        self._dirty_quasi = True
        self._dirty_committed = True
        self.server.voting.mark_log_changed()
        self.quasi_committed_current_view = set()
        for tx in sorted(self.log, key=encode):
            if self.quasi_committed.get(tx, False):
                continue
            commit: Commit = self.state_log[tx].payload
            self.ctx.broadcast(view.members(), Commit(tx, commit.certificate, view))

    def push_all(self, view: View) -> None:
        """Leave-push: re-offer every logged transaction to a newer view."""
        for tx in sorted(self.log, key=encode):
            commit: Commit = self.state_log[tx].payload
            self.ctx.broadcast(view.members(), Commit(tx, commit.certificate, view))

    def push_complete(self, destination: View) -> bool:
        for tx in self.log:
            if not any(
                destination <= v and v.members() and len(senders) >= v.quorum()
                for (t, v), senders in self.commit_confirms_from.items()
                if t == tx
            ):
                return False
        return True
