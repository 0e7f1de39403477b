"""Server actor: composes storage, reconfiguration, transaction and voting
modules, routes messages, and runs the upon-rules to fixpoint after every
delivery (which trivially satisfies the fairness bound for enabled guards).
"""

from __future__ import annotations

from .authenticity import SignedEnvelope
from .codec import digest
from .core import Deposit, ProcessId, Transaction, View
from .messages import AckCon, AckReq, Disclosure, Nack, RbcMsg
from .mpt import AccountDepositState, Mpt, apply_deposit
from .reconfig import ReconfigModule, valid_input
from .simnet import Actor, ActorContext, RbcEngine
from .storage import StorageState
from .tracefmt import tx_json
from .txmod import TransactionModule
from .viewgen import VgInstance
from .votemod import VotingModule

_PUMP_LIMIT = 200_000


class Server(Actor):
    RECONFIG_CLS = ReconfigModule

    def __init__(self, ctx: ActorContext, mpt_mode: bool = False):
        super().__init__(ctx)
        self.mpt_mode = mpt_mode
        self.storage = StorageState(self)
        self.tx = TransactionModule(self)
        self.voting = VotingModule(self)
        self.reconfig = self.RECONFIG_CLS(self)
        self.rbc = RbcEngine(ctx, self._rbc_deliver)
        self.vgs: dict[bytes, VgInstance] = {}
        self._mpt_shadow: dict[ProcessId, Mpt] = {}
        self._mpt_state: dict[ProcessId, AccountDepositState] = {}
        self._rules = [
            self.storage.rule_process_install,
            self.reconfig.rule_join_message,
            self.reconfig.rule_leave_message,
            self.reconfig.rule_motion_passed_message,
            self.reconfig.rule_scripted_join,
            self.reconfig.rule_scripted_leave,
            self.reconfig.rule_transition_start,
            self.reconfig.rule_state_request,
            self.reconfig.rule_state_update,
            self.reconfig.rule_prepared_from_source_quorum,
            self.reconfig.rule_prepared_from_bigger_view,
            self.reconfig.rule_discharge_request,
            self.reconfig.rule_discharge_confirm,
            self.reconfig.rule_discharged,
            self.reconfig.rule_repush,
            self.reconfig.rule_transition_finish,
            self.reconfig.rule_propose,
            self.tx.rule_prepare,
            self.tx.rule_commit,
            self.tx.rule_commit_confirm,
            self.tx.rule_quasi_commit,
            self.tx.rule_committed_receipt,
            self.tx.rule_broadcast_committed,
            self.tx.rule_collect_commitment_proof,
            self.tx.rule_query,
            self.voting.rule_support,
            self.voting.rule_support_receipt,
            self.voting.rule_motion_passed,
        ]

    # -- lifecycle ------------------------------------------------------------

    def on_start(self) -> None:
        self.reconfig.on_start()
        self.pump()

    def receive(self, env: SignedEnvelope) -> None:
        p = env.payload
        if isinstance(p, RbcMsg):
            self.rbc.on_message(env)
        elif isinstance(p, (AckReq, AckCon, Nack)):
            if self.ctx.me in p.view.members():
                self.vg_for(p.view).on_envelope(p.rid, env)
        else:
            self.storage.receive(env)
        self.pump()

    def pending_obligations(self) -> list[str]:
        pending = []
        if self.reconfig.rc_destination is not None:
            pending.append("view transition in progress")
        if self.reconfig.join_pending and not self.reconfig.joined:
            pending.append("join not completed")
        if self.reconfig.leave_pending:
            pending.append("leave not completed")
        return pending

    # -- rule pump -----------------------------------------------------------------

    def pump(self) -> None:
        from .simnet import HALTED

        fired = 0
        progress = True
        while progress and self.ctx.sim.phase.get(self.pid) != HALTED:
            progress = False
            for rule in self._rules:
                if rule():
                    progress = True
                    fired += 1
                    if fired > _PUMP_LIMIT:
                        raise RuntimeError(f"{self.pid.label()}: rule pump does not settle")
                    break

    # -- shared helpers ------------------------------------------------------------------

    def take_bucket(self, payload_type: type):
        bucket = self.storage.buckets.get(payload_type)
        return list(bucket) if bucket else ()

    def consume(self, env: SignedEnvelope) -> None:
        self.storage.consume(env)

    def view_digest(self, view: View) -> str:
        return self.ctx.view_digest(view)

    def log_view(self, view: View) -> None:
        self.ctx.view_digest(view)

    def emit_tx_event(self, kind: str, tx: Transaction, **extra) -> None:
        self.ctx.emit(kind, digest(tx), tx=tx_json(tx), **extra)

    # -- view generator wiring ---------------------------------------------------------------

    def vg_for(self, view: View) -> VgInstance:
        key = digest(view)
        vg = self.vgs.get(key)
        if vg is None:
            vg = VgInstance(
                view,
                self.ctx,
                self.ctx.verifier,
                valid_input=lambda inp, _v=view: valid_input(
                    inp, _v, self.ctx.verifier, self.ctx.genesis
                ),
                on_decide=lambda views, omega, _v=view: self.reconfig.on_vg_decide(
                    _v, views, omega
                ),
                rbc_broadcast=self.rbc.broadcast,
            )
            self.vgs[key] = vg
        return vg

    def _rbc_deliver(self, view: View, rid: int, origin: ProcessId, body: Disclosure) -> None:
        if self.ctx.me in view.members():
            self.vg_for(view).on_rbc_deliver(rid, origin, body)

    # -- optional MPT-backed deposit checking ----------------------------------------------------

    def _withdrawal_cert_digest(self, tx: Deposit) -> bytes:
        commit = self.tx.state_log[tx.withdrawal].payload
        return digest(commit.certificate)

    def mpt_compare(self, tx: Deposit, log_accept: bool) -> None:
        """Differential check at PREPARE time: the trie-based double-deposit
        verdict must match the log-scan verdict."""
        key = self._withdrawal_cert_digest(tx)
        c = tx.issuer
        shadow = self._mpt_shadow.get(c, Mpt())
        state = self._mpt_state.get(c, AccountDepositState())
        if shadow.contains(key):
            accept = False
        else:
            try:
                apply_deposit(state, key, state.epoch, shadow.prove_exclusion(key))
                accept = True
            except Exception:
                accept = False
        self.emit_tx_event("mpt-check", tx, log_verdict=log_accept, mpt_verdict=accept)

    def mpt_record(self, tx: Deposit) -> None:
        key = self._withdrawal_cert_digest(tx)
        c = tx.issuer
        shadow = self._mpt_shadow.get(c, Mpt())
        if shadow.contains(key):
            self.emit_tx_event("mpt-check", tx, log_verdict=False, mpt_verdict=False)
            return
        state = self._mpt_state.get(c, AccountDepositState())
        self._mpt_state[c] = apply_deposit(state, key, state.epoch, shadow.prove_exclusion(key))
        self._mpt_shadow[c] = shadow.insert(key)
