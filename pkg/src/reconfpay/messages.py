"""Wire-level message types exchanged between processes.

Certificates are plain frozensets of signed envelopes; maps that travel in
messages are frozensets of key/value pairs so the whole payload stays
hashable and canonically encodable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .authenticity import SignedEnvelope
from .codec import Wire
from .core import Change, MotionId, ProcessId, Transaction, View

Certificate = frozenset  # of SignedEnvelope
VotingProof = frozenset  # of SignedEnvelope carrying Support payloads


# --- transaction plane ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prepare(Wire):
    WIRE = "prepare"
    tx: Transaction
    view: View


@dataclass(frozen=True, eq=False)
class Ack(Wire):
    WIRE = "ack"
    tx: Transaction
    view: View
    path: tuple  # ViewPath: tuple of Install payloads


@dataclass(frozen=True, eq=False)
class Commit(Wire):
    WIRE = "commit"
    tx: Transaction
    certificate: Certificate
    view: View


@dataclass(frozen=True, eq=False)
class CommitConfirm(Wire):
    WIRE = "commit-confirm"
    tx: Transaction
    view: View
    path: tuple


@dataclass(frozen=True, eq=False)
class Committed(Wire):
    WIRE = "committed"
    tx: Transaction
    view: View
    path: tuple


@dataclass(frozen=True, eq=False)
class Proof(Wire):
    WIRE = "proof"
    tx: Transaction
    committeds: Certificate


@dataclass(frozen=True, eq=False)
class Query(Wire):
    WIRE = "query"
    qid: int
    view: View


@dataclass(frozen=True, eq=False)
class QueryResponse(Wire):
    WIRE = "query-response"
    total: int
    qid: int
    view: View
    path: tuple


# --- reconfiguration plane --------------------------------------------------


@dataclass(frozen=True, eq=False)
class Join(Wire):
    WIRE = "join"
    proof: VotingProof


@dataclass(frozen=True, eq=False)
class Leave(Wire):
    WIRE = "leave"


@dataclass(frozen=True, eq=False)
class Install(Wire):
    WIRE = "install"
    source: View
    views: frozenset[View]
    certificate: Certificate
    requests: frozenset  # of (Change, SignedEnvelope)
    voting_proofs: frozenset  # of (Change, VotingProof)

    def destination(self) -> View:
        cached = self.__dict__.get("_dest")
        if cached is None:
            cached = min(self.views, key=View.key)
            object.__setattr__(self, "_dest", cached)
        return cached

    def tail(self) -> frozenset[View]:
        return self.views - {self.destination()}

    def requests_map(self) -> dict[Change, SignedEnvelope]:
        return dict(self.requests)

    def voting_proofs_map(self) -> dict[Change, VotingProof]:
        return dict(self.voting_proofs)


ViewPath = tuple  # of Install


@dataclass(frozen=True, eq=False)
class Evidence(Wire):
    WIRE = "vg-evidence"
    path: Optional[ViewPath]
    requests: frozenset  # of (Change, SignedEnvelope)
    voting_proofs: frozenset  # of (Change, VotingProof)

    def requests_map(self) -> dict[Change, SignedEnvelope]:
        return dict(self.requests)

    def voting_proofs_map(self) -> dict[Change, VotingProof]:
        return dict(self.voting_proofs)


@dataclass(frozen=True, eq=False)
class StateRepresentation(Wire):
    WIRE = "state-representation"
    log: frozenset  # of (Transaction, SignedEnvelope carrying a Commit)
    allowed_acks: frozenset  # of (ProcessId, int, frozenset[Transaction])

    def log_map(self) -> dict[Transaction, SignedEnvelope]:
        return dict(self.log)

    def allowed_acks_map(self) -> dict[tuple[ProcessId, int], frozenset]:
        return {(c, sn): txs for c, sn, txs in self.allowed_acks}


@dataclass(frozen=True, eq=False)
class StateRequest(Wire):
    WIRE = "state-request"
    source: View
    views: frozenset[View]


@dataclass(frozen=True, eq=False)
class StateUpdate(Wire):
    WIRE = "state-update"
    source: View
    views: frozenset[View]
    state: StateRepresentation
    view: View  # sender's current view (empty view when it has none yet)


@dataclass(frozen=True, eq=False)
class DischargeRequest(Wire):
    WIRE = "dischargement-request"
    view: View


@dataclass(frozen=True, eq=False)
class DischargeConfirm(Wire):
    WIRE = "dischargement-confirm"
    view: View


# --- voting plane -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Support(Wire):
    WIRE = "support"
    motion: MotionId
    view: View
    path: tuple


@dataclass(frozen=True, eq=False)
class MotionPassed(Wire):
    WIRE = "motion-passed"
    motion: MotionId
    proof: VotingProof


# --- lattice agreement plane ------------------------------------------------


@dataclass(frozen=True, eq=False)
class VgInput(Wire):
    """Input tuple of the view generator: (view, set of views, evidence)."""

    WIRE = "vg-input"
    view: View
    views: frozenset[View]
    evidence: Evidence


@dataclass(frozen=True, eq=False)
class SetEvidence(Wire):
    """Second-round element: a set of views plus the first-round certificate."""

    WIRE = "set-evidence"
    views: frozenset[View]
    certificate: Certificate


@dataclass(frozen=True, eq=False)
class Disclosure(Wire):
    WIRE = "rla-disclosure"
    view: View
    rid: int
    proposal: frozenset


@dataclass(frozen=True, eq=False)
class AckReq(Wire):
    WIRE = "rla-ack-req"
    view: View
    rid: int
    proposal: frozenset


@dataclass(frozen=True, eq=False)
class AckCon(Wire):
    WIRE = "rla-ack-con"
    view: View
    rid: int
    accepted: frozenset


@dataclass(frozen=True, eq=False)
class Nack(Wire):
    WIRE = "rla-nack"
    view: View
    rid: int
    update: frozenset
    proposed: frozenset


# --- reliable broadcast plane -----------------------------------------------


@dataclass(frozen=True, eq=False)
class RbcMsg(Wire):
    WIRE = "rbc"
    phase: str  # "send" | "echo" | "ready"
    view: View
    rid: int
    origin: ProcessId
    body: Disclosure


Payload = Union[
    Prepare, Ack, Commit, CommitConfirm, Committed, Proof, Query, QueryResponse,
    Join, Leave, Install, StateRequest, StateUpdate, DischargeRequest,
    DischargeConfirm, Support, MotionPassed, Disclosure, AckReq, AckCon, Nack,
    RbcMsg,
]
