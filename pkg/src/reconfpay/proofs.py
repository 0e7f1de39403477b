"""View-paths and certificate verification.

A view-path is a chain of INSTALL messages linking genesis to a view; every
quorum-backed statement (acks, commits, confirmations, supports) travels
with such a path so any process can check that the named view is real.
Verification is shallow by design: an INSTALL's certificate is checked at
the signature level, element validity was already enforced by correct
acceptors when the certificate was formed. Verdicts are memoized per run,
keyed by canonical digests.
"""

from __future__ import annotations

from typing import Iterable, Optional

from .authenticity import KeyChain, SignedEnvelope
from .codec import digest
from .core import MotionId, ProcessId, Transaction, View
from .messages import (
    Ack,
    AckCon,
    Certificate,
    Commit,
    CommitConfirm,
    Committed,
    Install,
    SetEvidence,
    Support,
    ViewPath,
)


class PathError(ValueError):
    pass


def check_path_shape(path: ViewPath, genesis: View) -> None:
    """Structural view-path invariant; raises PathError on a broken chain."""
    prev = genesis
    for m in path:
        if not isinstance(m, Install) or not m.views:
            raise PathError("not a view-path")
        if m.source != prev:
            raise PathError("not a view-path")
        prev = m.destination()


def path_views(path: ViewPath, genesis: View) -> frozenset[View]:
    check_path_shape(path, genesis)
    return frozenset({genesis} | {m.destination() for m in path})


def path_destination(path: ViewPath, genesis: View) -> View:
    if not path:
        return genesis
    return path[-1].destination()


def path_tail(path: ViewPath) -> frozenset[View]:
    if not path:
        return frozenset()
    return path[-1].tail()


class Verifier:
    """Signature- and structure-checking oracle shared by one simulation run."""

    def __init__(self, keys: KeyChain, genesis: View):
        self.keys = keys
        self.genesis = genesis
        self._memo: dict[bytes, bool] = {}

    # -- envelopes ----------------------------------------------------------

    def envelope_ok(self, env: SignedEnvelope) -> bool:
        if not isinstance(env, SignedEnvelope):
            return False
        key = b"E" + env.digest()
        got = self._memo.get(key)
        if got is None:
            got = self.keys.verify(env)
            self._memo[key] = got
        return got

    def _all_envelopes_ok(self, envelopes: Iterable[SignedEnvelope]) -> bool:
        return all(self.envelope_ok(e) for e in envelopes)

    # -- lattice agreement certificates --------------------------------------

    def rla_verify_output(self, dec: frozenset, view: View, rid: int, omega) -> bool:
        if not isinstance(omega, frozenset) or not omega:
            return False
        key = b"R" + digest((view, rid, dec, omega))
        got = self._memo.get(key)
        if got is not None:
            return got
        ok = self._all_envelopes_ok(omega)
        if ok:
            expected = AckCon(view, rid, dec)
            ok = all(e.payload == expected for e in omega)
        if ok:
            members = view.members()
            senders = {e.sender for e in omega if e.sender in members}
            ok = len(senders) >= view.quorum()
        self._memo[key] = ok
        return ok

    def vg_verify_output(self, views: frozenset[View], source: View, omega) -> bool:
        if not isinstance(omega, frozenset) or not omega:
            return False
        key = b"G" + digest((views, source, omega))
        got = self._memo.get(key)
        if got is not None:
            return got
        ok = False
        payload = next(iter(omega)).payload
        if isinstance(payload, AckCon) and payload.view == source and payload.rid == 2:
            dec = payload.accepted
            if all(isinstance(el, SetEvidence) for el in dec) and self.rla_verify_output(
                dec, source, 2, omega
            ):
                union: frozenset[View] = frozenset()
                for el in dec:
                    union |= el.views
                ok = views == union
        self._memo[key] = ok
        return ok

    # -- install messages and paths ------------------------------------------

    def install_ok(self, m: Install) -> bool:
        if not isinstance(m, Install) or not m.views:
            return False
        key = b"I" + digest(m)
        got = self._memo.get(key)
        if got is None:
            got = self.vg_verify_output(m.views, m.source, m.certificate)
            self._memo[key] = got
        return got

    def path_ok(self, path: ViewPath, destination: Optional[View] = None) -> bool:
        if not isinstance(path, tuple):
            return False
        key = b"P" + digest(path)
        got = self._memo.get(key)
        if got is None:
            try:
                check_path_shape(path, self.genesis)
                got = all(self.install_ok(m) for m in path)
            except PathError:
                got = False
            self._memo[key] = got
        if not got:
            return False
        return destination is None or path_destination(path, self.genesis) == destination

    # -- message-set certificates ---------------------------------------------

    def _common_view(self, envelopes, payload_type, subject_attr, subject) -> Optional[View]:
        """All payloads name the same (subject, view) with a path to that view."""
        view: Optional[View] = None
        for env in envelopes:
            p = env.payload
            if not isinstance(p, payload_type) or getattr(p, subject_attr) != subject:
                return None
            if view is None:
                view = p.view
            elif p.view != view:
                return None
            if not self.path_ok(p.path, p.view):
                return None
        return view

    def verify_transaction_certificate(self, tx: Transaction, certificate) -> bool:
        return self._threshold_cert(b"C", tx, certificate, Ack, "tx", "quorum")

    def verify_quasi_committed(self, tx: Transaction, certificate) -> bool:
        return self._threshold_cert(b"Q", tx, certificate, CommitConfirm, "tx", "quorum")

    def verify_voting(self, motion: MotionId, proof) -> bool:
        return self._threshold_cert(b"V", motion, proof, Support, "motion", "quorum")

    def _threshold_cert(self, tagbyte, subject, certificate, payload_type, attr, kind) -> bool:
        if not isinstance(certificate, frozenset) or not certificate:
            return False
        key = tagbyte + digest((subject, certificate))
        got = self._memo.get(key)
        if got is not None:
            return got
        ok = False
        if self._all_envelopes_ok(certificate):
            view = self._common_view(certificate, payload_type, attr, subject)
            if view is not None and view.members():
                members = view.members()
                senders = {e.sender for e in certificate if e.sender in members}
                need = view.quorum() if kind == "quorum" else view.plurality()
                ok = len(senders) >= need
        self._memo[key] = ok
        return ok

    def verify_commit(self, tx: Transaction, proof) -> bool:
        """Plurality of COMMITTED records; every sender must be a view member."""
        if not isinstance(proof, frozenset) or not proof:
            return False
        key = b"M" + digest((tx, proof))
        got = self._memo.get(key)
        if got is not None:
            return got
        ok = False
        if self._all_envelopes_ok(proof):
            view = self._common_view(proof, Committed, "tx", tx)
            if view is not None and view.members():
                senders = {e.sender for e in proof}
                ok = senders <= view.members() and len(senders) >= view.plurality()
        self._memo[key] = ok
        return ok

    @staticmethod
    def signers(proof: Certificate) -> frozenset[ProcessId]:
        return frozenset(e.sender for e in proof)

    # -- state representations --------------------------------------------------

    def verify_transaction_proof(self, tx: Transaction, proof_env: SignedEnvelope) -> bool:
        if not isinstance(proof_env, SignedEnvelope):
            return False
        p = proof_env.payload
        return (
            isinstance(p, Commit)
            and p.tx == tx
            and self.verify_transaction_certificate(tx, p.certificate)
        )
