"""View generator: two chained lattice-agreement rounds per view.

Round 1 agrees on a comparable set of membership inputs; `construct` reduces
that set to a candidate sequence of views; round 2 agrees on (sequence,
round-1 certificate) pairs and the decision is the union of the agreed
sequences. Ties in the cardinality maxima break by canonical byte order so
all processes reduce identically.
"""

from __future__ import annotations

from typing import Callable, Optional

from .codec import sort_key
from .core import View
from .messages import AckCon, Disclosure, SetEvidence, VgInput
from .proofs import Verifier
from .rla import RlaInstance


def _max_cardinality_viewset(sets: list[frozenset[View]]) -> Optional[frozenset[View]]:
    if not sets:
        return None
    return max(sets, key=lambda s: (len(s), sort_key(s)))


def construct(dec: frozenset) -> frozenset[View]:
    """Reduce a decided set of (view, set, evidence) inputs to a set of views."""
    if not dec:
        return frozenset()
    seqs = [t.views for t in dec if t.views]
    standalone = [t.view for t in dec if not t.views]
    if not standalone:
        return _max_cardinality_viewset(seqs)
    greatest_set = _max_cardinality_viewset(seqs)
    greatest_view = View()
    if greatest_set is not None:
        greatest_view = max(greatest_set, key=View.key)
    union_view = View()
    for v in standalone:
        union_view = union_view.union(v)
    return frozenset({greatest_view.union(union_view)})


def extract_rla_decision(omega) -> Optional[frozenset]:
    """Pull the decided set out of a certificate's ACK_CON payloads."""
    if not isinstance(omega, frozenset) or not omega:
        return None
    payload = next(iter(omega)).payload
    if not isinstance(payload, AckCon):
        return None
    return payload.accepted


def valid_set_evidence(element: SetEvidence, view: View, verifier: Verifier) -> bool:
    """Round-2 element validity: its evidence is a round-1 certificate whose
    decision reduces, via construct, to exactly the carried set of views."""
    if not isinstance(element, SetEvidence):
        return False
    dec = extract_rla_decision(element.certificate)
    if dec is None or not all(isinstance(t, VgInput) for t in dec):
        return False
    if not verifier.rla_verify_output(dec, view, 1, element.certificate):
        return False
    return construct(dec) == element.views


def vg_verify_output(views: frozenset[View], view: View, omega, verifier: Verifier) -> bool:
    return verifier.vg_verify_output(views, view, omega)


class VgInstance:
    """One view generator, composed of rla(v, 1) and rla(v, 2)."""

    def __init__(
        self,
        view: View,
        ctx,
        verifier: Verifier,
        valid_input: Callable[[VgInput], bool],
        on_decide: Callable[[frozenset[View], frozenset], None],
        rbc_broadcast,
    ):
        self.view = view
        self.ctx = ctx
        self.on_decide = on_decide
        self.started1 = False
        self.started2 = False
        self._decided = False
        self.rla1 = RlaInstance(
            view, 1, ctx,
            valid_fn=lambda x: isinstance(x, VgInput) and valid_input(x),
            on_decide=self._on_rla1_decide,
            rbc_broadcast=rbc_broadcast,
        )
        self.rla2 = RlaInstance(
            view, 2, ctx,
            valid_fn=lambda x: valid_set_evidence(x, view, verifier),
            on_decide=self._on_rla2_decide,
            rbc_broadcast=rbc_broadcast,
        )

    def start(self, vg_input: Optional[VgInput]) -> None:
        self.started1 = True
        if vg_input is not None:
            self.rla1.start(frozenset({vg_input}))
        else:
            self.rla1.start(None)

    def propose(self, vg_input: VgInput) -> None:
        self.rla1.propose(frozenset({vg_input}))

    def stop(self) -> None:
        if self.started1:
            self.rla1.stop()
        if self.started2:
            self.rla2.stop()

    def _on_rla1_decide(self, dec: frozenset, omega: frozenset) -> None:
        proposal = construct(dec)
        self.started2 = True
        self.rla2.start(frozenset({SetEvidence(proposal, omega)}))

    def _on_rla2_decide(self, dec: frozenset, omega: frozenset) -> None:
        if self._decided:
            return
        self._decided = True
        union: frozenset[View] = frozenset()
        for element in dec:
            union |= element.views
        self.on_decide(union, omega)

    # -- message routing -----------------------------------------------------------

    def instance(self, rid: int) -> RlaInstance:
        return self.rla1 if rid == 1 else self.rla2

    def on_rbc_deliver(self, rid: int, origin, body: Disclosure) -> None:
        self.instance(rid).on_rbc_deliver(origin, body)

    def on_envelope(self, rid: int, env) -> None:
        self.instance(rid).on_envelope(env)
