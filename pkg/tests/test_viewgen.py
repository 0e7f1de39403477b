import pytest

from reconfpay.core import View, minus, plus, seq_follows, server, view_of
from reconfpay.lab import LabWorld, vg_world
from reconfpay.messages import Evidence, SetEvidence, VgInput
from reconfpay.viewgen import construct, extract_rla_decision, valid_set_evidence

R = [server(i + 1) for i in range(8)]
BASE = view_of([plus(r) for r in R[:4]])
EVD = Evidence(None, frozenset(), frozenset())


def vin(view, views=frozenset()):
    return VgInput(view, frozenset(views), EVD)


def grow(view, *servers):
    return View(view.changes | {plus(r) for r in servers})


V5 = grow(BASE, R[4])
V56 = grow(BASE, R[4], R[5])
V567 = grow(BASE, R[4], R[5], R[6])


def test_construct_single_standalone_view():
    dec = frozenset({vin(V5)})
    assert construct(dec) == frozenset({V5})


def test_construct_prefers_longest_sequence():
    s1 = frozenset({V5})
    s2 = frozenset({V5, V56})
    dec = frozenset({vin(V5, s1), vin(V56, s2)})
    assert construct(dec) == s2


def test_construct_merges_sequence_and_standalone():
    s2 = frozenset({V5, V56})
    u = grow(BASE, R[6])
    dec = frozenset({vin(V56, s2), vin(u)})
    assert construct(dec) == frozenset({V56.union(u)})


def test_construct_unions_standalone_views():
    dec = frozenset({vin(V5), vin(grow(BASE, R[5]))})
    assert construct(dec) == frozenset({V56})


def structural_valid(base: View):
    def check(inp: VgInput) -> bool:
        if not inp.views:
            return base < inp.view
        return (
            inp.view in inp.views
            and seq_follows(inp.views, base)
            and all(
                plus(c.server) in base.changes or c.sign == "+"
                for v in inp.views
                for c in v.changes
            )
        )

    return check


def test_vg_pipeline_liveness_n4():
    inputs = {R[0]: vin(V5)}
    world = vg_world(seed=1, n=4, inputs=inputs, valid_input=structural_valid(BASE))
    world.run_fifo()
    assert set(world.decisions) == set(R[:4])
    for decs in world.decisions.values():
        (views, omega), = decs
        assert views == frozenset({V5})
        assert world.verifier.vg_verify_output(views, BASE, omega)


def test_vg_decides_union_and_certificate_checks():
    inputs = {R[0]: vin(V5), R[1]: vin(grow(BASE, R[5]))}
    world = vg_world(seed=2, n=4, inputs=inputs, valid_input=structural_valid(BASE))
    world.run_random(seed=9)
    assert not world.pending
    views, omega = world.decisions[R[0]][0]
    assert world.verifier.vg_verify_output(views, BASE, omega)
    assert seq_follows(views, BASE)
    # tampering with the reported set breaks verification
    assert not world.verifier.vg_verify_output(views | {V567}, BASE, omega)


def test_vg_verify_output_rejects_quorum_shortfall():
    inputs = {R[0]: vin(V5)}
    world = vg_world(seed=3, n=4, inputs=inputs, valid_input=structural_valid(BASE))
    world.run_fifo()
    views, omega = world.decisions[R[0]][0]
    small = frozenset(list(omega)[:2])
    assert not world.verifier.vg_verify_output(views, BASE, small)


def test_valid_set_evidence_end_to_end_and_forgery():
    inputs = {R[0]: vin(V5)}
    world = vg_world(seed=4, n=4, inputs=inputs, valid_input=structural_valid(BASE))
    world.run_fifo()
    # grab the round-1 certificate a correct member fed into round 2
    actor = world.actors[R[0]]
    vg = next(iter(actor.vgs.values()))
    dec2 = extract_rla_decision(world.decisions[R[0]][0][1])
    element = next(iter(dec2))
    assert isinstance(element, SetEvidence)
    assert valid_set_evidence(element, BASE, world.verifier)
    # wrong set for the same certificate
    forged = SetEvidence(frozenset({V567}), element.certificate)
    assert not valid_set_evidence(forged, BASE, world.verifier)
    # forged certificate (unsigned garbage) fails
    bad = SetEvidence(element.views, frozenset())
    assert not valid_set_evidence(bad, BASE, world.verifier)


def test_vg_comparability_across_members():
    for seed in range(10):
        inputs = {
            R[0]: vin(V5),
            R[1]: vin(V56, frozenset({V56})),
            R[2]: vin(grow(BASE, R[6])),
        }
        world = vg_world(seed=seed, n=4, inputs=inputs, valid_input=structural_valid(BASE))
        world.run_random(seed=seed * 13)
        all_sets = [views for decs in world.decisions.values() for views, _ in decs]
        for i, a in enumerate(all_sets):
            for b in all_sets[i + 1 :]:
                assert a <= b or a > b
