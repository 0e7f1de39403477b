import pytest

from reconfpay.codec import digest
from reconfpay.core import server
from reconfpay.lab import LabWorld, explore_schedules, rla_world
from reconfpay.messages import AckCon, AckReq, Disclosure, Nack, RbcMsg

R = [server(i + 1) for i in range(4)]


def sent_payloads(world: LabWorld, kind) -> list:
    return [env.payload for _, _, env in world.pending if isinstance(env.payload, kind)]


def test_start_without_proposal_sends_no_disclosure():
    world = rla_world(seed=1, proposers={})
    assert sent_payloads(world, RbcMsg) == []


def test_start_with_proposal_discloses_once():
    world = rla_world(seed=1, proposers={R[0]: "a"})
    sends = [p for p in sent_payloads(world, RbcMsg) if p.phase == "send"]
    assert len(sends) == 4  # one rbc SEND per member
    assert all(p.body == Disclosure(p.view, 1, frozenset({"a"})) for p in sends)


def test_start_by_non_member_flags_violation():
    world = rla_world(seed=1, proposers={})
    outsider = server(99)
    from reconfpay.lab import _LabCtx
    from reconfpay.rla import RlaInstance

    inst = RlaInstance(world.view, 1, _LabCtx(world, outsider), lambda x: True, lambda d, o: None, lambda *a: None)
    inst.start(frozenset({"a"}))
    assert any("non-member" in why for _, why in world.violations)


def test_fifo_run_all_decide_and_certificates_verify():
    world = rla_world(seed=3, proposers={R[0]: "a"})
    world.run_fifo()
    assert set(world.decisions) == set(R)
    for decs in world.decisions.values():
        assert len(decs) == 1
        dec, omega = decs[0]
        assert dec == frozenset({"a"})
        assert world.verifier.rla_verify_output(dec, world.view, 1, omega)


def test_adoption_when_no_own_proposal():
    # only r1 proposes; r2 adopts the disclosed value and re-discloses
    world = rla_world(seed=4, proposers={R[0]: "a"})
    world.run_fifo()
    # every member eventually echoed a DISCLOSURE of its own (adoption)
    assert all(len(world.decisions[r]) == 1 for r in R)


def test_two_proposers_union_decision():
    world = rla_world(seed=5, proposers={R[0]: "a", R[1]: "b"})
    world.run_random(seed=5)
    assert not world.pending
    for r, decs in world.decisions.items():
        (dec, omega), = decs
        assert dec in (frozenset({"a"}), frozenset({"b"}), frozenset({"a", "b"}))
    world.check_comparability()


def test_quorum_disclosed_threshold_is_three_of_four():
    world = rla_world(seed=6, proposers={R[0]: "a"})
    # deliver only the rbc traffic needed; ACK_REQ appears only once a
    # proposer saw a quorum (3) of disclosures
    steps = 0
    while not sent_payloads(world, AckReq) and world.pending and steps < 500:
        world.deliver(0)
        steps += 1
    reqs = sent_payloads(world, AckReq)
    assert reqs  # appeared at all
    # inspect the first proposer that moved to proposing: its counter is >= 3
    movers = [a for a in world.actors.values() if hasattr(a, "units")]
    proposing = [
        u for a in movers for u in a.units.values() if u.state != "disclosing"
    ]
    assert proposing and all(u.init_counter >= 3 for u in proposing)


def test_acceptor_ack_and_nack_paths():
    world = rla_world(seed=7, proposers={R[0]: "a"})
    actor = world.actors[R[1]]
    inst = actor.units[(digest(world.view), 1)]
    inst.safe_set = frozenset({"a", "b", "c"})
    # empty proposal is never processed
    env = world.keys.signer(R[0]).sign(AckReq(world.view, 1, frozenset()))
    inst.on_envelope(env)
    assert env in inst.waiting
    # fresh acceptor confirms
    env = world.keys.signer(R[0]).sign(AckReq(world.view, 1, frozenset({"a"})))
    inst.on_envelope(env)
    cons = [p for p in sent_payloads(world, AckCon)]
    assert AckCon(world.view, 1, frozenset({"a"})) in cons
    assert inst.accepted_set == frozenset({"a"})
    # conflicting proposal gets a NACK and the union is remembered
    env = world.keys.signer(R[2]).sign(AckReq(world.view, 1, frozenset({"b"})))
    inst.on_envelope(env)
    nacks = sent_payloads(world, Nack)
    assert Nack(world.view, 1, frozenset({"a"}), frozenset({"b"})) in nacks
    assert inst.accepted_set == frozenset({"a", "b"})


def test_nack_with_known_update_does_not_refine():
    world = rla_world(seed=8, proposers={R[0]: "a"})
    actor = world.actors[R[0]]
    inst = actor.units[(digest(world.view), 1)]
    inst.safe_set = frozenset({"a"})
    inst.state = "proposing"
    inst.proposed_set = frozenset({"a"})
    env = world.keys.signer(R[1]).sign(Nack(world.view, 1, frozenset({"a"}), frozenset({"a"})))
    before = inst.refinements
    inst.on_envelope(env)
    assert inst.refinements == before


def test_refinements_bounded_by_f():
    for seed in range(10):
        world = rla_world(seed=seed, proposers={r: u for r, u in zip(R, ["a", "b", "c", "a"])})
        world.run_random(seed=seed)
        for actor in world.actors.values():
            for inst in actor.units.values():
                assert inst.refinements <= 1  # floor((4-1)/3)


def test_verify_output_thresholds():
    world = rla_world(seed=9, proposers={R[0]: "a"})
    world.run_fifo()
    dec, omega = world.decisions[R[0]][0]
    assert world.verifier.rla_verify_output(dec, world.view, 1, omega)
    # two envelopes are below quorum
    small = frozenset(list(omega)[:2])
    assert not world.verifier.rla_verify_output(dec, world.view, 1, small)
    # an envelope naming another decision spoils the certificate
    other = world.keys.signer(R[3]).sign(AckCon(world.view, 1, frozenset({"zzz"})))
    assert not world.verifier.rla_verify_output(dec, world.view, 1, omega | {other})


def test_comparability_random_schedules_with_byzantine():
    for seed in range(25):
        world = rla_world(
            seed=seed,
            proposers={R[0]: "a", R[1]: "b"},
            byz={R[3]: ("agreeable", "nacker", "silent", "equivocator")[seed % 4]},
        )
        world.run_random(seed=seed * 7)
        world.check_comparability()
        world.check_validity(world.element_valid)


def test_bounded_exhaustive_search_small():
    count = explore_schedules(
        lambda: rla_world(seed=2, proposers={R[0]: "a", R[1]: "b"}),
        budget=400,
        check=lambda w: w.check_validity(w.element_valid),
    )
    assert count == 400


def test_liveness_all_correct():
    for seed in range(5):
        world = rla_world(seed=seed, proposers={R[2]: "c"})
        world.run_random(seed=seed + 100)
        assert not world.pending
        assert set(world.decisions) == set(R)
