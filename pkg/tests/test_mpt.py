import hashlib
import random

import pytest

from reconfpay.mpt import (
    EMPTY_ROOT,
    AccountDepositState,
    DoubleDepositError,
    DuplicateKeyError,
    ExclusionProof,
    KeyPresentError,
    Mpt,
    StaleEpochError,
    apply_deposit,
    verify_exclusion,
)


def key(i: int) -> bytes:
    return hashlib.sha256(f"key-{i}".encode()).digest()


def test_empty_root_constant():
    expected = hashlib.sha256(b"\x01" + bytes(32) + bytes(32)).digest()
    assert Mpt().root() == EMPTY_ROOT == expected


def test_single_key_root_is_leaf_hash():
    t = Mpt().insert(key(1))
    assert t.root() == hashlib.sha256(b"\x00" + key(1)).digest()


def test_root_independent_of_insertion_order():
    a = Mpt().insert(key(1)).insert(key(2)).insert(key(3))
    b = Mpt().insert(key(3)).insert(key(1)).insert(key(2))
    assert a.root() == b.root()


def test_insert_then_contains():
    t = Mpt().insert(key(1))
    assert t.contains(key(1))
    assert not t.contains(key(2))


def test_duplicate_insert_rejected():
    t = Mpt().insert(key(1))
    with pytest.raises(DuplicateKeyError):
        t.insert(key(1))


def test_exclusion_proof_on_empty_trie():
    t = Mpt()
    proof = t.prove_exclusion(key(5))
    assert verify_exclusion(t.root(), key(5), proof)


def test_prove_exclusion_of_present_key_errors():
    t = Mpt().insert(key(1))
    with pytest.raises(KeyPresentError):
        t.prove_exclusion(key(1))


def test_proof_replay_against_newer_root():
    t = Mpt().insert(key(1))
    proof = t.prove_exclusion(key(2))
    t2 = t.insert(key(2))
    assert verify_exclusion(t.root(), key(2), proof)
    assert not verify_exclusion(t2.root(), key(2), proof)


def test_exclusion_proofs_for_many_absent_keys():
    t = Mpt()
    for i in range(100):
        t = t.insert(key(i))
    for i in range(100, 140):
        proof = t.prove_exclusion(key(i))
        assert verify_exclusion(t.root(), key(i), proof)


def test_no_proof_verifies_for_present_key_small_tries():
    rng = random.Random(5)
    for n in range(1, 5):
        keys = [key(rng.randrange(10**6)) for _ in range(n)]
        t = Mpt()
        for k in set(keys):
            t = t.insert(k)
        present = keys[0]
        # exhaustive-ish search over proof shapes assembled from real digests
        digests = [t.root(), EMPTY_ROOT, bytes(32), present] + [key(i) for i in range(3)]
        for depth in range(0, 3):
            for other in [None, key(999), present]:
                for _ in range(20):
                    sibs = tuple(rng.choice(digests) for _ in range(depth))
                    proof = ExclusionProof(depth, sibs, other)
                    assert not verify_exclusion(t.root(), present, proof)


def test_partial_update_matches_full_insert():
    rng = random.Random(11)
    t = Mpt()
    inserted = []
    for i in range(64):
        k = key(rng.randrange(10**9))
        if t.contains(k):
            continue
        proof = t.prove_exclusion(k)
        t_next = t.insert(k)
        assert proof.root_after_insert(k) == t_next.root()
        t = t_next
        inserted.append(k)
    assert all(t.contains(k) for k in inserted)


def test_proof_wire_roundtrip():
    t = Mpt().insert(key(1)).insert(key(2))
    proof = t.prove_exclusion(key(3))
    raw = proof.to_bytes()
    assert ExclusionProof.from_bytes(raw) == proof
    assert verify_exclusion(t.root(), key(3), ExclusionProof.from_bytes(raw))


def test_apply_deposit_fresh():
    state = AccountDepositState()
    shadow = Mpt()
    proof = shadow.prove_exclusion(key(1))
    new = apply_deposit(state, key(1), 0, proof)
    assert new.epoch == 0
    assert new.root == shadow.insert(key(1)).root()


def test_apply_deposit_rejects_double():
    state = AccountDepositState()
    shadow = Mpt()
    proof = shadow.prove_exclusion(key(1))
    state = apply_deposit(state, key(1), 0, proof)
    with pytest.raises(DoubleDepositError):
        apply_deposit(state, key(1), 0, proof)


def test_collect_resets_epoch_and_root():
    state = AccountDepositState()
    proof = Mpt().prove_exclusion(key(1))
    state = apply_deposit(state, key(1), 0, proof, collect=True)
    assert state.epoch == 1 and state.root == EMPTY_ROOT
    with pytest.raises(StaleEpochError):
        apply_deposit(state, key(2), 0, Mpt().prove_exclusion(key(2)))
    # matching the new epoch works again
    state2 = apply_deposit(state, key(1), 1, Mpt().prove_exclusion(key(1)))
    assert state2.epoch == 1


def differential_fuzz(operations: int, seed: int) -> None:
    rng = random.Random(seed)
    t = Mpt()
    oracle: set[bytes] = set()
    pool = [key(i) for i in range(64)]
    for _ in range(operations):
        k = rng.choice(pool)
        op = rng.choice(["insert", "prove", "contains"])
        if op == "insert":
            if k in oracle:
                with pytest.raises(DuplicateKeyError):
                    t.insert(k)
            else:
                t = t.insert(k)
                oracle.add(k)
        elif op == "prove":
            if k in oracle:
                with pytest.raises(KeyPresentError):
                    t.prove_exclusion(k)
            else:
                assert verify_exclusion(t.root(), k, t.prove_exclusion(k))
        else:
            assert t.contains(k) == (k in oracle)


def test_differential_fuzz_small():
    differential_fuzz(500, seed=1)
