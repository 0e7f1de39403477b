import pytest

from reconfpay.authenticity import KeyChain, SignedEnvelope
from reconfpay.codec import EncodingError, digest, encode
from reconfpay.core import client, server
from reconfpay.messages import Leave, Prepare


def test_sign_verify_roundtrip():
    keys = KeyChain(7)
    env = keys.signer(server(1)).sign(b"hello")
    assert keys.verify(env)


def test_flipped_payload_fails():
    keys = KeyChain(7)
    env = keys.signer(server(1)).sign(b"hello")
    forged = SignedEnvelope(env.sender, b"hellp", env.tag)
    assert not keys.verify(forged)


def test_sender_swap_fails():
    keys = KeyChain(7)
    env = keys.signer(server(1)).sign(b"hello")
    assert not keys.verify(SignedEnvelope(server(2), env.payload, env.tag))


def test_truncated_tag_fails():
    keys = KeyChain(7)
    env = keys.signer(server(1)).sign(b"hello")
    assert not keys.verify(SignedEnvelope(env.sender, env.payload, env.tag[:-1]))


def test_signing_is_deterministic():
    keys = KeyChain(7)
    a = keys.signer(client(3)).sign(Leave())
    b = keys.signer(client(3)).sign(Leave())
    assert a == b and a.tag == b.tag


def test_envelope_byte_layout():
    keys = KeyChain(7)
    env = keys.signer(server(3)).sign(b"xyz")
    raw = env.to_bytes()
    assert raw[:1] == b"r"
    assert int.from_bytes(raw[1:5], "big") == 3
    body_len = int.from_bytes(raw[5:9], "big")
    assert raw[9 : 9 + body_len] == encode(b"xyz")
    assert raw[9 + body_len :] == env.tag and len(env.tag) == 32


def test_structured_payload_signing():
    keys = KeyChain(9)
    from reconfpay.core import Minting, View

    payload = Prepare(Minting(client(0), 5, 1), View())
    env = keys.signer(client(0)).sign(payload)
    assert keys.verify(env)
    assert env.payload.tx.amount == 5


def test_different_seeds_different_tags():
    a = KeyChain(1).signer(server(1)).sign(b"m")
    b = KeyChain(2).signer(server(1)).sign(b"m")
    assert a.tag != b.tag
    assert not KeyChain(2).verify(a)


def test_encode_rejects_unknown_types():
    with pytest.raises(EncodingError):
        encode(object())
    with pytest.raises(EncodingError):
        encode(-1)


def test_encoding_is_canonical_for_sets():
    a = frozenset({b"x", b"y", b"z"})
    b = frozenset({b"z", b"x", b"y"})
    assert encode(a) == encode(b)
    assert digest((1, a)) == digest((1, b))
