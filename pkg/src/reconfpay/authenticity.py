"""Simulated unforgeable signatures.

A keyed digest over the canonical payload bytes stands in for asymmetric
signatures: the model only needs that nobody can mint an envelope for a
sender whose secret it does not hold. Secrets are derived per process from
the scenario seed and handed out by the simulator as `Signer` capabilities;
scripted Byzantine processes receive signers for their own identities only,
so forgery is impossible by construction while replay and forwarding of
observed envelopes remain allowed.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Any

from .codec import Wire, encode
from .core import ProcessId

TAG_LEN = 32
_KIND_BYTE = {"client": b"c", "server": b"r"}


def _pid_bytes(pid: ProcessId) -> bytes:
    return _KIND_BYTE[pid.kind] + struct.pack(">I", pid.index)


@dataclass(frozen=True, eq=False)
class SignedEnvelope(Wire):
    WIRE = "envelope"
    sender: ProcessId
    payload: Any
    tag: bytes

    def payload_bytes(self) -> bytes:
        return encode(self.payload)

    def to_bytes(self) -> bytes:
        """Documented layout: sender(5B) | payload-len(4B) | payload | tag(32B)."""
        body = self.payload_bytes()
        return _pid_bytes(self.sender) + struct.pack(">I", len(body)) + body + self.tag


class KeyChain:
    """Per-run PKI stand-in: derives process secrets from the scenario seed."""

    def __init__(self, seed: int):
        self._root = hashlib.sha256(b"reconfpay-keys" + struct.pack(">Q", seed & (2**64 - 1))).digest()
        self._secrets: dict[ProcessId, bytes] = {}

    def _secret(self, pid: ProcessId) -> bytes:
        secret = self._secrets.get(pid)
        if secret is None:
            secret = hashlib.sha256(self._root + _pid_bytes(pid)).digest()
            self._secrets[pid] = secret
        return secret

    def signer(self, pid: ProcessId) -> "Signer":
        return Signer(pid, self._secret(pid))

    def verify(self, envelope: SignedEnvelope) -> bool:
        if len(envelope.tag) != TAG_LEN:
            return False
        expected = _mac(self._secret(envelope.sender), envelope.payload_bytes())
        return expected == envelope.tag


def _mac(secret: bytes, payload: bytes) -> bytes:
    return hashlib.blake2b(payload, key=secret, digest_size=TAG_LEN).digest()


class Signer:
    """Capability to sign payloads as one specific process."""

    def __init__(self, pid: ProcessId, secret: bytes):
        self.pid = pid
        self._secret = secret

    def sign(self, payload: Any) -> SignedEnvelope:
        return SignedEnvelope(self.pid, payload, _mac(self._secret, encode(payload)))
