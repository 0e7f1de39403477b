"""Binary Merkle Patricia trie for the deposit ledger.

Keys are 32-byte digests of used withdrawal certificates. Elements live only
on the path determined by the bit representation of their digest, so absence
is provable: an exclusion proof walks from the root to the unique slot the
key could occupy and shows that slot is empty or holds a different leaf.
Validators keep just (epoch, root) per account and update the root through
the partial trie reconstructed from a proof; path compression is off, one
bit per level.

Node codec: leaf = H(0x00 || key); internal = H(0x01 || left || right);
absent child = 32 zero bytes; empty root = H(0x01 || 0^32 || 0^32).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional, Union

KEY_BITS = 256
ZERO = bytes(32)


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _leaf_digest(key: bytes) -> bytes:
    return _h(b"\x00" + key)


def _internal_digest(left: bytes, right: bytes) -> bytes:
    return _h(b"\x01" + left + right)


EMPTY_ROOT = _internal_digest(ZERO, ZERO)


def _bit(key: bytes, depth: int) -> int:
    return (key[depth // 8] >> (7 - depth % 8)) & 1


class DuplicateKeyError(ValueError):
    """Raised on insertion of a key already present ("already deposited")."""


class KeyPresentError(ValueError):
    """Raised when asked to prove exclusion of a present key."""


class StaleEpochError(ValueError):
    """Deposit certificate minted for a different epoch."""


class DoubleDepositError(ValueError):
    """Exclusion proof does not verify: the certificate was already used."""


@dataclass(frozen=True)
class _Leaf:
    key: bytes


@dataclass(frozen=True)
class _Internal:
    left: Optional[Union["_Internal", _Leaf]]
    right: Optional[Union["_Internal", _Leaf]]


_Node = Optional[Union[_Internal, _Leaf]]


def _node_digest(node: _Node, at_root: bool) -> bytes:
    if node is None:
        return EMPTY_ROOT if at_root else ZERO
    if isinstance(node, _Leaf):
        return _leaf_digest(node.key)
    return _internal_digest(_node_digest(node.left, False), _node_digest(node.right, False))


def _split(a: bytes, b: bytes, depth: int) -> _Internal:
    """Grow internal nodes until the two keys diverge, then place both leaves."""
    if depth >= KEY_BITS:
        raise AssertionError("identical keys reached maximum depth")
    bits = (_bit(a, depth), _bit(b, depth))
    if bits == (0, 0):
        return _Internal(_split(a, b, depth + 1), None)
    if bits == (1, 1):
        return _Internal(None, _split(a, b, depth + 1))
    if bits == (0, 1):
        return _Internal(_Leaf(a), _Leaf(b))
    return _Internal(_Leaf(b), _Leaf(a))


def _insert(node: _Node, key: bytes, depth: int) -> _Node:
    if node is None:
        return _Leaf(key)
    if isinstance(node, _Leaf):
        if node.key == key:
            raise DuplicateKeyError("already deposited")
        return _split(node.key, key, depth)
    if _bit(key, depth) == 0:
        return _Internal(_insert(node.left, key, depth + 1), node.right)
    return _Internal(node.left, _insert(node.right, key, depth + 1))


class Mpt:
    """Immutable insert-only trie; operations return new versions."""

    __slots__ = ("_root_node", "_root_digest")

    def __init__(self, _node: _Node = None):
        self._root_node = _node
        self._root_digest: Optional[bytes] = None

    def root(self) -> bytes:
        if self._root_digest is None:
            self._root_digest = _node_digest(self._root_node, True)
        return self._root_digest

    def contains(self, key: bytes) -> bool:
        node = self._root_node
        depth = 0
        while isinstance(node, _Internal):
            node = node.right if _bit(key, depth) else node.left
            depth += 1
        return isinstance(node, _Leaf) and node.key == key

    def insert(self, key: bytes) -> "Mpt":
        _check_key(key)
        return Mpt(_insert(self._root_node, key, 0))

    def prove_exclusion(self, key: bytes) -> "ExclusionProof":
        _check_key(key)
        siblings: list[bytes] = []
        node = self._root_node
        depth = 0
        while isinstance(node, _Internal):
            if _bit(key, depth):
                siblings.append(_node_digest(node.left, False))
                node = node.right
            else:
                siblings.append(_node_digest(node.right, False))
                node = node.left
            depth += 1
        if isinstance(node, _Leaf):
            if node.key == key:
                raise KeyPresentError("key is present; no exclusion proof exists")
            return ExclusionProof(depth, tuple(siblings), node.key)
        return ExclusionProof(depth, tuple(siblings), None)


def _check_key(key: bytes) -> None:
    if len(key) != 32:
        raise ValueError("trie keys are 32-byte digests")


@dataclass(frozen=True)
class ExclusionProof:
    """Sibling digests from the root toward the key plus the terminal slot."""

    depth: int
    siblings: tuple[bytes, ...]
    other_leaf: Optional[bytes]  # None: the slot is empty; else a foreign leaf key

    def _terminal_digest(self) -> bytes:
        if self.other_leaf is not None:
            return _leaf_digest(self.other_leaf)
        return EMPTY_ROOT if self.depth == 0 else ZERO

    def _fold(self, key: bytes, leaf_digest: bytes) -> bytes:
        current = leaf_digest
        for level in range(self.depth - 1, -1, -1):
            sib = self.siblings[level]
            if _bit(key, level):
                current = _internal_digest(sib, current)
            else:
                current = _internal_digest(current, sib)
        return current

    def root_before(self, key: bytes) -> bytes:
        return self._fold(key, self._terminal_digest())

    def root_after_insert(self, key: bytes) -> bytes:
        """Root of the trie once `key` is added at the slot this proof pins."""
        if self.other_leaf is None:
            new_node: _Node = _Leaf(key)
        else:
            new_node = _split(self.other_leaf, key, self.depth)
        return self._fold(key, _node_digest(new_node, self.depth == 0))

    def to_bytes(self) -> bytes:
        tag = b"\x00" if self.other_leaf is None else b"\x01" + self.other_leaf
        return struct.pack(">H", self.depth) + b"".join(self.siblings) + tag

    @staticmethod
    def from_bytes(raw: bytes) -> "ExclusionProof":
        if len(raw) < 3:
            raise ValueError("truncated proof")
        depth = struct.unpack(">H", raw[:2])[0]
        body = raw[2 : 2 + 32 * depth]
        if len(body) != 32 * depth:
            raise ValueError("truncated proof")
        siblings = tuple(body[i : i + 32] for i in range(0, len(body), 32))
        rest = raw[2 + 32 * depth :]
        if rest[:1] == b"\x00" and len(rest) == 1:
            return ExclusionProof(depth, siblings, None)
        if rest[:1] == b"\x01" and len(rest) == 33:
            return ExclusionProof(depth, siblings, rest[1:])
        raise ValueError("malformed proof terminal")


def verify_exclusion(root: bytes, key: bytes, proof: ExclusionProof) -> bool:
    _check_key(key)
    if proof.depth < 0 or len(proof.siblings) != proof.depth or proof.depth > KEY_BITS:
        return False
    if proof.other_leaf is not None:
        if len(proof.other_leaf) != 32 or proof.other_leaf == key:
            return False
        # the foreign leaf must sit on key's path: identical bits up to depth
        for level in range(proof.depth):
            if _bit(proof.other_leaf, level) != _bit(key, level):
                return False
    return proof.root_before(key) == root


@dataclass(frozen=True)
class AccountDepositState:
    """Constant-size validator state per account: generation counter + root."""

    epoch: int = 0
    root: bytes = EMPTY_ROOT


def apply_deposit(
    state: AccountDepositState,
    cert_digest: bytes,
    cert_epoch: int,
    proof: ExclusionProof,
    collect: bool = False,
) -> AccountDepositState:
    if cert_epoch != state.epoch:
        raise StaleEpochError("stale epoch")
    if not verify_exclusion(state.root, cert_digest, proof):
        raise DoubleDepositError("double deposit")
    if collect:
        return AccountDepositState(state.epoch + 1, EMPTY_ROOT)
    return AccountDepositState(state.epoch, proof.root_after_insert(cert_digest))
