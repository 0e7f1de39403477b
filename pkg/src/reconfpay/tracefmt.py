"""JSON rendering of transactions and views for trace notes and checkers."""

from __future__ import annotations

from .core import Deposit, Minting, ProcessId, Transaction, Vote, Withdrawal


def tx_json(tx: Transaction) -> dict:
    if isinstance(tx, Withdrawal):
        return {
            "kind": "withdrawal",
            "issuer": tx.issuer.label(),
            "receiver": tx.receiver.label(),
            "amount": tx.amount,
            "sn": tx.sn,
        }
    if isinstance(tx, Deposit):
        return {
            "kind": "deposit",
            "issuer": tx.issuer.label(),
            "withdrawal": tx_json(tx.withdrawal),
            "sn": tx.sn,
        }
    if isinstance(tx, Minting):
        return {"kind": "minting", "issuer": tx.issuer.label(), "amount": tx.amount, "sn": tx.sn}
    if isinstance(tx, Vote):
        return {"kind": "vote", "issuer": tx.issuer.label(), "motion": tx.motion.hex(), "sn": tx.sn}
    raise TypeError(f"not a transaction: {tx!r}")


def tx_from_json(data: dict) -> Transaction:
    kind = data["kind"]
    issuer = ProcessId.parse(data["issuer"])
    if kind == "withdrawal":
        return Withdrawal(issuer, ProcessId.parse(data["receiver"]), data["amount"], data["sn"])
    if kind == "deposit":
        return Deposit(issuer, tx_from_json(data["withdrawal"]), data["sn"])
    if kind == "minting":
        return Minting(issuer, data["amount"], data["sn"])
    if kind == "vote":
        return Vote(issuer, bytes.fromhex(data["motion"]), data["sn"])
    raise ValueError(f"unknown transaction kind: {kind}")
