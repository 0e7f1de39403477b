"""Membership lattice, transactions, logs and the balance arithmetic.

Views are sets of signed join/leave changes; their members are the servers
added and not removed. Logs are sets of transactions replayed per client in
sequence-number order. All functions here are pure over immutable values.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Union

from .codec import U64_MAX, Wire, encode

Balances = Mapping["ProcessId", int]


class AmountOverflowError(ArithmeticError):
    """A sum of amounts left the unsigned 64-bit range."""


class DegenerateViewError(ValueError):
    """Quorum arithmetic requested on a view with no members."""


def checked_add(a: int, b: int) -> int:
    total = a + b
    if total > U64_MAX:
        raise AmountOverflowError(f"amount sum exceeds u64: {a} + {b}")
    return total


# ---------------------------------------------------------------------------
# Process identities


@dataclass(frozen=True, order=True)
class ProcessId:
    WIRE = "pid"
    kind: str  # "client" | "server"
    index: int

    def __post_init__(self) -> None:
        if self.kind not in ("client", "server"):
            raise ValueError(f"bad process kind: {self.kind}")
        if self.index < 0:
            raise ValueError("process index must be non-negative")

    @property
    def is_server(self) -> bool:
        return self.kind == "server"

    @property
    def is_client(self) -> bool:
        return self.kind == "client"

    def label(self) -> str:
        return f"{self.kind}:{self.index}"

    @staticmethod
    def parse(label: str) -> "ProcessId":
        kind, _, idx = label.partition(":")
        return ProcessId(kind, int(idx))


def client(index: int) -> ProcessId:
    return ProcessId("client", index)


def server(index: int) -> ProcessId:
    return ProcessId("server", index)


# ---------------------------------------------------------------------------
# Changes, views, sequences

PLUS = "+"
MINUS = "-"


@dataclass(frozen=True, order=True)
class Change:
    WIRE = "change"
    sign: str
    server: ProcessId

    def __post_init__(self) -> None:
        if self.sign not in (PLUS, MINUS):
            raise ValueError(f"bad change sign: {self.sign}")
        if not self.server.is_server:
            raise ValueError("changes may only name servers")


def plus(r: ProcessId) -> Change:
    return Change(PLUS, r)


def minus(r: ProcessId) -> Change:
    return Change(MINUS, r)


@dataclass(frozen=True, eq=False)
class View(Wire):
    WIRE = "view"
    changes: frozenset[Change] = frozenset()

    def members(self) -> frozenset[ProcessId]:
        cached = self.__dict__.get("_members")
        if cached is None:
            cached = frozenset(
                c.server
                for c in self.changes
                if c.sign == PLUS and Change(MINUS, c.server) not in self.changes
            )
            object.__setattr__(self, "_members", cached)
        return cached

    def quorum(self) -> int:
        n = len(self.members())
        if n == 0:
            raise DegenerateViewError("degenerate view")
        return n - (n - 1) // 3

    def plurality(self) -> int:
        n = len(self.members())
        if n == 0:
            raise DegenerateViewError("degenerate view")
        return (n - 1) // 3 + 1

    def union(self, other: "View") -> "View":
        return View(self.changes | other.changes)

    def key(self) -> tuple[int, bytes]:
        """Deterministic ordering: cardinality first, canonical bytes after."""
        cached = self.__dict__.get("_key")
        if cached is None:
            cached = (len(self.changes), encode(self))
            object.__setattr__(self, "_key", cached)
        return cached

    def __le__(self, other: "View") -> bool:
        return self.changes <= other.changes

    def __lt__(self, other: "View") -> bool:
        return self.changes < other.changes

    def __contains__(self, change: Change) -> bool:
        return change in self.changes


def view_of(changes: Iterable[Change]) -> View:
    return View(frozenset(changes))


def genesis_view(servers: Iterable[ProcessId]) -> View:
    return view_of(plus(r) for r in servers)


def comparable(v: View, w: View) -> bool:
    return v.changes <= w.changes or v.changes > w.changes


def min_cardinality_view(views: Iterable[View]) -> View:
    return min(views, key=View.key)


def max_cardinality_view(views: Iterable[View]) -> View:
    return max(views, key=View.key)


def is_view_sequence(views: Iterable[View]) -> bool:
    vs = list(views)
    return all(comparable(a, b) for i, a in enumerate(vs) for b in vs[i + 1 :])


@dataclass(frozen=True, eq=False)
class Sequence(Wire):
    WIRE = "sequence"
    views: frozenset[View]

    def __post_init__(self) -> None:
        if not is_view_sequence(self.views):
            raise ValueError("views of a sequence must be pairwise comparable")

    def follows(self, v: View) -> bool:
        return all(v < w for w in self.views)

    def first(self) -> View:
        if not self.views:
            raise ValueError("empty sequence has no first view")
        return min(self.views, key=View.key)

    def last(self) -> View:
        if not self.views:
            raise ValueError("empty sequence has no last view")
        return max(self.views, key=View.key)


def seq_follows(views: Iterable[View], v: View) -> bool:
    return all(v < w for w in views)


# ---------------------------------------------------------------------------
# Motions

MotionId = bytes


def motion_id(statement: str) -> MotionId:
    return hashlib.sha256(statement.encode("utf-8")).digest()


def add_server_statement(r: ProcessId) -> str:
    return f"add server {r.label()}"


def remove_server_statement(r: ProcessId) -> str:
    return f"remove server {r.label()}"


def add_server_motion(r: ProcessId) -> MotionId:
    return motion_id(add_server_statement(r))


def remove_server_motion(r: ProcessId) -> MotionId:
    return motion_id(remove_server_statement(r))


# ---------------------------------------------------------------------------
# Transactions


@dataclass(frozen=True, eq=False)
class Withdrawal(Wire):
    WIRE = "tx.withdrawal"
    issuer: ProcessId
    receiver: ProcessId
    amount: int
    sn: int

    def __post_init__(self) -> None:
        _check_tx_header(self)
        if not self.receiver.is_client:
            raise ValueError("withdrawal receiver must be a client")
        if not 0 < self.amount <= U64_MAX:
            raise ValueError("withdrawal amount must be a positive u64")


@dataclass(frozen=True, eq=False)
class Deposit(Wire):
    WIRE = "tx.deposit"
    issuer: ProcessId
    withdrawal: Withdrawal
    sn: int

    def __post_init__(self) -> None:
        _check_tx_header(self)
        if self.withdrawal.receiver != self.issuer:
            raise ValueError("a deposit must claim a withdrawal addressed to its issuer")


@dataclass(frozen=True, eq=False)
class Minting(Wire):
    WIRE = "tx.minting"
    issuer: ProcessId
    amount: int
    sn: int

    def __post_init__(self) -> None:
        _check_tx_header(self)
        if not 0 < self.amount <= U64_MAX:
            raise ValueError("minting amount must be a positive u64")


@dataclass(frozen=True, eq=False)
class Vote(Wire):
    WIRE = "tx.vote"
    issuer: ProcessId
    motion: MotionId
    sn: int

    def __post_init__(self) -> None:
        _check_tx_header(self)
        if len(self.motion) != 32:
            raise ValueError("motion ids are 32-byte digests")


Transaction = Union[Withdrawal, Deposit, Minting, Vote]
Log = frozenset


def _check_tx_header(tx) -> None:
    if not tx.issuer.is_client:
        raise ValueError("transactions are issued by clients")
    if tx.sn < 1:
        raise ValueError("sequence numbers start at 1")


# ---------------------------------------------------------------------------
# Precedence and admissibility


def _direct_predecessors(tx: Transaction, log: Log) -> list[Transaction]:
    preds = [t for t in log if t.issuer == tx.issuer and t.sn < tx.sn]
    if isinstance(tx, Deposit) and tx.withdrawal in log:
        preds.append(tx.withdrawal)
    return preds


def precedes(t1: Transaction, t2: Transaction, log: Log) -> bool:
    """Transitive closure of same-issuer order and withdrawal references."""
    seen = set()
    stack = [t2]
    while stack:
        cur = stack.pop()
        for pred in _direct_predecessors(cur, log):
            if pred == t1:
                return True
            if pred not in seen:
                seen.add(pred)
                stack.append(pred)
    return False


def _has_cycle(log: Log) -> bool:
    color: dict[Transaction, int] = {}

    def visit(tx: Transaction) -> bool:
        color[tx] = 1
        for pred in _direct_predecessors(tx, log):
            state = color.get(pred, 0)
            if state == 1:
                return True
            if state == 0 and visit(pred):
                return True
        color[tx] = 2
        return False

    return any(color.get(tx, 0) == 0 and visit(tx) for tx in log)


def _initial(initial: Optional[Balances], c: ProcessId) -> int:
    if initial is None:
        return 0
    return initial.get(c, 0)


def client_log(log: Log, c: ProcessId) -> Log:
    return frozenset(tx for tx in log if tx.issuer == c)


def _by_sn(log_c: Log) -> list[Transaction]:
    return sorted(log_c, key=lambda tx: (tx.sn, encode(tx)))


def admissible_client_log(c: ProcessId, log_c: Log, initial: Optional[Balances] = None) -> bool:
    if not log_c:
        return True
    sns = [tx.sn for tx in log_c]
    if len(set(sns)) != len(sns):
        return False  # conflicting transactions
    if set(sns) != set(range(1, max(sns) + 1)):
        return False  # gap in sequence numbers
    balance = _initial(initial, c)
    used_withdrawals: set[Withdrawal] = set()
    for tx in _by_sn(log_c):
        if isinstance(tx, Withdrawal):
            if tx.amount > balance:
                return False  # not enough money
            balance -= tx.amount
        elif isinstance(tx, Deposit):
            if tx.withdrawal in used_withdrawals:
                return False  # withdrawal already used
            used_withdrawals.add(tx.withdrawal)
            balance = checked_add(balance, tx.withdrawal.amount)
        elif isinstance(tx, Minting):
            balance = checked_add(balance, tx.amount)
    return True


def admissible(log: Log, initial: Optional[Balances] = None) -> bool:
    if _has_cycle(log):
        return False
    for tx in log:
        if isinstance(tx, Deposit) and tx.withdrawal not in log:
            return False
    for c in {tx.issuer for tx in log}:
        if not admissible_client_log(c, client_log(log, c), initial):
            return False
    return True


# ---------------------------------------------------------------------------
# Balance arithmetic


def log_balance(log: Log, c: ProcessId, initial: Optional[Balances] = None) -> int:
    balance = _initial(initial, c)
    for tx in _by_sn(client_log(log, c)):
        if isinstance(tx, Withdrawal):
            balance -= tx.amount
        elif isinstance(tx, Deposit):
            balance += tx.withdrawal.amount
        elif isinstance(tx, Minting):
            balance += tx.amount
        if balance > U64_MAX:
            raise AmountOverflowError("balance exceeds u64 during replay")
    return balance


def total_money(log: Log) -> int:
    total = 0
    for tx in log:
        if isinstance(tx, Minting):
            total = checked_add(total, tx.amount)
    return total


def voted_for(log: Log, motion: MotionId, initial: Optional[Balances] = None) -> int:
    voters = {tx.issuer for tx in log if isinstance(tx, Vote) and tx.motion == motion}
    total = 0
    for c in sorted(voters):
        total += log_balance(log, c, initial)
        if total > U64_MAX:
            raise AmountOverflowError("voting tally exceeds u64")
    return total


def support(log: Log, motion: MotionId, initial: Optional[Balances] = None) -> bool:
    tally = voted_for(log, motion, initial)
    return tally > 0 and 2 * tally >= total_money(log)
