import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reconfpay.codec import encode
from reconfpay.core import (
    AmountOverflowError,
    DegenerateViewError,
    Deposit,
    Minting,
    Sequence,
    View,
    Vote,
    Withdrawal,
    admissible,
    admissible_client_log,
    client,
    comparable,
    genesis_view,
    log_balance,
    minus,
    motion_id,
    plus,
    precedes,
    server,
    support,
    total_money,
    view_of,
    voted_for,
)

R = [server(i) for i in range(12)]
C = [client(i) for i in range(8)]
MOT = motion_id("test motion")


def nview(n):
    return genesis_view(R[:n])


# --- membership arithmetic ---------------------------------------------------


def test_members_empty_view():
    assert View().members() == frozenset()


def test_members_plus_cancelled_by_minus():
    v = view_of([plus(R[1]), plus(R[2]), minus(R[2])])
    assert v.members() == {R[1]}


def test_members_no_minus():
    v = view_of([plus(R[1]), plus(R[2]), plus(R[3]), plus(R[4])])
    assert v.members() == {R[1], R[2], R[3], R[4]}


@pytest.mark.parametrize("n,expected", [(4, 3), (1, 1), (7, 5)])
def test_quorum(n, expected):
    assert nview(n).quorum() == expected


@pytest.mark.parametrize("n,expected", [(4, 2), (1, 1), (10, 4)])
def test_plurality(n, expected):
    assert nview(n).plurality() == expected


def test_quorum_of_degenerate_view():
    with pytest.raises(DegenerateViewError):
        View().quorum()
    with pytest.raises(DegenerateViewError):
        view_of([plus(R[0]), minus(R[0])]).plurality()


@given(st.integers(min_value=1, max_value=500))
def test_quorum_plurality_relations(n):
    v = nview(n) if n <= 12 else None
    q = n - (n - 1) // 3
    p = (n - 1) // 3 + 1
    if v is not None:
        assert v.quorum() == q and v.plurality() == p
    assert q + p == n + 1
    assert 2 * q - n >= p  # two quorums intersect in a plurality


def test_comparable():
    v1 = view_of([plus(R[1])])
    v2 = view_of([plus(R[2])])
    assert comparable(View(), v1)
    assert not comparable(v1, v2)
    assert comparable(v1, v1)


def test_sequence_follows_first_last():
    v1 = view_of([plus(R[1])])
    v2 = view_of([plus(R[1]), plus(R[2])])
    v3 = view_of([plus(R[1]), plus(R[2]), plus(R[3])])
    seq = Sequence(frozenset({v1, v2, v3}))
    assert seq.first() == v1
    assert seq.last() == v3
    assert Sequence(frozenset({v2})).follows(v1)
    assert not Sequence(frozenset({v1})).follows(v1)  # strict containment
    with pytest.raises(ValueError):
        Sequence(frozenset({v1, view_of([plus(R[5])])}))
    with pytest.raises(ValueError):
        Sequence(frozenset()).first()


# --- transactions and precedence ----------------------------------------------


def test_transaction_invariants():
    with pytest.raises(ValueError):
        Withdrawal(C[0], C[1], 5, 0)  # sn >= 1
    with pytest.raises(ValueError):
        Minting(C[0], 0, 1)  # positive amount
    w = Withdrawal(C[0], C[1], 5, 1)
    with pytest.raises(ValueError):
        Deposit(C[2], w, 1)  # receiver must match issuer


def test_precedes_same_issuer():
    a = Minting(C[0], 1, 1)
    b = Minting(C[0], 1, 2)
    log = frozenset({a, b})
    assert precedes(a, b, log)
    assert not precedes(b, a, log)


def test_precedes_withdrawal_deposit():
    w = Withdrawal(C[0], C[1], 5, 1)
    d = Deposit(C[1], w, 1)
    log = frozenset({w, d})
    assert precedes(w, d, log)


def test_precedes_unrelated_mints():
    a = Minting(C[0], 1, 1)
    b = Minting(C[1], 1, 1)
    assert not precedes(a, b, frozenset({a, b}))


def test_precedes_transitive():
    m = Minting(C[0], 10, 1)
    w = Withdrawal(C[0], C[1], 4, 2)
    d = Deposit(C[1], w, 1)
    log = frozenset({m, w, d})
    assert precedes(m, d, log)


# --- admissibility -------------------------------------------------------------


def test_admissible_empty():
    assert admissible(frozenset())


def test_admissible_missing_withdrawal():
    w = Withdrawal(C[0], C[1], 5, 1)
    d = Deposit(C[1], w, 1)
    assert not admissible(frozenset({d}))


def test_admissible_mint_withdraw_deposit():
    m = Minting(C[0], 10, 1)
    w = Withdrawal(C[0], C[1], 4, 2)
    d = Deposit(C[1], w, 1)
    assert admissible(frozenset({m, w, d}))


def test_admissible_rejects_cycle():
    # c0: d2(sn1) then w1(sn2); c1: d1(sn1) then w2(sn2); each deposit claims
    # the other's later withdrawal, so precedence cycles while client logs
    # stay locally plausible.
    w1 = Withdrawal(C[0], C[1], 1, 2)
    w2 = Withdrawal(C[1], C[0], 1, 2)
    d1 = Deposit(C[1], w1, 1)
    d2 = Deposit(C[0], w2, 1)
    log = frozenset({w1, w2, d1, d2})
    assert precedes(w1, w1, log)
    assert not admissible(log)


def test_client_log_conflicting_sn():
    a = Minting(C[0], 1, 1)
    b = Minting(C[0], 2, 1)
    assert not admissible_client_log(C[0], frozenset({a, b}))


def test_client_log_overdraft():
    w = Withdrawal(C[0], C[1], 5, 1)
    assert not admissible_client_log(C[0], frozenset({w}), {C[0]: 3})
    assert admissible_client_log(C[0], frozenset({w}), {C[0]: 5})


def test_client_log_gap():
    assert not admissible_client_log(C[0], frozenset({Minting(C[0], 1, 2)}))


def test_client_log_double_use_of_withdrawal():
    w = Withdrawal(C[1], C[0], 5, 1)
    d1 = Deposit(C[0], w, 1)
    d2 = Deposit(C[0], w, 2)
    assert not admissible_client_log(C[0], frozenset({d1, d2}))


# --- balances -------------------------------------------------------------------


def test_log_balance_empty():
    assert log_balance(frozenset(), C[0], {C[0]: 7}) == 7


def test_log_balance_mint_withdraw():
    m = Minting(C[0], 10, 1)
    w = Withdrawal(C[0], C[1], 4, 2)
    assert log_balance(frozenset({m, w}), C[0], {C[0]: 3}) == 9


def test_log_balance_deposit_credits_receiver():
    w = Withdrawal(C[0], C[1], 4, 1)
    d = Deposit(C[1], w, 1)
    assert log_balance(frozenset({w, d}), C[1]) == 4


def test_total_money_and_voted_for_trivial():
    assert total_money(frozenset()) == 0
    assert voted_for(frozenset(), MOT) == 0


def test_voted_for_two_voters():
    log = frozenset(
        {
            Minting(C[0], 3, 1),
            Vote(C[0], MOT, 2),
            Minting(C[1], 5, 1),
            Vote(C[1], MOT, 2),
        }
    )
    assert voted_for(log, MOT) == 8


def test_support_threshold():
    log5 = frozenset({Minting(C[0], 5, 1), Minting(C[1], 5, 1), Vote(C[0], MOT, 2)})
    assert support(log5, MOT)  # 5 >= 10/2
    log4 = frozenset({Minting(C[0], 4, 1), Minting(C[1], 6, 1), Vote(C[0], MOT, 2)})
    assert not support(log4, MOT)  # 4 < 10/2
    assert not support(frozenset({Minting(C[0], 5, 1)}), MOT)  # nobody voted


def test_amount_overflow_is_hard_error():
    near = 2**64 - 1
    log = frozenset({Minting(C[0], near, 1), Minting(C[1], near, 1)})
    with pytest.raises(AmountOverflowError):
        total_money(log)


# --- randomized properties -------------------------------------------------------


@st.composite
def admissible_logs(draw):
    """Constructively admissible logs of up to ~12 transactions."""
    txs = []
    committed_withdrawals = []
    balances = {}
    n_clients = draw(st.integers(min_value=1, max_value=3))
    sns = {c: 0 for c in C[:n_clients]}
    for _ in range(draw(st.integers(min_value=0, max_value=12))):
        c = draw(st.sampled_from(C[:n_clients]))
        sns[c] += 1
        choices = ["mint"]
        if balances.get(c, 0) > 0:
            choices.append("withdraw")
        pending = [w for w in committed_withdrawals if w.receiver == c]
        if pending:
            choices.append("deposit")
        choices.append("vote")
        kind = draw(st.sampled_from(choices))
        if kind == "mint":
            amt = draw(st.integers(min_value=1, max_value=20))
            txs.append(Minting(c, amt, sns[c]))
            balances[c] = balances.get(c, 0) + amt
        elif kind == "withdraw":
            amt = draw(st.integers(min_value=1, max_value=balances[c]))
            to = draw(st.sampled_from(C[:n_clients]))
            w = Withdrawal(c, to, amt, sns[c])
            txs.append(w)
            balances[c] -= amt
            committed_withdrawals.append(w)
        elif kind == "deposit":
            w = draw(st.sampled_from(pending))
            committed_withdrawals.remove(w)
            txs.append(Deposit(c, w, sns[c]))
            balances[c] = balances.get(c, 0) + w.amount
        else:
            txs.append(Vote(c, MOT, sns[c]))
    return frozenset(txs)


@given(admissible_logs())
@settings(max_examples=120)
def test_generated_logs_are_admissible(log):
    assert admissible(log)


@given(admissible_logs())
@settings(max_examples=80)
def test_precedes_is_strict_partial_order(log):
    txs = sorted(log, key=encode)[:12]
    for t in txs:
        assert not precedes(t, t, log)
    for a in txs:
        for b in txs:
            for c in txs:
                if precedes(a, b, log) and precedes(b, c, log):
                    assert precedes(a, c, log)


@given(admissible_logs())
@settings(max_examples=80)
def test_removing_maximal_tx_keeps_admissible(log):
    for tx in log:
        if any(precedes(tx, other, log) for other in log if other != tx):
            continue
        assert admissible(log - {tx})


@given(admissible_logs())
@settings(max_examples=80)
def test_balance_nonnegative_at_every_prefix(log):
    for c in {tx.issuer for tx in log}:
        ordered = sorted((tx for tx in log if tx.issuer == c), key=lambda t: t.sn)
        for i in range(len(ordered) + 1):
            prefix = frozenset(ordered[:i]) | frozenset(t for t in log if t.issuer != c)
            assert log_balance(prefix, c) >= 0


def _oracle_support(log, motion):
    """Brute-force restatement: recompute each voter balance from scratch."""
    voters = set()
    for tx in log:
        if isinstance(tx, Vote) and tx.motion == motion:
            voters.add(tx.issuer)
    tally = 0
    for c in voters:
        bal = 0
        for tx in sorted((t for t in log if t.issuer == c), key=lambda t: t.sn):
            if isinstance(tx, Withdrawal):
                bal -= tx.amount
            elif isinstance(tx, Deposit):
                bal += tx.withdrawal.amount
            elif isinstance(tx, Minting):
                bal += tx.amount
        tally += bal
    minted = sum(tx.amount for tx in log if isinstance(tx, Minting))
    return tally > 0 and tally >= minted / 2


@given(admissible_logs())
@settings(max_examples=120)
def test_support_matches_bruteforce_oracle(log):
    assert support(log, MOT) == _oracle_support(log, MOT)
