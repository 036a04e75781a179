"""Accounts, credit checks, and the double-entry usage ledger.

Balances are kept as exact rationals (``fractions.Fraction``) internally.
Every float amount converts to a Fraction without rounding, so the
conservation invariant (the sum of all balances never changes) and ledger
replay hold bit-for-bit, with no accumulated float drift.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


class UnknownAccountError(KeyError):
    pass


class InsufficientFundsError(Exception):
    pass


@dataclass
class Account:
    id: str
    owner: str
    balance: Fraction


@dataclass(frozen=True)
class UsageRecord:
    """Metering output for one finished job: what ran where, and for how much."""

    consumer: str
    provider: str
    resource: str
    job: str
    pe_seconds: float
    data_mb: float
    amount: float
    time: float


@dataclass(frozen=True)
class Transaction:
    debit: tuple[str, float]   # (account, amount)
    credit: tuple[str, float]
    record: UsageRecord


class GridBank:
    """Account store plus an append-only transaction ledger.

    Account ids are the owner names (scenario files declare accounts by
    name), so owners must be unique.
    """

    def __init__(self):
        self.accounts: dict[str, Account] = {}
        self.ledger: list[Transaction] = []

    def open_account(self, owner: str, initial_credit: float) -> str:
        if initial_credit < 0:
            raise ValueError(f"initial credit must be >= 0, got {initial_credit}")
        if owner in self.accounts:
            raise ValueError(f"account {owner!r} already exists")
        self.accounts[owner] = Account(id=owner, owner=owner, balance=Fraction(initial_credit))
        return owner

    def _get(self, account: str) -> Account:
        try:
            return self.accounts[account]
        except KeyError:
            raise UnknownAccountError(account) from None

    def balance(self, account: str) -> Fraction:
        return self._get(account).balance

    def check_credit(self, account: str, required: float) -> bool:
        """True iff the account can cover ``required``; never mutates state."""
        return self._get(account).balance >= Fraction(required)

    def charge(self, record: UsageRecord) -> Transaction:
        """Debit the consumer and credit the provider by record.amount.

        All-or-nothing: on insufficient funds no balance moves and nothing
        is appended to the ledger.
        """
        if record.amount < 0:
            raise ValueError(f"charge amount must be >= 0, got {record.amount}")
        consumer = self._get(record.consumer)
        provider = self._get(record.provider)
        amount = Fraction(record.amount)
        if consumer.balance < amount:
            raise InsufficientFundsError(
                f"{record.consumer} has {float(consumer.balance)}, needs {record.amount}"
            )
        consumer.balance -= amount
        provider.balance += amount
        txn = Transaction(
            debit=(record.consumer, record.amount),
            credit=(record.provider, record.amount),
            record=record,
        )
        self.ledger.append(txn)
        return txn

    def statement(self, account: str) -> tuple[list[Transaction], float]:
        """All transactions touching the account, in ledger order, plus the
        closing balance."""
        acct = self._get(account)
        rows = [
            t for t in self.ledger
            if t.debit[0] == account or t.credit[0] == account
        ]
        return rows, float(acct.balance)

    def total_credit(self) -> Fraction:
        """Exact sum of every balance; constant across any run."""
        return sum((a.balance for a in self.accounts.values()), Fraction(0))
