"""Domain types for threat trees, countermeasures and the risk arithmetic."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import total_ordering
from typing import Iterable, Iterator, Optional, Tuple

# Money amounts must fit a signed 64-bit integer so persisted models stay portable.
MONEY_MAX = 2**63 - 1
FACTOR_SCALE = 10_000  # mitigation factors carry at most 4 decimal digits

ID_PATTERN = re.compile(r"[a-z0-9-]+")


class MoneyOverflowError(OverflowError):
    pass


@total_ordering
@dataclass(frozen=True)
class Money:
    """Non-negative amount in minor currency units (e.g. cents)."""

    amount: int

    def __post_init__(self) -> None:
        if isinstance(self.amount, bool) or not isinstance(self.amount, int):
            raise TypeError(f"money amount must be an int, got {type(self.amount).__name__}")
        if self.amount < 0:
            raise ValueError(f"money amount must be >= 0, got {self.amount}")
        if self.amount > MONEY_MAX:
            raise MoneyOverflowError(f"money amount {self.amount} exceeds {MONEY_MAX}")

    def __add__(self, other: Money) -> Money:
        if not isinstance(other, Money):
            return NotImplemented
        return Money(self.amount + other.amount)

    def __lt__(self, other: Money) -> bool:
        if not isinstance(other, Money):
            return NotImplemented
        return self.amount < other.amount

    @staticmethod
    def total(amounts: Iterable[Money]) -> Money:
        result = Money(0)
        for m in amounts:
            result = result + m
        return result


@dataclass(frozen=True)
class Threat:
    id: str
    title: str
    damage: Money
    attacker_effort: Money
    notes: Optional[str] = None

    def __post_init__(self) -> None:
        check_id(self.id)
        if self.attacker_effort.amount <= 0:
            raise ValueError(f"threat {self.id!r}: attacker effort must be > 0")


@dataclass(frozen=True)
class TreeNode:
    """A threat-tree node: internal (children) or leaf (threat_refs), never both.

    Decomposition is OR-only; children refine the parent's threat class.
    """

    id: str
    label: str
    children: Tuple[TreeNode, ...] = ()
    threat_refs: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        check_id(self.id)
        if bool(self.children) == bool(self.threat_refs):
            raise ValueError(f"node {self.id!r} needs exactly one of children or threat_refs")

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator[TreeNode]:
        """Pre-order traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> Iterator[TreeNode]:
        return (n for n in self.walk() if n.is_leaf)


@dataclass(frozen=True)
class Mitigation:
    threat_id: str
    factor: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "factor", check_factor(self.factor))


@dataclass(frozen=True)
class Countermeasure:
    id: str
    title: str
    cost: Money
    mitigates: Tuple[Mitigation, ...] = ()
    notes: Optional[str] = None

    def __post_init__(self) -> None:
        check_id(self.id)
        seen = set()
        for m in self.mitigates:
            if m.threat_id in seen:
                raise ValueError(f"countermeasure {self.id!r} lists threat {m.threat_id!r} twice")
            seen.add(m.threat_id)

    def factor_for(self, threat_id: str) -> Optional[Fraction]:
        for m in self.mitigates:
            if m.threat_id == threat_id:
                return m.factor
        return None


@dataclass(frozen=True)
class AnalysisConfig:
    damage_threshold: Money
    effort_threshold: Money
    currency: str = "EUR"

    def __post_init__(self) -> None:
        if self.damage_threshold.amount <= 0 or self.effort_threshold.amount <= 0:
            raise ValueError("analysis thresholds must be > 0")


@dataclass(frozen=True)
class Model:
    """Threats, their tree, the countermeasure catalog and analysis settings.

    Construction only enforces per-field invariants; cross-references and
    tree completeness are checked by :func:`retrofit.ingest.validate_model`.
    """

    threats: Tuple[Threat, ...]
    tree: TreeNode
    countermeasures: Tuple[Countermeasure, ...]
    config: AnalysisConfig
    version: int = 1
    _threat_index: dict = field(default=None, init=False, repr=False, compare=False)
    _cm_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "threats", tuple(self.threats))
        object.__setattr__(self, "countermeasures", tuple(self.countermeasures))
        object.__setattr__(self, "_threat_index", {t.id: t for t in self.threats})
        object.__setattr__(self, "_cm_index", {c.id: c for c in self.countermeasures})

    @property
    def currency(self) -> str:
        return self.config.currency

    def threat(self, threat_id: str) -> Threat:
        return self._threat_index[threat_id]

    def countermeasure(self, cm_id: str) -> Countermeasure:
        return self._cm_index[cm_id]

    def has_threat(self, threat_id: str) -> bool:
        return threat_id in self._threat_index

    def has_countermeasure(self, cm_id: str) -> bool:
        return cm_id in self._cm_index


def check_id(value: str) -> str:
    if not isinstance(value, str) or not ID_PATTERN.fullmatch(value):
        raise ValueError(f"invalid identifier {value!r}; expected [a-z0-9-]+")
    return value


def check_factor(value) -> Fraction:
    """Coerce to an exact rational in [0, 1] with at most 4 decimal digits."""
    if isinstance(value, float):
        raise TypeError("mitigation factors must be exact (Fraction, Decimal, int or str)")
    f = Fraction(value)
    if not 0 <= f <= 1:
        raise ValueError(f"mitigation factor {value} outside [0, 1]")
    if (f * FACTOR_SCALE).denominator != 1:
        raise ValueError(f"mitigation factor {value} has more than 4 decimal digits")
    return f


def risk_score(threat: Threat) -> Fraction:
    """Damage per unit of attacker effort, as an exact rational."""
    return Fraction(threat.damage.amount, threat.attacker_effort.amount)


def combined_mitigation(factors: Iterable[Fraction]) -> Fraction:
    """Stack independent mitigations: ``1 - prod(1 - f)``; no factors gives 0."""
    remaining = Fraction(1)
    for f in factors:
        if not 0 <= f <= 1:
            raise ValueError(f"mitigation factor {f} outside [0, 1]")
        remaining *= 1 - Fraction(f)
    return 1 - remaining
