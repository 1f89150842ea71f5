"""Threat classification: risk scores, quadrants, tree roll-ups, residual risk."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import AbstractSet, Dict, Iterable, List, Tuple

from .ingest import Finding, ModelError, Severity, require_valid
from .model import AnalysisConfig, Model, Money, Threat, TreeNode, combined_mitigation, risk_score


class Quadrant(str, enum.Enum):
    """Damage x effort classification; "high" means >= the threshold."""

    CRITICAL = "Critical"  # high damage, low effort
    STRATEGIC = "Strategic"  # high damage, high effort
    NUISANCE = "Nuisance"  # low damage, low effort
    NEGLIGIBLE = "Negligible"  # low damage, high effort


QUADRANT_ORDER = (Quadrant.CRITICAL, Quadrant.STRATEGIC, Quadrant.NUISANCE, Quadrant.NEGLIGIBLE)


def classify(damage: Money, effort: Money, config: AnalysisConfig) -> Quadrant:
    high_damage = damage.amount >= config.damage_threshold.amount
    high_effort = effort.amount >= config.effort_threshold.amount
    if high_damage:
        return Quadrant.STRATEGIC if high_effort else Quadrant.CRITICAL
    return Quadrant.NEGLIGIBLE if high_effort else Quadrant.NUISANCE


@dataclass(frozen=True)
class ThreatRow:
    threat_id: str
    title: str
    damage: Money
    attacker_effort: Money
    risk_score: Fraction
    quadrant: Quadrant


@dataclass(frozen=True)
class NodeRollup:
    node_id: str
    label: str
    depth: int
    worst_damage: Money
    least_effort: Money
    max_risk: Fraction
    total_exposure: Money


@dataclass(frozen=True)
class RiskReport:
    currency: str
    damage_threshold: Money
    effort_threshold: Money
    rows: Tuple[ThreatRow, ...]
    rollups: Tuple[NodeRollup, ...]  # tree pre-order
    total_risk: Fraction
    total_exposure: Money

    def quadrant_counts(self) -> Dict[Quadrant, int]:
        counts = {q: 0 for q in QUADRANT_ORDER}
        for row in self.rows:
            counts[row.quadrant] += 1
        return counts


def _row_key(row: ThreatRow):
    return (-row.risk_score, row.threat_id)


def _rollup(node: TreeNode, threats: Dict[str, Threat], depth: int, acc: List[NodeRollup]) -> NodeRollup:
    slot = len(acc)
    acc.append(None)  # placeholder keeps pre-order while children are computed
    if node.is_leaf:
        members = [threats[ref] for ref in node.threat_refs]
        worst = max(t.damage for t in members)
        least = min(t.attacker_effort for t in members)
        top = max(risk_score(t) for t in members)
        exposure = Money.total(t.damage for t in members)
    else:
        kids = [_rollup(c, threats, depth + 1, acc) for c in node.children]
        worst = max(k.worst_damage for k in kids)
        least = min(k.least_effort for k in kids)
        top = max(k.max_risk for k in kids)
        exposure = Money.total(k.total_exposure for k in kids)
    result = NodeRollup(node.id, node.label, depth, worst, least, top, exposure)
    acc[slot] = result
    return result


def analyze(model: Model) -> RiskReport:
    """Score and classify every threat and roll the estimates up the tree.

    Raises :class:`ModelError` when the model has outstanding errors.
    """
    require_valid(model)
    rows = [
        ThreatRow(t.id, t.title, t.damage, t.attacker_effort, risk_score(t),
                  classify(t.damage, t.attacker_effort, model.config))
        for t in model.threats
    ]
    rows.sort(key=_row_key)
    rollups: List[NodeRollup] = []
    _rollup(model.tree, {t.id: t for t in model.threats}, 0, rollups)
    return RiskReport(
        currency=model.currency,
        damage_threshold=model.config.damage_threshold,
        effort_threshold=model.config.effort_threshold,
        rows=tuple(rows),
        rollups=tuple(rollups),
        total_risk=sum((r.risk_score for r in rows), Fraction(0)),
        total_exposure=Money.total(t.damage for t in model.threats),
    )


@dataclass(frozen=True)
class ResidualRow:
    threat_id: str
    risk_score: Fraction
    mitigation: Fraction  # combined factor of the implemented measures
    residual: Fraction


def unknown_countermeasures(model: Model, ids: Iterable[str]) -> List[str]:
    return sorted(i for i in set(ids) if not model.has_countermeasure(i))


def bad_ref_error(missing: Iterable[str]) -> ModelError:
    findings = [
        Finding(Severity.ERROR, "E-BAD-REF", f"unknown countermeasure id {cid!r}", "/countermeasures")
        for cid in missing
    ]
    return ModelError(findings)


def residual_rows(model: Model, implemented: AbstractSet[str]) -> List[ResidualRow]:
    rows = []
    for t in model.threats:
        factors = [
            f
            for cm in model.countermeasures
            if cm.id in implemented
            for f in [cm.factor_for(t.id)]
            if f is not None
        ]
        score = risk_score(t)
        mitigation = combined_mitigation(factors)
        rows.append(ResidualRow(t.id, score, mitigation, score * (1 - mitigation)))
    return rows


def residual_risk(model: Model, implemented: AbstractSet[str]) -> Tuple[Fraction, List[ResidualRow]]:
    """Total and per-threat risk left once ``implemented`` measures are in place.

    Unknown countermeasure ids raise :class:`ModelError` carrying E-BAD-REF.
    """
    missing = unknown_countermeasures(model, implemented)
    if missing:
        raise bad_ref_error(missing)
    rows = residual_rows(model, frozenset(implemented))
    return sum((r.residual for r in rows), Fraction(0)), rows
