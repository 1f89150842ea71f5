"""Byte-stable rendering of risk reports, selection plans and findings.

Three formats: ``text`` (ASCII tables for people), ``json`` (canonical, key
order fixed, rationals as exact ``"num/den"`` strings with a 4-digit decimal
companion) and ``csv`` (fixed header row). Nothing depends on locale,
timezone or dict hashing, so identical input always renders identical bytes.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from fractions import Fraction
from typing import Any, Dict, List, Sequence, Union

from .ingest import Finding, Severity
from .model import Money
from .risk import QUADRANT_ORDER, NodeRollup, Quadrant, ResidualRow, RiskReport, ThreatRow
from .selection import Assurance, Budget, Method, PlannedMeasure, SelectionPlan

Renderable = Union[RiskReport, SelectionPlan, Sequence[Finding]]


class RenderFormat(str, enum.Enum):
    TEXT = "text"
    JSON = "json"
    CSV = "csv"


REPORT_CSV_HEADER = ("id", "title", "damage", "attacker_effort", "risk_score", "risk_score_decimal", "quadrant")
PLAN_CSV_HEADER = ("id", "title", "cost")
FINDINGS_CSV_HEADER = ("severity", "code", "location", "message")


def rational(f: Fraction) -> str:
    return f"{f.numerator}/{f.denominator}"


def decimal4(f: Fraction) -> str:
    """Round half-to-even to 4 decimal places without touching floats."""
    q = round(Fraction(f) * 10_000)
    sign = "-" if q < 0 else ""
    q = abs(q)
    return f"{sign}{q // 10_000}.{q % 10_000:04d}"


def parse_rational(text: str) -> Fraction:
    num, den = text.split("/")
    return Fraction(int(num), int(den))


def render_report(obj: Renderable, fmt: Union[RenderFormat, str] = RenderFormat.TEXT) -> bytes:
    fmt = RenderFormat(fmt)
    if isinstance(obj, RiskReport):
        kind = "report"
    elif isinstance(obj, SelectionPlan):
        kind = "plan"
    else:
        kind = "findings"
        obj = list(obj)
    renderer = _RENDERERS[(kind, fmt)]
    return renderer(obj)


# ---------------------------------------------------------------- json

def _dump_json(data: Any) -> bytes:
    return (json.dumps(data, indent=2, ensure_ascii=True) + "\n").encode("ascii")


def _put_rational(d: Dict[str, Any], key: str, value: Fraction) -> None:
    d[key] = rational(value)
    d[key + "_decimal"] = decimal4(value)


def report_to_json(report: RiskReport) -> Dict[str, Any]:
    totals: Dict[str, Any] = {"threats": len(report.rows)}
    _put_rational(totals, "total_risk", report.total_risk)
    totals["total_exposure"] = report.total_exposure.amount
    rows = []
    for r in report.rows:
        d: Dict[str, Any] = {
            "id": r.threat_id,
            "title": r.title,
            "damage": r.damage.amount,
            "attacker_effort": r.attacker_effort.amount,
        }
        _put_rational(d, "risk_score", r.risk_score)
        d["quadrant"] = r.quadrant.value
        rows.append(d)
    rollups = []
    for n in report.rollups:
        d = {
            "node": n.node_id,
            "label": n.label,
            "depth": n.depth,
            "worst_damage": n.worst_damage.amount,
            "least_effort": n.least_effort.amount,
        }
        _put_rational(d, "max_risk", n.max_risk)
        d["total_exposure"] = n.total_exposure.amount
        rollups.append(d)
    counts = report.quadrant_counts()
    return {
        "kind": "risk-report",
        "currency": report.currency,
        "thresholds": {
            "damage": report.damage_threshold.amount,
            "effort": report.effort_threshold.amount,
        },
        "totals": totals,
        "quadrants": {q.value: counts[q] for q in QUADRANT_ORDER},
        "rows": rows,
        "rollups": rollups,
    }


def plan_to_json(plan: SelectionPlan) -> Dict[str, Any]:
    if isinstance(plan.mode, Budget):
        mode: Dict[str, Any] = {"type": "budget", "limit": plan.mode.limit.amount}
    else:
        mode = {"type": "assurance"}
        _put_rational(mode, "max_residual", plan.mode.max_residual)
    d: Dict[str, Any] = {
        "kind": "selection-plan",
        "currency": plan.currency,
        "mode": mode,
        "method": plan.method.value,
        "chosen": list(plan.chosen),
        "assumed": list(plan.assumed),
        "total_cost": plan.total_cost.amount,
    }
    _put_rational(d, "total_risk", plan.total_risk)
    _put_rational(d, "mitigated_risk", plan.mitigated_risk)
    _put_rational(d, "residual_risk", plan.residual_risk)
    d["requirements"] = [{"id": m.id, "title": m.title, "cost": m.cost.amount} for m in plan.requirements]
    breakdown = []
    for r in plan.breakdown:
        row: Dict[str, Any] = {"threat": r.threat_id}
        _put_rational(row, "risk_score", r.risk_score)
        _put_rational(row, "mitigation", r.mitigation)
        _put_rational(row, "residual", r.residual)
        breakdown.append(row)
    d["breakdown"] = breakdown
    return d


def findings_to_json(findings: Sequence[Finding]) -> Dict[str, Any]:
    return {
        "kind": "findings",
        "errors": sum(1 for f in findings if f.is_error),
        "warnings": sum(1 for f in findings if not f.is_error),
        "findings": [
            {"severity": f.severity.value, "code": f.code, "location": f.location, "message": f.message}
            for f in findings
        ],
    }


def load_json(document: bytes) -> Renderable:
    """Rebuild the value a ``json`` rendering came from."""
    data = json.loads(document.decode("utf-8"))
    kind = data["kind"]
    if kind == "risk-report":
        return RiskReport(
            currency=data["currency"],
            damage_threshold=Money(data["thresholds"]["damage"]),
            effort_threshold=Money(data["thresholds"]["effort"]),
            rows=tuple(
                ThreatRow(r["id"], r["title"], Money(r["damage"]), Money(r["attacker_effort"]),
                          parse_rational(r["risk_score"]), Quadrant(r["quadrant"]))
                for r in data["rows"]
            ),
            rollups=tuple(
                NodeRollup(n["node"], n["label"], n["depth"], Money(n["worst_damage"]),
                           Money(n["least_effort"]), parse_rational(n["max_risk"]),
                           Money(n["total_exposure"]))
                for n in data["rollups"]
            ),
            total_risk=parse_rational(data["totals"]["total_risk"]),
            total_exposure=Money(data["totals"]["total_exposure"]),
        )
    if kind == "selection-plan":
        m = data["mode"]
        mode = Budget(Money(m["limit"])) if m["type"] == "budget" else Assurance(parse_rational(m["max_residual"]))
        return SelectionPlan(
            currency=data["currency"],
            mode=mode,
            method=Method(data["method"]),
            chosen=tuple(data["chosen"]),
            assumed=tuple(data["assumed"]),
            total_cost=Money(data["total_cost"]),
            mitigated_risk=parse_rational(data["mitigated_risk"]),
            residual_risk=parse_rational(data["residual_risk"]),
            total_risk=parse_rational(data["total_risk"]),
            breakdown=tuple(
                ResidualRow(r["threat"], parse_rational(r["risk_score"]),
                            parse_rational(r["mitigation"]), parse_rational(r["residual"]))
                for r in data["breakdown"]
            ),
            requirements=tuple(PlannedMeasure(r["id"], r["title"], Money(r["cost"])) for r in data["requirements"]),
        )
    if kind == "findings":
        return [
            Finding(Severity(f["severity"]), f["code"], f["message"], f["location"])
            for f in data["findings"]
        ]
    raise ValueError(f"unknown rendering kind {kind!r}")


# ---------------------------------------------------------------- csv

def _dump_csv(header: Sequence[str], rows: List[Sequence[Any]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _report_csv(report: RiskReport) -> bytes:
    rows = [
        (r.threat_id, r.title, r.damage.amount, r.attacker_effort.amount,
         rational(r.risk_score), decimal4(r.risk_score), r.quadrant.value)
        for r in report.rows
    ]
    return _dump_csv(REPORT_CSV_HEADER, rows)


def _plan_csv(plan: SelectionPlan) -> bytes:
    return _dump_csv(PLAN_CSV_HEADER, [(m.id, m.title, m.cost.amount) for m in plan.requirements])


def _findings_csv(findings: Sequence[Finding]) -> bytes:
    rows = [(f.severity.value, f.code, f.location, f.message) for f in findings]
    return _dump_csv(FINDINGS_CSV_HEADER, rows)


# ---------------------------------------------------------------- text

def _ascii(text: str) -> str:
    return text.encode("ascii", errors="replace").decode("ascii")


def _table(headers: Sequence[str], rows: Sequence[Sequence[Any]], right: Sequence[int] = ()) -> List[str]:
    cells = [[_ascii(str(c)) for c in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        for i, c in enumerate(row):
            widths[i] = max(widths[i], len(c))
    rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def line(values):
        parts = []
        for i, v in enumerate(values):
            parts.append(v.rjust(widths[i]) if i in right else v.ljust(widths[i]))
        return "| " + " | ".join(parts) + " |"

    out = [rule, line(headers), rule]
    out.extend(line(row) for row in cells)
    out.append(rule)
    return out


def _finish(lines: List[str]) -> bytes:
    return ("\n".join(lines) + "\n").encode("ascii")


def _report_text(report: RiskReport) -> bytes:
    counts = report.quadrant_counts()
    dt, et = report.damage_threshold.amount, report.effort_threshold.amount
    lines = [
        f"RISK REPORT (amounts in {_ascii(report.currency)} minor units)",
        "",
        "Quadrant matrix (threat counts)",
    ]
    lines += _table(
        ["", f"effort < {et}", f"effort >= {et}"],
        [
            [f"damage >= {dt}", f"Critical: {counts[Quadrant.CRITICAL]}", f"Strategic: {counts[Quadrant.STRATEGIC]}"],
            [f"damage < {dt}", f"Nuisance: {counts[Quadrant.NUISANCE]}", f"Negligible: {counts[Quadrant.NEGLIGIBLE]}"],
        ],
    )
    lines += ["", "Threats by risk score (damage / effort)"]
    lines += _table(
        ["#", "id", "damage", "effort", "risk", "quadrant", "title"],
        [
            [i, r.threat_id, r.damage.amount, r.attacker_effort.amount, decimal4(r.risk_score),
             r.quadrant.value, r.title]
            for i, r in enumerate(report.rows, 1)
        ],
        right=(0, 2, 3, 4),
    )
    if report.rollups:
        lines += ["", "Threat tree roll-up (max damage, min effort, max risk, summed exposure)"]
        lines += _table(
            ["node", "worst damage", "least effort", "max risk", "exposure"],
            [
                ["  " * n.depth + n.node_id, n.worst_damage.amount, n.least_effort.amount,
                 decimal4(n.max_risk), n.total_exposure.amount]
                for n in report.rollups
            ],
            right=(1, 2, 3, 4),
        )
    lines += [
        "",
        f"Threats: {len(report.rows)}",
        f"Total risk: {decimal4(report.total_risk)} ({rational(report.total_risk)})",
        f"Total exposure: {report.total_exposure.amount}",
    ]
    return _finish(lines)


def _plan_text(plan: SelectionPlan) -> bytes:
    if isinstance(plan.mode, Budget):
        mode = f"budget {plan.mode.limit.amount}"
    else:
        mode = f"max residual {decimal4(plan.mode.max_residual)} ({rational(plan.mode.max_residual)})"
    lines = [
        f"SELECTION PLAN (amounts in {_ascii(plan.currency)} minor units)",
        "",
        f"Mode: {mode}",
        f"Method: {plan.method.value}",
        f"Assumed in place: {', '.join(plan.assumed) if plan.assumed else 'none'}",
        "",
        "Security requirements (countermeasures to implement)",
    ]
    if plan.requirements:
        lines += _table(
            ["id", "cost", "title"],
            [[m.id, m.cost.amount, m.title] for m in plan.requirements],
            right=(1,),
        )
    else:
        lines.append("(none)")
    lines += ["", "Per-threat residual risk"]
    lines += _table(
        ["threat", "risk", "mitigation", "residual"],
        [[r.threat_id, decimal4(r.risk_score), decimal4(r.mitigation), decimal4(r.residual)] for r in plan.breakdown],
        right=(1, 2, 3),
    )
    lines += [
        "",
        f"Total cost: {plan.total_cost.amount}",
        f"Total risk: {decimal4(plan.total_risk)} ({rational(plan.total_risk)})",
        f"Mitigated risk: {decimal4(plan.mitigated_risk)} ({rational(plan.mitigated_risk)})",
        f"Residual risk: {decimal4(plan.residual_risk)} ({rational(plan.residual_risk)})",
    ]
    return _finish(lines)


def _findings_text(findings: Sequence[Finding]) -> bytes:
    return "".join(_ascii(f.line()) + "\n" for f in findings).encode("ascii")


_RENDERERS = {
    ("report", RenderFormat.TEXT): _report_text,
    ("report", RenderFormat.JSON): lambda r: _dump_json(report_to_json(r)),
    ("report", RenderFormat.CSV): _report_csv,
    ("plan", RenderFormat.TEXT): _plan_text,
    ("plan", RenderFormat.JSON): lambda p: _dump_json(plan_to_json(p)),
    ("plan", RenderFormat.CSV): _plan_csv,
    ("findings", RenderFormat.TEXT): _findings_text,
    ("findings", RenderFormat.JSON): lambda f: _dump_json(findings_to_json(f)),
    ("findings", RenderFormat.CSV): _findings_csv,
}
