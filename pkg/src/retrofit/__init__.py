"""Threat-tree risk analysis and budgeted countermeasure selection."""

from .ingest import Finding, ModelError, Severity, load_model, parse_model, serialize_model, validate_model
from .model import (
    AnalysisConfig,
    Countermeasure,
    Mitigation,
    Model,
    Money,
    MoneyOverflowError,
    Threat,
    TreeNode,
    combined_mitigation,
    risk_score,
)
from .reporting import RenderFormat, render_report
from .risk import NodeRollup, Quadrant, RiskReport, analyze, residual_risk
from .selection import (
    Assurance,
    Budget,
    Infeasible,
    Method,
    SelectionPlan,
    oracle_select,
    select_assurance,
    select_budget,
    select_greedy,
    whatif,
)

__version__ = "0.1.0"
