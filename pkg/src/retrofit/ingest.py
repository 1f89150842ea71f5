"""Model file parsing, completeness validation and canonical serialization.

The model file is a single UTF-8 JSON object::

    {"version": 1, "currency": "EUR",
     "config": {"damage_threshold": ..., "effort_threshold": ...},
     "threats": [...], "tree": {...}, "countermeasures": [...]}

Parsing never raises on bad input; problems come back as :class:`Finding`
records with a stable code and a JSON-pointer location.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from .model import (
    FACTOR_SCALE,
    ID_PATTERN,
    MONEY_MAX,
    AnalysisConfig,
    Countermeasure,
    Mitigation,
    Model,
    Money,
    Threat,
    TreeNode,
)

SUPPORTED_VERSION = 1
MAX_TREE_DEPTH = 64


class Severity(str, enum.Enum):
    ERROR = "ERROR"
    WARNING = "WARNING"


# Append-only: codes are part of the file/CLI contract.
FINDING_CODES = {
    "E-SYNTAX": "document is not well-formed UTF-8 JSON",
    "E-VERSION": "missing or unsupported format version",
    "E-SCHEMA": "missing field, wrong type or malformed node",
    "E-UNKNOWN-FIELD": "field not defined by the format",
    "E-DUP-KEY": "object key repeated within one JSON object",
    "E-BAD-ID": "identifier does not match [a-z0-9-]+",
    "E-DUP-ID": "identifier declared more than once",
    "E-NEG-VALUE": "negative money amount",
    "E-ZERO-EFFORT": "threat with zero attacker effort",
    "E-ZERO-THRESHOLD": "analysis threshold is zero",
    "E-OVERFLOW": "money amount or sum exceeds 2^63-1",
    "E-FACTOR-RANGE": "mitigation factor outside [0, 1]",
    "E-FACTOR-PRECISION": "mitigation factor with more than 4 decimal digits",
    "E-DUP-MITIGATION": "countermeasure lists the same threat twice",
    "E-EMPTY-NODE": "tree node with no children or no threats",
    "E-BAD-REF": "reference to an undeclared threat or countermeasure",
    "E-ORPHAN-THREAT": "declared threat missing from every tree leaf",
    "E-DUP-LEAF": "threat referenced by more than one leaf slot",
    "W-UNCOVERED": "no countermeasure mitigates the threat",
    "W-EMPTY-NOTES": "notes field present but blank",
}

_KEY_RANK = {
    k: i
    for i, k in enumerate(
        [
            "version", "currency", "config", "damage_threshold", "effort_threshold",
            "threats", "tree", "countermeasures", "id", "title", "label", "damage",
            "attacker_effort", "cost", "mitigates", "threat", "factor", "children", "notes",
        ]
    )
}
_TOP_KEYS = ("version", "currency", "config", "threats", "tree", "countermeasures")
_CONFIG_KEYS = ("damage_threshold", "effort_threshold")
_THREAT_KEYS = ("id", "title", "damage", "attacker_effort", "notes")
_CM_KEYS = ("id", "title", "cost", "mitigates", "notes")
_MITIGATION_KEYS = ("threat", "factor")
_NODE_KEYS = ("id", "label", "children", "threats")

Path = Tuple[Union[str, int], ...]


def _escape(seg: Union[str, int]) -> str:
    return str(seg).replace("~", "~0").replace("/", "~1")


def format_path(path: Path) -> str:
    if not path:
        return "/"
    return "".join("/" + _escape(s) for s in path)


def parse_path(location: str) -> Path:
    if location == "/":
        return ()
    segs: List[Union[str, int]] = []
    for raw in location.split("/")[1:]:
        s = raw.replace("~1", "/").replace("~0", "~")
        segs.append(int(s) if s.isdigit() else s)
    return tuple(segs)


@dataclass(frozen=True)
class Finding:
    severity: Severity
    code: str
    message: str
    location: str = "/"

    @property
    def is_error(self) -> bool:
        return self.severity is Severity.ERROR

    def line(self) -> str:
        return f"{self.severity.value} {self.code} {self.location} {self.message}"

    def sort_key(self):
        key = []
        for seg in parse_path(self.location):
            if isinstance(seg, int):
                key.append((0, seg, ""))
            else:
                key.append((1, _KEY_RANK.get(seg, len(_KEY_RANK)), seg))
        return (tuple(key), self.code, self.message)


def sort_findings(findings: Sequence[Finding]) -> List[Finding]:
    """Order by document position, then code."""
    return sorted(findings, key=Finding.sort_key)


def has_errors(findings: Sequence[Finding]) -> bool:
    return any(f.is_error for f in findings)


class ModelError(Exception):
    """Raised when an operation needs a model that validates without errors."""

    def __init__(self, findings: Sequence[Finding]):
        self.findings = list(findings)
        errors = [f for f in self.findings if f.is_error]
        first = errors[0].line() if errors else "model is invalid"
        super().__init__(f"{len(errors)} error finding(s); first: {first}")


class _Collector:
    def __init__(self) -> None:
        self.findings: List[Finding] = []

    def error(self, code: str, path: Path, message: str) -> None:
        self.findings.append(Finding(Severity.ERROR, code, message, format_path(path)))

    def warn(self, code: str, path: Path, message: str) -> None:
        self.findings.append(Finding(Severity.WARNING, code, message, format_path(path)))

    @property
    def failed(self) -> bool:
        return has_errors(self.findings)


class _Object(dict):
    """dict that remembers keys repeated in the source object."""

    duplicate_keys: Tuple[str, ...] = ()


def _object_hook(pairs):
    obj = _Object()
    dups = []
    for k, v in pairs:
        if k in obj:
            dups.append(k)
        obj[k] = v
    obj.duplicate_keys = tuple(dups)
    return obj


def _reject_constant(name: str):
    raise ValueError(f"non-finite number {name} is not allowed")


def _line_col(text: str, pos: int) -> Tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    col = pos - (text.rfind("\n", 0, pos) + 1) + 1
    return line, col


def _load_json(document: bytes, out: _Collector) -> Any:
    try:
        text = document.decode("utf-8")
    except UnicodeDecodeError as exc:
        prefix = document[: exc.start].decode("utf-8", errors="replace")
        line, col = _line_col(prefix, len(prefix))
        out.error("E-SYNTAX", (), f"line {line} column {col}: invalid UTF-8 byte")
        return None
    try:
        return json.loads(
            text,
            object_pairs_hook=_object_hook,
            parse_float=Decimal,
            parse_constant=_reject_constant,
        )
    except json.JSONDecodeError as exc:
        out.error("E-SYNTAX", (), f"line {exc.lineno} column {exc.colno}: {exc.msg}")
    except (ValueError, RecursionError) as exc:
        out.error("E-SYNTAX", (), f"unparseable value: {exc}")
    return None


def _check_keys(obj: dict, path: Path, allowed: Sequence[str], required: Sequence[str], out: _Collector) -> bool:
    ok = True
    for k in getattr(obj, "duplicate_keys", ()):
        out.error("E-DUP-KEY", path + (k,), f"key {k!r} appears more than once")
        ok = False
    for k in obj:
        if k not in allowed:
            out.error("E-UNKNOWN-FIELD", path + (k,), f"unknown field {k!r}")
            ok = False
    for k in required:
        if k not in obj:
            out.error("E-SCHEMA", path, f"missing required field {k!r}")
            ok = False
    return ok


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _money(v: Any, path: Path, out: _Collector) -> Optional[Money]:
    if not _is_int(v):
        out.error("E-SCHEMA", path, "money amount must be an integer in minor units")
        return None
    if v < 0:
        out.error("E-NEG-VALUE", path, f"money amount {v} is negative")
        return None
    if v > MONEY_MAX:
        out.error("E-OVERFLOW", path, f"money amount exceeds {MONEY_MAX}")
        return None
    return Money(v)


def _string(v: Any, path: Path, out: _Collector, what: str) -> Optional[str]:
    if not isinstance(v, str):
        out.error("E-SCHEMA", path, f"{what} must be a string")
        return None
    return v


def _ident(v: Any, path: Path, out: _Collector) -> Optional[str]:
    if not isinstance(v, str):
        out.error("E-SCHEMA", path, "identifier must be a string")
        return None
    if not ID_PATTERN.fullmatch(v):
        out.error("E-BAD-ID", path, f"identifier {v!r} does not match [a-z0-9-]+")
        return None
    return v


def _notes(obj: dict, path: Path, out: _Collector) -> Optional[str]:
    if "notes" not in obj:
        return None
    return _string(obj["notes"], path + ("notes",), out, "notes")


def _factor(v: Any, path: Path, out: _Collector) -> Optional[Fraction]:
    if _is_int(v):
        d = Decimal(v)
    elif isinstance(v, Decimal):
        d = v
    else:
        out.error("E-SCHEMA", path, "mitigation factor must be a number")
        return None
    # range and precision are checked on the Decimal so huge exponents never expand
    if not Decimal(0) <= d <= Decimal(1):
        out.error("E-FACTOR-RANGE", path, f"mitigation factor {v} outside [0, 1]")
        return None
    try:
        exact = d == d.quantize(Decimal(1) / FACTOR_SCALE)
    except InvalidOperation:
        exact = False
    if not exact:
        out.error("E-FACTOR-PRECISION", path, f"mitigation factor {v} has more than 4 decimal digits")
        return None
    return Fraction(d)


def _parse_config(v: Any, out: _Collector, currency: Optional[str]) -> Optional[AnalysisConfig]:
    path: Path = ("config",)
    if not isinstance(v, dict):
        out.error("E-SCHEMA", path, "config must be an object")
        return None
    if not _check_keys(v, path, _CONFIG_KEYS, _CONFIG_KEYS, out):
        return None
    values = []
    for k in _CONFIG_KEYS:
        m = _money(v[k], path + (k,), out)
        if m is not None and m.amount == 0:
            out.error("E-ZERO-THRESHOLD", path + (k,), f"{k} must be > 0")
            m = None
        values.append(m)
    if None in values or currency is None:
        return None
    return AnalysisConfig(values[0], values[1], currency)


def _parse_threat(v: Any, path: Path, out: _Collector) -> Optional[Threat]:
    if not isinstance(v, dict):
        out.error("E-SCHEMA", path, "threat must be an object")
        return None
    if not _check_keys(v, path, _THREAT_KEYS, _THREAT_KEYS[:4], out):
        return None
    tid = _ident(v["id"], path + ("id",), out)
    title = _string(v["title"], path + ("title",), out, "title")
    damage = _money(v["damage"], path + ("damage",), out)
    effort = _money(v["attacker_effort"], path + ("attacker_effort",), out)
    if effort is not None and effort.amount == 0:
        out.error("E-ZERO-EFFORT", path + ("attacker_effort",), "attacker effort must be > 0")
        effort = None
    notes = _notes(v, path, out)
    if None in (tid, title, damage, effort) or ("notes" in v and notes is None):
        return None
    return Threat(tid, title, damage, effort, notes)


def _parse_mitigation(v: Any, path: Path, out: _Collector) -> Optional[Mitigation]:
    if not isinstance(v, dict):
        out.error("E-SCHEMA", path, "mitigation entry must be an object")
        return None
    if not _check_keys(v, path, _MITIGATION_KEYS, _MITIGATION_KEYS, out):
        return None
    tid = _ident(v["threat"], path + ("threat",), out)
    factor = _factor(v["factor"], path + ("factor",), out)
    if tid is None or factor is None:
        return None
    return Mitigation(tid, factor)


def _parse_countermeasure(v: Any, path: Path, out: _Collector) -> Optional[Countermeasure]:
    if not isinstance(v, dict):
        out.error("E-SCHEMA", path, "countermeasure must be an object")
        return None
    if not _check_keys(v, path, _CM_KEYS, _CM_KEYS[:4], out):
        return None
    cid = _ident(v["id"], path + ("id",), out)
    title = _string(v["title"], path + ("title",), out, "title")
    cost = _money(v["cost"], path + ("cost",), out)
    notes = _notes(v, path, out)
    raw = v["mitigates"]
    mitigations: Optional[List[Mitigation]] = []
    if not isinstance(raw, list):
        out.error("E-SCHEMA", path + ("mitigates",), "mitigates must be an array")
        mitigations = None
    else:
        seen = set()
        for i, item in enumerate(raw):
            m = _parse_mitigation(item, path + ("mitigates", i), out)
            if m is None:
                mitigations = None
                continue
            if m.threat_id in seen:
                out.error(
                    "E-DUP-MITIGATION",
                    path + ("mitigates", i, "threat"),
                    f"threat {m.threat_id!r} already listed by this countermeasure",
                )
                mitigations = None
                continue
            seen.add(m.threat_id)
            if mitigations is not None:
                mitigations.append(m)
    if None in (cid, title, cost, mitigations) or ("notes" in v and notes is None):
        return None
    return Countermeasure(cid, title, cost, tuple(mitigations), notes)


def _parse_node(v: Any, path: Path, out: _Collector, depth: int = 0) -> Optional[TreeNode]:
    if depth > MAX_TREE_DEPTH:
        out.error("E-SCHEMA", path, f"tree deeper than {MAX_TREE_DEPTH} levels")
        return None
    if not isinstance(v, dict):
        out.error("E-SCHEMA", path, "tree node must be an object")
        return None
    if not _check_keys(v, path, _NODE_KEYS, ("id", "label"), out):
        return None
    nid = _ident(v["id"], path + ("id",), out)
    label = _string(v["label"], path + ("label",), out, "label")
    has_children, has_threats = "children" in v, "threats" in v
    if has_children == has_threats:
        out.error("E-SCHEMA", path, "node needs exactly one of 'children' or 'threats'")
        return None
    key = "children" if has_children else "threats"
    items = v[key]
    if not isinstance(items, list):
        out.error("E-SCHEMA", path + (key,), f"{key} must be an array")
        return None
    if not items:
        out.error("E-EMPTY-NODE", path + (key,), f"node {v['id']!r} has an empty {key} list")
        return None
    if has_children:
        kids = [_parse_node(c, path + ("children", i), out, depth + 1) for i, c in enumerate(items)]
        if None in kids or nid is None or label is None:
            return None
        return TreeNode(nid, label, children=tuple(kids))
    refs = [_ident(r, path + ("threats", i), out) for i, r in enumerate(items)]
    if None in refs or nid is None or label is None:
        return None
    return TreeNode(nid, label, threat_refs=tuple(refs))


def _parse_list(v: Any, key: str, parse_item, out: _Collector) -> Optional[list]:
    if not isinstance(v, list):
        out.error("E-SCHEMA", (key,), f"{key} must be an array")
        return None
    items = [parse_item(item, (key, i), out) for i, item in enumerate(v)]
    return None if None in items else items


def _parse_structure(document: bytes, out: _Collector) -> Optional[Model]:
    data = _load_json(document, out)
    if out.failed:
        return None
    if not isinstance(data, dict):
        out.error("E-SCHEMA", (), "model document must be a JSON object")
        return None
    version = data.get("version")
    if not _is_int(version) or version != SUPPORTED_VERSION:
        out.error("E-VERSION", ("version",) if "version" in data else (),
                  f"unsupported version {version!r}; expected {SUPPORTED_VERSION}")
        return None
    _check_keys(data, (), _TOP_KEYS, _TOP_KEYS, out)
    if any(k not in data for k in _TOP_KEYS):
        return None
    currency = data["currency"]
    if not isinstance(currency, str) or not currency.strip():
        out.error("E-SCHEMA", ("currency",), "currency must be a non-empty string")
        currency = None
    config = _parse_config(data["config"], out, currency)
    threats = _parse_list(data["threats"], "threats", _parse_threat, out)
    tree = _parse_node(data["tree"], ("tree",), out)
    cms = _parse_list(data["countermeasures"], "countermeasures", _parse_countermeasure, out)
    if out.failed:
        return None
    return Model(tuple(threats), tree, tuple(cms), config, version)


def parse_model(document: bytes) -> Union[Model, List[Finding]]:
    """Parse and validate a model document.

    Returns the :class:`Model` when it validates without errors, otherwise
    the sorted findings (at least one of them an error).
    """
    model, findings = load_model(document)
    if model is None:
        return findings
    return model


def load_model(document: bytes) -> Tuple[Optional[Model], List[Finding]]:
    """Like :func:`parse_model` but also hands back warnings on success."""
    out = _Collector()
    model = _parse_structure(document, out)
    if model is None:
        return None, sort_findings(out.findings)
    findings = validate_model(model)
    if has_errors(findings):
        return None, findings
    return model, findings


def _threat_occurrences(tree: TreeNode) -> Dict[str, List[Path]]:
    """Every leaf slot that references each threat id, in document order."""
    occurrences: Dict[str, List[Path]] = {}
    stack: List[Tuple[TreeNode, Path]] = [(tree, ("tree",))]
    while stack:
        node, path = stack.pop()
        if node.is_leaf:
            for i, ref in enumerate(node.threat_refs):
                occurrences.setdefault(ref, []).append(path + ("threats", i))
        else:
            for i in reversed(range(len(node.children))):
                stack.append((node.children[i], path + ("children", i)))
    return occurrences


def _node_paths(tree: TreeNode) -> List[Tuple[TreeNode, Path]]:
    result = []
    stack: List[Tuple[TreeNode, Path]] = [(tree, ("tree",))]
    while stack:
        node, path = stack.pop()
        result.append((node, path))
        for i in reversed(range(len(node.children))):
            stack.append((node.children[i], path + ("children", i)))
    return result


def _dup_ids(items, prefix: Path, kind: str, out: _Collector) -> None:
    seen = set()
    for i, item in enumerate(items):
        if item.id in seen:
            out.error("E-DUP-ID", prefix + (i, "id"), f"{kind} id {item.id!r} declared more than once")
        seen.add(item.id)


def validate_model(model: Model) -> List[Finding]:
    """Cross-reference and completeness checks over a structurally sound model.

    Every declared threat must sit in exactly one leaf slot, every reference
    must resolve and ids must be unique. Threats no countermeasure touches
    (with a non-zero factor) are reported as warnings only.
    """
    out = _Collector()
    _dup_ids(model.threats, ("threats",), "threat", out)
    _dup_ids(model.countermeasures, ("countermeasures",), "countermeasure", out)

    nodes = _node_paths(model.tree)
    seen_nodes = set()
    for node, path in nodes:
        if node.id in seen_nodes:
            out.error("E-DUP-ID", path + ("id",), f"node id {node.id!r} declared more than once")
        seen_nodes.add(node.id)

    declared = {t.id for t in model.threats}
    occurrences = _threat_occurrences(model.tree)
    for ref, paths in occurrences.items():
        if ref not in declared:
            for p in paths:
                out.error("E-BAD-REF", p, f"leaf references undeclared threat {ref!r}")
    for i, t in enumerate(model.threats):
        paths = occurrences.get(t.id, [])
        if not paths:
            out.error("E-ORPHAN-THREAT", ("threats", i), f"threat {t.id!r} does not appear in any tree leaf")
        elif len(paths) > 1:
            out.error("E-DUP-LEAF", paths[1], f"threat {t.id!r} appears in {len(paths)} leaf slots; expected exactly one")

    covered = set()
    for j, cm in enumerate(model.countermeasures):
        for k, m in enumerate(cm.mitigates):
            if m.threat_id not in declared:
                out.error("E-BAD-REF", ("countermeasures", j, "mitigates", k, "threat"),
                          f"countermeasure {cm.id!r} mitigates undeclared threat {m.threat_id!r}")
            elif m.factor > 0:
                covered.add(m.threat_id)

    if sum(t.damage.amount for t in model.threats) > MONEY_MAX:
        out.error("E-OVERFLOW", ("threats",), "total damage exceeds the money range")
    if sum(c.cost.amount for c in model.countermeasures) > MONEY_MAX:
        out.error("E-OVERFLOW", ("countermeasures",), "total countermeasure cost exceeds the money range")

    for i, t in enumerate(model.threats):
        if t.id not in covered:
            out.warn("W-UNCOVERED", ("threats", i), f"threat {t.id!r} is not mitigated by any countermeasure")
        if t.notes is not None and not t.notes.strip():
            out.warn("W-EMPTY-NOTES", ("threats", i, "notes"), "notes are blank")
    for j, cm in enumerate(model.countermeasures):
        if cm.notes is not None and not cm.notes.strip():
            out.warn("W-EMPTY-NOTES", ("countermeasures", j, "notes"), "notes are blank")
    return sort_findings(out.findings)


def require_valid(model: Model) -> None:
    findings = validate_model(model)
    if has_errors(findings):
        raise ModelError(findings)


def _factor_json(f: Fraction) -> float:
    # At most 4 decimal digits, so the shortest float repr is the exact decimal.
    return float(f)


def _node_json(node: TreeNode) -> dict:
    d: Dict[str, Any] = {"id": node.id, "label": node.label}
    if node.is_leaf:
        d["threats"] = list(node.threat_refs)
    else:
        d["children"] = [_node_json(c) for c in node.children]
    return d


def model_to_json(model: Model) -> dict:
    """Plain-data form of a model with keys in canonical order."""
    threats = []
    for t in model.threats:
        d: Dict[str, Any] = {
            "id": t.id,
            "title": t.title,
            "damage": t.damage.amount,
            "attacker_effort": t.attacker_effort.amount,
        }
        if t.notes is not None:
            d["notes"] = t.notes
        threats.append(d)
    cms = []
    for c in model.countermeasures:
        d = {
            "id": c.id,
            "title": c.title,
            "cost": c.cost.amount,
            "mitigates": [{"threat": m.threat_id, "factor": _factor_json(m.factor)} for m in c.mitigates],
        }
        if c.notes is not None:
            d["notes"] = c.notes
        cms.append(d)
    return {
        "version": model.version,
        "currency": model.config.currency,
        "config": {
            "damage_threshold": model.config.damage_threshold.amount,
            "effort_threshold": model.config.effort_threshold.amount,
        },
        "threats": threats,
        "tree": _node_json(model.tree),
        "countermeasures": cms,
    }


def serialize_model(model: Model) -> bytes:
    """Canonical UTF-8 JSON: fixed key order, 2-space indent, trailing newline."""
    text = json.dumps(model_to_json(model), indent=2, ensure_ascii=False)
    return (text + "\n").encode("utf-8")
