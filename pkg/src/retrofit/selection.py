"""Countermeasure selection under a budget or a residual-risk ceiling.

Both modes share one objective: the risk removed by a set of measures, with
overlapping mitigations stacked multiplicatively. That objective is monotone
submodular, which is what makes the greedy fallback sound and the
branch-and-bound bound admissible.

Internally every threat's remaining risk is tracked as an integer scaled by a
common constant ``K`` so the search runs on exact integers; plans are rebuilt
with rational arithmetic before they are returned.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .ingest import require_valid
from .model import Model, Money
from .risk import ResidualRow, bad_ref_error, residual_rows, unknown_countermeasures

EXACT_LIMIT = 20
ORACLE_LIMIT = 16


@dataclass(frozen=True)
class Budget:
    limit: Money

    def __post_init__(self) -> None:
        if not isinstance(self.limit, Money):
            object.__setattr__(self, "limit", Money(self.limit))


@dataclass(frozen=True)
class Assurance:
    max_residual: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "max_residual", Fraction(self.max_residual))


Mode = Union[Budget, Assurance]


class Method(str, enum.Enum):
    EXACT = "Exact"
    GREEDY = "Greedy"


@dataclass(frozen=True)
class PlannedMeasure:
    id: str
    title: str
    cost: Money


@dataclass(frozen=True)
class SelectionPlan:
    """Chosen countermeasures; ``requirements`` is the same set with titles and costs."""

    currency: str
    mode: Mode
    method: Method
    chosen: Tuple[str, ...]
    assumed: Tuple[str, ...]
    total_cost: Money
    mitigated_risk: Fraction
    residual_risk: Fraction
    total_risk: Fraction
    breakdown: Tuple[ResidualRow, ...]
    requirements: Tuple[PlannedMeasure, ...] = ()


class Infeasible(Exception):
    """No countermeasure set meets the residual ceiling."""

    def __init__(self, max_residual: Fraction, best_residual: Fraction, best_set: Sequence[str]):
        self.max_residual = max_residual
        self.best_residual = best_residual
        self.best_set = tuple(best_set)
        super().__init__(
            f"residual risk {max_residual} is unreachable; best achievable is {best_residual}"
        )


@dataclass
class _Candidate:
    id: str
    cost: int
    cover: List[Tuple[int, int]]  # (threat index, factor numerator over denom)


class _Instance:
    """Integer-scaled view of a model for the solvers.

    ``weights[t]`` is threat t's remaining risk times ``scale`` after the
    assumed measures are in place. Each applied mitigation multiplies a weight
    by ``(denom - a) / denom``; the scale reserves one factor of ``denom`` per
    measure that can touch a threat, so every update stays an exact integer.
    """

    def __init__(self, model: Model, assumed: Iterable[str] = ()):
        assumed = frozenset(assumed)
        index = {t.id: i for i, t in enumerate(model.threats)}
        factors = [m.factor for c in model.countermeasures for m in c.mitigates]
        self.denom = math.lcm(*(f.denominator for f in factors)) if factors else 1
        hits = [0] * len(model.threats)
        for c in model.countermeasures:
            for m in c.mitigates:
                hits[index[m.threat_id]] += 1
        self.depth = max(hits, default=0)
        lcm_effort = math.lcm(*(t.attacker_effort.amount for t in model.threats)) if model.threats else 1
        self.scale = lcm_effort * self.denom**self.depth
        weights = [
            t.damage.amount * (lcm_effort // t.attacker_effort.amount) * self.denom**self.depth
            for t in model.threats
        ]
        self.total = sum(weights)
        self.candidates: List[_Candidate] = []
        for c in sorted(model.countermeasures, key=lambda c: c.id):
            cover = [(index[m.threat_id], int(m.factor * self.denom)) for m in c.mitigates if m.factor > 0]
            if c.id in assumed:
                for t, a in cover:
                    weights[t] = weights[t] * (self.denom - a) // self.denom
            else:
                self.candidates.append(_Candidate(c.id, c.cost.amount, cover))
        self.base = weights

    def gain(self, cand: _Candidate, weights: Sequence[int]) -> int:
        return sum(weights[t] * a for t, a in cand.cover) // self.denom

    def apply(self, cand: _Candidate, weights: List[int]) -> None:
        for t, a in cand.cover:
            weights[t] = weights[t] * (self.denom - a) // self.denom

    def residual_of(self, ids: Iterable[str]) -> int:
        weights = list(self.base)
        chosen = set(ids)
        for c in self.candidates:
            if c.id in chosen:
                self.apply(c, weights)
        return sum(weights)


def _budget_key(value: int, cost: int, ids: Sequence[str]):
    return (-value, cost, tuple(sorted(ids)))


def _assurance_key(residual: int, cost: int, ids: Sequence[str]):
    return (cost, residual, tuple(sorted(ids)))


def _ratio_order(inst: _Instance) -> List[_Candidate]:
    """Most promising first: standalone gain per unit cost, free measures first."""

    def key(c: _Candidate):
        g = inst.gain(c, inst.base)
        return (0 if c.cost == 0 else 1, -Fraction(g, c.cost) if c.cost else -g, c.id)

    return sorted(inst.candidates, key=key)


def _bnb_budget(inst: _Instance, limit: int) -> List[str]:
    order = _ratio_order(inst)
    n = len(order)
    best = [_budget_key(inst.total - sum(inst.base), 0, ()), ()]

    def visit(i: int, weights: List[int], cost: int, chosen: Tuple[str, ...]) -> None:
        remaining = sum(weights)
        value = inst.total - remaining
        key = _budget_key(value, cost, chosen)
        if key < best[0]:
            best[0], best[1] = key, chosen
        if i == n:
            return
        room = limit - cost
        optimistic = sum(inst.gain(c, weights) for c in order[i:] if c.cost <= room)
        bound = value + min(optimistic, remaining)
        best_value, best_cost = -best[0][0], best[0][1]
        if bound < best_value or (bound == best_value and cost > best_cost):
            return
        cand = order[i]
        if cand.cost <= room:
            nxt = list(weights)
            inst.apply(cand, nxt)
            visit(i + 1, nxt, cost + cand.cost, chosen + (cand.id,))
        visit(i + 1, weights, cost, chosen)

    visit(0, list(inst.base), 0, ())
    return sorted(best[1])


def _bnb_assurance(inst: _Instance, cap: int) -> Optional[List[str]]:
    order = _ratio_order(inst)
    n = len(order)
    best: list = [None, None]

    def visit(i: int, weights: List[int], cost: int, chosen: Tuple[str, ...]) -> None:
        remaining = sum(weights)
        if remaining <= cap:
            key = _assurance_key(remaining, cost, chosen)
            if best[0] is None or key < best[0]:
                best[0], best[1] = key, chosen
        if i == n:
            return
        if best[0] is not None and cost > best[0][0]:
            return
        reachable = remaining - min(remaining, sum(inst.gain(c, weights) for c in order[i:]))
        if reachable > cap:
            return
        cand = order[i]
        if best[0] is None or cost + cand.cost <= best[0][0]:
            nxt = list(weights)
            inst.apply(cand, nxt)
            visit(i + 1, nxt, cost + cand.cost, chosen + (cand.id,))
        visit(i + 1, weights, cost, chosen)

    visit(0, list(inst.base), 0, ())
    return None if best[1] is None else sorted(best[1])


def _greedy(inst: _Instance, limit: int) -> List[str]:
    weights = list(inst.base)
    cost = 0
    chosen: List[str] = []
    pool = list(inst.candidates)  # sorted by id, so first wins ties
    while True:
        pick = None
        pick_gain = 0
        for c in pool:
            if cost + c.cost > limit:
                continue
            g = inst.gain(c, weights)
            if g <= 0:
                continue
            if pick is None or _better_ratio(g, c.cost, pick_gain, pick.cost):
                pick, pick_gain = c, g
        if pick is None:
            break
        inst.apply(pick, weights)
        cost += pick.cost
        chosen.append(pick.id)
        pool.remove(pick)

    greedy_key = _budget_key(inst.total - sum(weights), cost, chosen)
    single_key, single = _budget_key(inst.total - sum(inst.base), 0, ()), []
    for c in inst.candidates:
        if c.cost > limit:
            continue
        key = _budget_key(inst.total - sum(inst.base) + inst.gain(c, inst.base), c.cost, (c.id,))
        if key < single_key:
            single_key, single = key, [c.id]
    return sorted(chosen) if greedy_key <= single_key else single


def _better_ratio(g1: int, c1: int, g2: int, c2: int) -> bool:
    """True when g1/c1 > g2/c2, with zero cost ranking above any positive cost."""
    if c1 == 0 or c2 == 0:
        if c1 == 0 and c2 == 0:
            return g1 > g2
        return c1 == 0
    return g1 * c2 > g2 * c1


def _plan(model: Model, mode: Mode, method: Method, chosen: Sequence[str], assumed: Iterable[str]) -> SelectionPlan:
    assumed = tuple(sorted(set(assumed)))
    chosen = tuple(sorted(chosen))
    rows = residual_rows(model, frozenset(chosen) | frozenset(assumed))
    total = sum((r.risk_score for r in rows), Fraction(0))
    residual = sum((r.residual for r in rows), Fraction(0))
    return SelectionPlan(
        currency=model.currency,
        mode=mode,
        method=method,
        chosen=chosen,
        assumed=assumed,
        total_cost=Money.total(model.countermeasure(c).cost for c in chosen),
        mitigated_risk=total - residual,
        residual_risk=residual,
        total_risk=total,
        breakdown=tuple(rows),
        requirements=tuple(
            PlannedMeasure(c, model.countermeasure(c).title, model.countermeasure(c).cost) for c in chosen
        ),
    )


def _check_assumed(model: Model, assumed: Iterable[str]) -> frozenset:
    assumed = frozenset(assumed)
    missing = unknown_countermeasures(model, assumed)
    if missing:
        raise bad_ref_error(missing)
    return assumed


def _ceiling(inst: _Instance, max_residual: Fraction) -> int:
    return math.floor(max_residual * inst.scale)


def _infeasible(model: Model, inst: _Instance, max_residual: Fraction, assumed) -> Infeasible:
    everything = [c.id for c in inst.candidates]
    rows = residual_rows(model, frozenset(everything) | frozenset(assumed))
    best = sum((r.residual for r in rows), Fraction(0))
    return Infeasible(max_residual, best, sorted(everything))


def select_budget(model: Model, budget, assumed: Iterable[str] = (), greedy: bool = False) -> SelectionPlan:
    """Maximize mitigated risk with total cost within ``budget``.

    Ties go to the cheaper set, then to the lexicographically smallest sorted
    id list. Exact branch-and-bound up to 20 candidates, greedy beyond that
    (or when ``greedy`` is set).
    """
    require_valid(model)
    assumed = _check_assumed(model, assumed)
    mode = Budget(budget)
    inst = _Instance(model, assumed)
    if greedy or len(inst.candidates) > EXACT_LIMIT:
        return _plan(model, mode, Method.GREEDY, _greedy(inst, mode.limit.amount), assumed)
    return _plan(model, mode, Method.EXACT, _bnb_budget(inst, mode.limit.amount), assumed)


def select_greedy(model: Model, budget, assumed: Iterable[str] = ()) -> SelectionPlan:
    """Ratio greedy with marginal recomputation, guarded by the best single measure."""
    return select_budget(model, budget, assumed, greedy=True)


def select_assurance(model: Model, max_residual, assumed: Iterable[str] = ()) -> SelectionPlan:
    """Cheapest set whose residual risk is at most ``max_residual``.

    Among equally cheap sets the one with lower residual wins, then the
    lexicographically smallest id list. Raises :class:`Infeasible` when even
    every countermeasure together misses the ceiling.
    """
    require_valid(model)
    assumed = _check_assumed(model, assumed)
    mode = Assurance(max_residual)
    inst = _Instance(model, assumed)
    cap = _ceiling(inst, mode.max_residual)
    if inst.residual_of(c.id for c in inst.candidates) > cap:
        raise _infeasible(model, inst, mode.max_residual, assumed)
    if len(inst.candidates) > EXACT_LIMIT:
        chosen = _greedy_assurance(inst, cap)
        method = Method.GREEDY
    else:
        chosen = _bnb_assurance(inst, cap)
        method = Method.EXACT
    return _plan(model, mode, method, chosen, assumed)


def _greedy_assurance(inst: _Instance, cap: int) -> List[str]:
    """Add best-ratio measures until the ceiling is met, then drop redundant ones."""
    weights = list(inst.base)
    chosen: List[_Candidate] = []
    pool = list(inst.candidates)
    while sum(weights) > cap:
        pick, pick_gain = None, 0
        for c in pool:
            g = inst.gain(c, weights)
            if g > 0 and (pick is None or _better_ratio(g, c.cost, pick_gain, pick.cost)):
                pick, pick_gain = c, g
        inst.apply(pick, weights)
        chosen.append(pick)
        pool.remove(pick)
    for c in sorted(chosen, key=lambda c: (-c.cost, c.id)):
        rest = [x.id for x in chosen if x is not c]
        if inst.residual_of(rest) <= cap:
            chosen.remove(c)
    return sorted(c.id for c in chosen)


def whatif(model: Model, assumed: Iterable[str], mode: Mode, greedy: bool = False) -> SelectionPlan:
    """Re-plan with ``assumed`` measures already in place at no cost.

    Assumed measures leave the candidate pool; a budget applies to new
    measures only. Unknown ids raise :class:`ModelError` with E-BAD-REF.
    """
    if isinstance(mode, Budget):
        return select_budget(model, mode.limit, assumed, greedy=greedy)
    return select_assurance(model, mode.max_residual, assumed)


def oracle_select(model: Model, mode: Mode, assumed: Iterable[str] = ()) -> SelectionPlan:
    """Exhaustive reference solver over all 2^n subsets (n <= 16).

    Deliberately naive: every subset's residual is recomputed from scratch
    with the same objective and tie-breaking as the fast solvers.
    """
    require_valid(model)
    assumed = _check_assumed(model, assumed)
    pool = sorted((c for c in model.countermeasures if c.id not in assumed), key=lambda c: c.id)
    n = len(pool)
    if n > ORACLE_LIMIT:
        raise ValueError(f"oracle_select handles at most {ORACLE_LIMIT} countermeasures, got {n}")

    # Scale every threat's risk by a shared integer so subset residuals compare exactly.
    threats = list(model.threats)
    denom = 1
    for c in model.countermeasures:
        for m in c.mitigates:
            denom = denom * m.factor.denominator // math.gcd(denom, m.factor.denominator)
    per_threat = {t.id: [] for t in threats}
    for c in model.countermeasures:
        for m in c.mitigates:
            per_threat[m.threat_id].append((c.id, int(m.factor * denom)))
    depth = max((len(v) for v in per_threat.values()), default=0)
    efforts = 1
    for t in threats:
        efforts = efforts * t.attacker_effort.amount // math.gcd(efforts, t.attacker_effort.amount)
    scale = efforts * denom**depth

    def residual(active: set) -> int:
        total = 0
        for t in threats:
            num = t.damage.amount * (efforts // t.attacker_effort.amount)
            used = 0
            for cid, a in per_threat[t.id]:
                if cid in active:
                    num *= denom - a
                    used += 1
            total += num * denom ** (depth - used)
        return total

    best_key, best_ids = None, None
    all_ids = [c.id for c in pool]
    for mask in range(1 << n):
        ids = [all_ids[i] for i in range(n) if mask >> i & 1]
        cost = sum(pool[i].cost.amount for i in range(n) if mask >> i & 1)
        res = residual(set(ids) | assumed)
        if isinstance(mode, Budget):
            if cost > mode.limit.amount:
                continue
            key = (res, cost, tuple(ids))  # less residual == more mitigated
        else:
            if res > mode.max_residual * scale:
                continue
            key = (cost, res, tuple(ids))
        if best_key is None or key < best_key:
            best_key, best_ids = key, ids

    if best_ids is None:
        rows = residual_rows(model, frozenset(all_ids) | assumed)
        raise Infeasible(mode.max_residual, sum((r.residual for r in rows), Fraction(0)), all_ids)
    return _plan(model, mode, Method.EXACT, best_ids, assumed)
