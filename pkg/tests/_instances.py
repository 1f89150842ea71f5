"""Random model generators shared by the property and acceptance tests."""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Sequence

from retrofit.model import AnalysisConfig, Countermeasure, Mitigation, Model, Money, Threat, TreeNode

QUARTERS = (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1))


def build_model(risks: Sequence[tuple], measures: Sequence[tuple], thresholds=(10, 10)) -> Model:
    """``risks``: (damage, effort) per threat t1..tn; ``measures``: (cost, {threat_no: factor})."""
    threats = [Threat(f"t{i}", f"Threat {i}", Money(d), Money(e)) for i, (d, e) in enumerate(risks, 1)]
    leaves = tuple(TreeNode(f"leaf-{t.id}", t.title, threat_refs=(t.id,)) for t in threats)
    tree = TreeNode("root", "All threats", children=leaves) if leaves else TreeNode("root", "All", threat_refs=("t1",))
    cms = [
        Countermeasure(
            f"m{j}", f"Measure {j}", Money(cost),
            tuple(Mitigation(f"t{k}", Fraction(f)) for k, f in sorted(cover.items())),
        )
        for j, (cost, cover) in enumerate(measures, 1)
    ]
    return Model(tuple(threats), tree, tuple(cms), AnalysisConfig(Money(thresholds[0]), Money(thresholds[1]), "EUR"))


def random_model(rng: random.Random, max_measures: int = 12, max_threats: int = 25) -> Model:
    n_threats = rng.randint(1, max_threats)
    n_measures = rng.randint(0, max_measures)
    risks = [(rng.randint(0, 1000), rng.randint(1, 60)) for _ in range(n_threats)]
    measures = []
    for _ in range(n_measures):
        k = rng.randint(1, min(4, n_threats))
        cover = {t: rng.choice(QUARTERS) for t in rng.sample(range(1, n_threats + 1), k)}
        measures.append((rng.randint(1, 100), cover))
    # group threats into a two-level tree so multi-threat leaves get exercised
    ids = [f"t{i}" for i in range(1, n_threats + 1)]
    rng.shuffle(ids)
    groups = []
    while ids:
        size = rng.randint(1, 3)
        groups.append(tuple(ids[:size]))
        ids = ids[size:]
    base = build_model(risks, measures)
    leaves = tuple(TreeNode(f"g{i}", f"Group {i}", threat_refs=g) for i, g in enumerate(groups))
    return Model(base.threats, TreeNode("root", "All threats", children=leaves), base.countermeasures, base.config)


def random_budget(rng: random.Random, model: Model) -> int:
    total = sum(c.cost.amount for c in model.countermeasures)
    return rng.randint(0, max(total, 1))
