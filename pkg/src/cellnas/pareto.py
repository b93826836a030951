"""Time-accuracy Pareto fronts with isomorphism pruning, plus exploration
sets and the exploration front.

The front is a two-objective skyline: candidates sorted by accuracy
descending (time ascending on ties) are kept when their time is strictly
below everything kept so far and they are not isomorphic to a kept cell.
Exploration sets collect operators and inputs used rarely in the front;
they seed a secondary front of structurally unusual candidates.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .cellspace import CellSpec, OperatorSpec, canonical_form


@dataclass(frozen=True)
class ScoredCandidate:
    cell: CellSpec
    predicted_accuracy: float
    predicted_time: float

    def __post_init__(self):
        if not 0 <= self.predicted_accuracy <= 1:
            raise ValueError(f"accuracy out of [0, 1]: {self.predicted_accuracy}")
        if not self.predicted_time > 0:
            raise ValueError(f"time must be > 0: {self.predicted_time}")


@dataclass(frozen=True)
class ExplorationSets:
    ops: frozenset[str]      # operator tokens underused in the front
    inputs: frozenset[int]   # input refs underused in the front

    def __bool__(self) -> bool:
        return bool(self.ops or self.inputs)


def dominates(a: ScoredCandidate, b: ScoredCandidate) -> bool:
    """a dominates b: no worse on both objectives, strictly better on one."""
    if a.predicted_accuracy < b.predicted_accuracy or a.predicted_time > b.predicted_time:
        return False
    return (a.predicted_accuracy > b.predicted_accuracy
            or a.predicted_time < b.predicted_time)


def _skyline(candidates: Sequence[ScoredCandidate], cap: int,
             taken_forms: set[str]) -> list[ScoredCandidate]:
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-candidates[i].predicted_accuracy,
                       candidates[i].predicted_time, i),
    )
    kept: list[ScoredCandidate] = []
    min_time = float("inf")
    for i in order:
        c = candidates[i]
        if c.predicted_time >= min_time:
            continue
        form = canonical_form(c.cell)
        if form in taken_forms:
            continue
        taken_forms.add(form)
        kept.append(c)
        min_time = c.predicted_time
        if len(kept) >= cap:
            break
    return kept


def pareto_front(candidates: Sequence[ScoredCandidate], beam: int) -> list[ScoredCandidate]:
    """The mutually non-dominated set, deduplicated up to isomorphism and
    truncated to the beam size. Deterministic for a fixed input order."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    return _skyline(candidates, beam, set())


def build_exploration_sets(
    front: Sequence[ScoredCandidate],
    operators: Iterable[OperatorSpec],
    inputs: Iterable[int],
) -> ExplorationSets:
    """Operators/inputs appearing in less than a 1/(5*alphabet) share of the
    front's slots. ``inputs`` is the legal input alphabet at the current
    block depth."""
    op_alphabet = sorted({o.token for o in operators})
    input_alphabet = sorted(set(inputs))
    op_counts: Counter[str] = Counter()
    input_counts: Counter[int] = Counter()
    slots = 0
    for c in front:
        for blk in c.cell.blocks:
            slots += 2
            op_counts[blk.op1.token] += 1
            op_counts[blk.op2.token] += 1
            input_counts[blk.in1] += 1
            input_counts[blk.in2] += 1
    if slots == 0:
        return ExplorationSets(frozenset(), frozenset())

    op_threshold = 1.0 / (5 * len(op_alphabet))
    in_threshold = 1.0 / (5 * len(input_alphabet))
    rare_ops = frozenset(
        t for t in op_alphabet if op_counts[t] / slots < op_threshold)
    rare_inputs = frozenset(
        i for i in input_alphabet if input_counts[i] / slots < in_threshold)
    return ExplorationSets(ops=rare_ops, inputs=rare_inputs)


def exploration_hits(cell: CellSpec, sets: ExplorationSets) -> int:
    hits = 0
    for blk in cell.blocks:
        hits += sum(1 for op in blk.operators() if op.token in sets.ops)
        hits += sum(1 for ref in blk.inputs() if ref in sets.inputs)
    return hits


def exploration_front(
    candidates: Sequence[ScoredCandidate],
    standard_front: Sequence[ScoredCandidate],
    sets: ExplorationSets,
    beam: int,
    min_hits: int | None = None,
) -> list[ScoredCandidate]:
    """Skyline over candidates containing enough exploration elements,
    disjoint (up to isomorphism) from the standard front.

    min_hits defaults to 2 when both exploration sets are populated, else 1.
    """
    if not sets:
        return []
    if min_hits is None:
        min_hits = 2 if (sets.ops and sets.inputs) else 1
    eligible = [c for c in candidates if exploration_hits(c.cell, sets) >= min_hits]
    taken = {canonical_form(c.cell) for c in standard_front}
    return _skyline(eligible, max(0, beam), taken) if beam > 0 else []
