"""Dynamic reindex and the time-feature representation of a cell.

The reindex maps every operator to a [0, 1] score proportional to its
measured training-time impact, anchored at the empty-cell time (0) and the
slowest single-operator cell (1). Time features are nine structural numbers
extracted from the cell DAG plus the reindex values.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..cellspace import CellSpec, dag_views
from ..errors import DegenerateTimes, MissingOperator
from ..macroarch import MacroConfig, effective_cell_count

TIME_FEATURE_NAMES = (
    "blocks",
    "effective_cells",
    "op_score",
    "concat_count",
    "multiple_lookbacks",
    "dag_depth",
    "block_dependencies",
    "heaviest_path_share",
    "lookback_op_share",
)


@dataclass(frozen=True)
class DynamicReindexMap:
    """Per-operator [0, 1] time score with its anchors."""

    values: dict[str, float]
    bias_time: float
    max_time: float

    def __getitem__(self, token: str) -> float:
        try:
            return self.values[token]
        except KeyError:
            raise MissingOperator(f"no reindex entry for {token!r}") from None

    def __contains__(self, token: str) -> bool:
        return token in self.values


def compute_dynamic_reindex(t0: float, mono_block_times: dict[str, float]) -> DynamicReindexMap:
    """Score each operator by (t_o - t0) / (max(T) - t0), clamped to [0, 1].

    t0 is the empty-cell training time; mono_block_times holds the measured
    time of the symmetric single-block cell of each operator. Raises
    DegenerateTimes when no operator is slower than the empty cell.
    """
    if not mono_block_times:
        raise DegenerateTimes("no mono-block times provided")
    t_max = max(mono_block_times.values())
    if t_max <= t0:
        raise DegenerateTimes(
            f"max mono-block time {t_max} is not above the bias {t0}")
    span = t_max - t0
    values = {
        op: min(1.0, max(0.0, (t - t0) / span))
        for op, t in mono_block_times.items()
    }
    return DynamicReindexMap(values=values, bias_time=t0, max_time=t_max)


@dataclass(frozen=True)
class TimeFeatures:
    blocks: int
    effective_cells: int
    op_score: float
    concat_count: int
    multiple_lookbacks: bool
    dag_depth: int
    block_dependencies: int
    heaviest_path_share: float
    lookback_op_share: float

    def to_vector(self) -> list[float]:
        return [
            float(self.blocks),
            float(self.effective_cells),
            self.op_score,
            float(self.concat_count),
            1.0 if self.multiple_lookbacks else 0.0,
            float(self.dag_depth),
            float(self.block_dependencies),
            self.heaviest_path_share,
            self.lookback_op_share,
        ]


def extract_time_features(
    cell: CellSpec, macro: MacroConfig, reindex: DynamicReindexMap
) -> TimeFeatures:
    """The nine-feature representation used by the time model.

    heaviest_path_share is the largest source-to-output path weight (summing
    reindex values of the operators on the path) over the total op score;
    lookback_op_share is the score fraction of operators reading a lookback.
    Both are 0 for a zero op score. The empty cell maps to all zeros except
    effective_cells, which is 1 (only the output stage remains wired).
    """
    if cell.is_empty:
        return TimeFeatures(0, 1, 0.0, 0, False, 0, 0, 0.0, 0.0)

    views = dag_views(cell)
    scores = [reindex[op.token] for blk in cell.blocks for op in blk.operators()]
    op_score = float(sum(scores))

    lookback_score = 0.0
    heaviest_to: list[float] = []  # per block: heaviest path ending at its add-join
    for blk in cell.blocks:
        best = 0.0
        for ref, op in zip(blk.inputs(), blk.operators()):
            w = reindex[op.token]
            if ref < 0:
                lookback_score += w
                path = w
            else:
                path = w + heaviest_to[ref]
            best = max(best, path)
        heaviest_to.append(best)

    if op_score > 0:
        heaviest = max(heaviest_to[j] for j in views.unused)
        heaviest_share = heaviest / op_score
        lookback_share = lookback_score / op_score
    else:
        heaviest_share = 0.0
        lookback_share = 0.0

    return TimeFeatures(
        blocks=len(cell),
        effective_cells=effective_cell_count(cell, macro),
        op_score=op_score,
        concat_count=len(views.unused),
        multiple_lookbacks=len(views.lookbacks_used) > 1,
        dag_depth=views.depth,
        block_dependencies=views.edges,
        heaviest_path_share=heaviest_share,
        lookback_op_share=lookback_share,
    )
