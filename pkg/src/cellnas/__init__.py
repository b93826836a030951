"""Progressive cell-based neural architecture search with time-accuracy
Pareto selection, surrogate predictors, and post-search model selection."""

from .cellspace import (
    BlockSpec, CellSpec, EMPTY_CELL, OperatorSpec, canonical_form,
    canonicalize_block, dag_views, expand_cell, parse_cell, parse_operator,
)
from .macroarch import MacroConfig, ShapeState, count_params, effective_cell_count, propagate_shapes

__version__ = "0.1.0"

__all__ = [
    "BlockSpec", "CellSpec", "EMPTY_CELL", "OperatorSpec", "canonical_form",
    "canonicalize_block", "dag_views", "expand_cell", "parse_cell",
    "parse_operator", "MacroConfig", "ShapeState", "count_params",
    "effective_cell_count", "propagate_shapes", "__version__",
]
