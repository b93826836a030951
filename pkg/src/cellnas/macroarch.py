"""Macro-architecture semantics: motif stacking, shape propagation and an
analytic estimate of trainable parameters.

The network is M motifs of (N normal cells + 1 reduction cell) between a
small stem convolution and a GAP + dense classifier. Cells of motif m work
at F * 2**(m-1) channels; each reduction halves the spatial dims (ceiling)
so the next motif doubles the width. Lookbacks that point before the first
cell resolve to the stem.

Parameter counting conventions (per operator, Cin -> Cout, kernel product k):
    conv / tconv   k*Cin*Cout + 2*Cout        (norm scale/shift, no conv bias)
    dconv          k*Cin + Cin*Cout + 2*Cout  (depthwise + pointwise)
    1xk-kx1 conv   k*Cin*Cout + k*Cout^2 + 2*Cout (one norm after the pair)
    pool/identity  0
    pointwise      Cin*Cout + 2*Cout
    lstm           4*((Cin+Cout)*Cout + Cout)
    gru            3*((Cin+Cout)*Cout + Cout)
Operators that cannot change the channel count (identity, pooling) get a
pointwise adjustment when their input width differs from the cell width;
spatial mismatches cost a (parameter-free) max pooling. Only cells that are
backward-reachable from the network output contribute parameters: cells cut
off by unused lookbacks never materialize in the built graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .cellspace import (
    AVGPOOL, CONV, DCONV, GRU, IDENTITY, LSTM, MAXPOOL, SPATIAL_SEP_CONV, TCONV,
    CellSpec, OperatorSpec, dag_views,
)
from .errors import UnsupportedOperator


@dataclass(frozen=True)
class MacroConfig:
    """Macro shape of the architectures built around a cell."""

    motifs: int = 3
    normals_per_motif: int = 2
    filters: int = 24
    max_lookback: int = 2
    residual_cells: bool = True
    input_shape: tuple[int, ...] = (32, 32, 3)
    num_classes: int = 10

    def __post_init__(self):
        if self.motifs < 1 or self.filters < 1 or self.num_classes < 1:
            raise ValueError("motifs, filters and num_classes must be positive")
        if self.normals_per_motif < 0 or self.max_lookback < 1:
            raise ValueError("invalid normals_per_motif or max_lookback")
        if len(self.input_shape) not in (2, 3):
            raise ValueError("input_shape is (length, channels) or (H, W, channels)")

    @property
    def total_cells(self) -> int:
        return self.motifs * (self.normals_per_motif + 1)

    @property
    def spatial_rank(self) -> int:
        return len(self.input_shape) - 1

    @property
    def in_channels(self) -> int:
        return self.input_shape[-1]

    def motif_of(self, cell_index: int) -> int:
        """1-based motif of a 1-based cell index."""
        return (cell_index - 1) // (self.normals_per_motif + 1) + 1

    def is_reduction(self, cell_index: int) -> bool:
        return cell_index % (self.normals_per_motif + 1) == 0

    def cell_channels(self, cell_index: int) -> int:
        return self.filters * 2 ** (self.motif_of(cell_index) - 1)


@dataclass(frozen=True)
class ShapeState:
    """Per-cell output shapes along the stack (spatial dims + channels)."""

    stem: tuple[int, ...]
    cells: tuple[tuple[int, ...], ...] = field(default_factory=tuple)

    def output_shape(self) -> tuple[int, ...]:
        return self.cells[-1] if self.cells else self.stem


def _halve(spatial: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(math.ceil(s / 2) for s in spatial)


def propagate_shapes(cell: CellSpec, macro: MacroConfig) -> ShapeState:
    """Output shape of the stem and of every cell in the stack.

    Reduction cells halve the spatial dims (ceiling division); the channel
    width doubles with each new motif.
    """
    del cell  # shapes depend on position only; the cell decides strides, not sizes
    spatial = tuple(macro.input_shape[:-1])
    shapes = []
    for k in range(1, macro.total_cells + 1):
        if macro.is_reduction(k):
            spatial = _halve(spatial)
        shapes.append(spatial + (macro.cell_channels(k),))
    return ShapeState(
        stem=tuple(macro.input_shape[:-1]) + (macro.filters,),
        cells=tuple(shapes),
    )


def reachable_cells(cell: CellSpec, macro: MacroConfig) -> list[int]:
    """Cells (1-based) backward-reachable from the last one, given which
    lookbacks the cell consumes. Sorted ascending."""
    lookbacks = dag_views(cell).lookbacks_used
    total = macro.total_cells
    if total == 0:
        return []
    seen = {total}
    frontier = [total]
    while frontier:
        k = frontier.pop()
        for lb in lookbacks:
            prev = k + lb
            if prev >= 1 and prev not in seen:
                seen.add(prev)
                frontier.append(prev)
    return sorted(seen)


def effective_cell_count(cell: CellSpec, macro: MacroConfig) -> int:
    """Number of cells actually wired to the network output.

    A cell that never uses the -1 lookback skips its immediate predecessor,
    disconnecting part of the stack.
    """
    if cell.is_empty:
        raise ValueError("effective_cell_count needs a non-empty cell")
    return len(reachable_cells(cell, macro))


def _op_params(op: OperatorSpec, cin: int, cout: int) -> int:
    k = 1
    for v in op.kernel[:2]:
        k *= v
    if op.kind in (CONV, TCONV):
        return k * cin * cout + 2 * cout
    if op.kind == DCONV:
        return k * cin + cin * cout + 2 * cout
    if op.kind == SPATIAL_SEP_CONV:
        k1 = op.kernel[0] * op.kernel[1]
        k2 = op.kernel[2] * op.kernel[3]
        return k1 * cin * cout + k2 * cout * cout + 2 * cout
    if op.kind in (MAXPOOL, AVGPOOL, IDENTITY):
        return 0
    if op.kind == LSTM:
        return 4 * ((cin + cout) * cout + cout)
    if op.kind == GRU:
        return 3 * ((cin + cout) * cout + cout)
    raise UnsupportedOperator(op.token)


def _pointwise(cin: int, cout: int) -> int:
    return cin * cout + 2 * cout


_CHANNEL_BLIND = (MAXPOOL, AVGPOOL, IDENTITY)


def count_params(cell: CellSpec, macro: MacroConfig) -> int:
    """Estimated trainable parameters of the assembled network."""
    stem_k = 3 ** macro.spatial_rank
    params = stem_k * macro.in_channels * macro.filters + 2 * macro.filters

    shapes = propagate_shapes(cell, macro)

    def provider_shape(k: int, ref: int) -> tuple[int, ...]:
        prev = k + ref
        if prev < 1:
            return shapes.stem
        return shapes.cells[prev - 1]

    if not cell.is_empty:
        views = dag_views(cell)
        unused = len(views.unused)
        for k in reachable_cells(cell, macro):
            cout = macro.cell_channels(k)
            out_shape = shapes.cells[k - 1]
            for blk in cell.blocks:
                for ref, op in zip(blk.inputs(), blk.operators()):
                    cin = cout if ref >= 0 else provider_shape(k, ref)[-1]
                    params += _op_params(op, cin, cout)
                    if op.kind in _CHANNEL_BLIND and cin != cout:
                        params += _pointwise(cin, cout)
            if unused > 1:
                params += _pointwise(unused * cout, cout)
            if macro.residual_cells and views.lookbacks_used:
                near = max(views.lookbacks_used)
                if provider_shape(k, near) != out_shape:
                    params += _pointwise(provider_shape(k, near)[-1], cout)

    last_channels = shapes.output_shape()[-1]
    params += last_channels * macro.num_classes + macro.num_classes
    return params


def estimate_flops(cell: CellSpec, macro: MacroConfig) -> int:
    """Rough multiply-add estimate: 2 * weight-params * output positions per
    layer. Carries no accuracy guarantee; logged for inspection only."""
    shapes = propagate_shapes(cell, macro)
    flops = 0
    stem_pos = math.prod(shapes.stem[:-1])
    flops += 2 * (3 ** macro.spatial_rank) * macro.in_channels * macro.filters * stem_pos
    if not cell.is_empty:
        for k in reachable_cells(cell, macro):
            cout = macro.cell_channels(k)
            positions = math.prod(shapes.cells[k - 1][:-1])
            for blk in cell.blocks:
                for ref, op in zip(blk.inputs(), blk.operators()):
                    cin = cout if ref >= 0 else (
                        shapes.stem[-1] if k + ref < 1 else shapes.cells[k + ref - 1][-1]
                    )
                    flops += 2 * _op_params(op, cin, cout) * positions
    last = shapes.output_shape()[-1]
    flops += 2 * last * macro.num_classes
    return flops
