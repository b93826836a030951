"""Operator vocabulary, block/cell encodings, DAG views, canonical forms and expansion.

A block is a tuple (in1, op1, in2, op2): two inputs, each processed by an
operator, joined by addition. A cell is an ordered list of blocks nested as a
DAG. Input references are negative lookbacks (-1 previous cell, -2 the one
before) or indices of earlier blocks in the same cell.

Everything in this module is a pure function over immutable values.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from .errors import CellComplete, CellTooLarge, InvalidParameter, UnknownOperator

# Operator kinds. Convolutions may carry a dilation rate; pooling and the
# recurrent units never do.
IDENTITY = "identity"
CONV = "conv"
DCONV = "dconv"
SPATIAL_SEP_CONV = "spatial_sep_conv"
TCONV = "tconv"
MAXPOOL = "maxpool"
AVGPOOL = "avgpool"
LSTM = "lstm"
GRU = "gru"

KERNEL_FREE_KINDS = (IDENTITY, LSTM, GRU)
CONV_KINDS = (CONV, DCONV)  # kinds that accept a dilation rate

# Default cap for exhaustive cell canonicalization (b! relabelings).
CANONICALIZATION_BOUND = 8

_RE_SEP_CONV = re.compile(r"^(\d+)x(\d+)-(\d+)x(\d+) conv$")
_RE_CONV_2D = re.compile(r"^(\d+)x(\d+)(?::(\d+)dr)? (conv|dconv)$")
_RE_CONV_1D = re.compile(r"^(\d+)(?::(\d+)dr)? (conv|dconv)$")
_RE_TCONV_2D = re.compile(r"^(\d+)x(\d+) tconv$")
_RE_TCONV_1D = re.compile(r"^(\d+) tconv$")
_RE_POOL_2D = re.compile(r"^(\d+)x(\d+) (maxpool|avgpool)$")
_RE_POOL_1D = re.compile(r"^(\d+) (maxpool|avgpool)$")

_BLOCK_RE = re.compile(
    r"\(\s*(-?\d+)\s*,\s*'([^']*)'\s*,\s*(-?\d+)\s*,\s*'([^']*)'\s*\)"
)


@dataclass(frozen=True, order=True)
class OperatorSpec:
    """A parsed operator token.

    ``kernel`` holds one entry for series operators, two for image operators
    and four for a spatial-separable pair (both sub-kernels, concatenated).
    """

    kind: str
    kernel: tuple[int, ...] = ()
    dilation: int = 1

    def __post_init__(self):
        if self.kind not in (
            IDENTITY, CONV, DCONV, SPATIAL_SEP_CONV, TCONV, MAXPOOL, AVGPOOL, LSTM, GRU
        ):
            raise UnknownOperator(f"unknown operator kind: {self.kind!r}")
        if self.kind in KERNEL_FREE_KINDS:
            if self.kernel:
                raise InvalidParameter(f"{self.kind} takes no kernel")
        elif not self.kernel:
            raise InvalidParameter(f"{self.kind} requires a kernel")
        if any(k <= 0 for k in self.kernel):
            raise InvalidParameter(f"non-positive kernel in {self.kernel}")
        if self.dilation < 1:
            raise InvalidParameter(f"dilation must be >= 1, got {self.dilation}")
        if self.dilation > 1 and self.kind not in CONV_KINDS:
            raise InvalidParameter(f"{self.kind} does not support dilation")

    @property
    def token(self) -> str:
        """Canonical text form; parse(token) round-trips to self."""
        dr = f":{self.dilation}dr" if self.dilation > 1 else ""
        k = self.kernel
        if self.kind in (IDENTITY, LSTM, GRU):
            return self.kind
        if self.kind == SPATIAL_SEP_CONV:
            return f"{k[0]}x{k[1]}-{k[2]}x{k[3]} conv"
        name = self.kind
        if len(k) == 2:
            return f"{k[0]}x{k[1]}{dr} {name}"
        return f"{k[0]}{dr} {name}"

    def __str__(self) -> str:
        return self.token


@lru_cache(maxsize=4096)
def parse_operator(token: str) -> OperatorSpec:
    """Parse an operator token into its spec.

    Raises UnknownOperator when no pattern matches and InvalidParameter for
    zero kernels or dilation rates.
    """
    if not isinstance(token, str) or not token.strip():
        raise UnknownOperator("empty operator token")
    t = " ".join(token.split())

    if t == IDENTITY:
        return OperatorSpec(IDENTITY)
    if t.lower() in (LSTM, GRU):
        return OperatorSpec(t.lower())

    m = _RE_SEP_CONV.match(t)
    if m:
        a, b, c, d = map(int, m.groups())
        return OperatorSpec(SPATIAL_SEP_CONV, (a, b, c, d))
    m = _RE_CONV_2D.match(t)
    if m:
        a, b, dr, name = m.groups()
        return OperatorSpec(name, (int(a), int(b)), int(dr) if dr else 1)
    m = _RE_CONV_1D.match(t)
    if m:
        a, dr, name = m.groups()
        return OperatorSpec(name, (int(a),), int(dr) if dr else 1)
    m = _RE_TCONV_2D.match(t)
    if m:
        return OperatorSpec(TCONV, (int(m.group(1)), int(m.group(2))))
    m = _RE_TCONV_1D.match(t)
    if m:
        return OperatorSpec(TCONV, (int(m.group(1)),))
    m = _RE_POOL_2D.match(t)
    if m:
        return OperatorSpec(m.group(3), (int(m.group(1)), int(m.group(2))))
    m = _RE_POOL_1D.match(t)
    if m:
        return OperatorSpec(m.group(2), (int(m.group(1)),))

    raise UnknownOperator(f"unrecognized operator token: {token!r}")


@dataclass(frozen=True)
class BlockSpec:
    """One cell block: (in1, op1, in2, op2), inputs joined by add."""

    in1: int
    op1: OperatorSpec
    in2: int
    op2: OperatorSpec

    def pairs(self) -> tuple[tuple[int, str], tuple[int, str]]:
        return (self.in1, self.op1.token), (self.in2, self.op2.token)

    def inputs(self) -> tuple[int, int]:
        return self.in1, self.in2

    def operators(self) -> tuple[OperatorSpec, OperatorSpec]:
        return self.op1, self.op2

    @property
    def is_canonical(self) -> bool:
        a, b = self.pairs()
        return a <= b


def canonicalize_block(block: BlockSpec) -> BlockSpec:
    """Sort the two (input, operator) pairs; add is commutative, so a block
    and its swap denote the same computation."""
    a = (block.in1, block.op1.token, block.op1)
    b = (block.in2, block.op2.token, block.op2)
    if (a[0], a[1]) <= (b[0], b[1]):
        return block
    return BlockSpec(b[0], b[2], a[0], a[2])


@dataclass(frozen=True)
class CellSpec:
    """An ordered tuple of blocks forming a DAG; b == 0 is the empty cell."""

    blocks: tuple[BlockSpec, ...] = ()

    def __post_init__(self):
        for j, blk in enumerate(self.blocks):
            for ref in blk.inputs():
                if ref >= j:
                    raise ValueError(
                        f"block {j} references {ref}, which is not an earlier block"
                    )

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def is_empty(self) -> bool:
        return not self.blocks

    def serialize(self) -> str:
        """Cell text format: blocks joined by ';', one space after each comma."""
        parts = [
            f"({b.in1}, '{b.op1.token}', {b.in2}, '{b.op2.token}')"
            for b in self.blocks
        ]
        return "[" + ";".join(parts) + "]"

    def __str__(self) -> str:
        return self.serialize()

    def operator_tokens(self) -> list[str]:
        return [op.token for b in self.blocks for op in b.operators()]

    def max_lookback_depth(self) -> int:
        lbs = [-r for b in self.blocks for r in b.inputs() if r < 0]
        return max(lbs, default=0)


EMPTY_CELL = CellSpec()


def parse_cell(text: str) -> CellSpec:
    """Parse the cell text format, whitespace-normalized."""
    t = text.strip()
    if not (t.startswith("[") and t.endswith("]")):
        raise ValueError(f"cell text must be bracketed: {text!r}")
    inner = t[1:-1].strip()
    if not inner:
        return EMPTY_CELL
    blocks = []
    matches = list(_BLOCK_RE.finditer(inner))
    if not matches:
        raise ValueError(f"no block tuples found in {text!r}")
    compact = re.sub(r"\s+", "", inner)
    expected = ";".join(re.sub(r"\s+", "", m.group(0)) for m in matches)
    if compact != expected:
        raise ValueError(f"malformed cell text: {text!r}")
    for m in matches:
        in1, op1, in2, op2 = m.groups()
        blocks.append(
            BlockSpec(int(in1), parse_operator(op1), int(in2), parse_operator(op2))
        )
    return CellSpec(tuple(blocks))


@dataclass(frozen=True)
class DagViews:
    """Derived structure of a cell DAG."""

    used: frozenset[int]
    unused: frozenset[int]
    depth: int
    edges: int
    lookbacks_used: frozenset[int]


def dag_views(cell: CellSpec) -> DagViews:
    """Used/unused block sets, depth, inter-block edge count and lookback usage.

    A block is unused when no other block consumes its output; unused outputs
    are concatenated into the cell output.
    """
    b = len(cell)
    consumed: set[int] = set()
    lookbacks: set[int] = set()
    edges = 0
    depth_of = [0] * b
    for j, blk in enumerate(cell.blocks):
        d = 0
        for ref in blk.inputs():
            if ref < 0:
                lookbacks.add(ref)
            else:
                consumed.add(ref)
                edges += 1
                d = max(d, depth_of[ref])
        depth_of[j] = d + 1
    unused = frozenset(range(b)) - consumed
    return DagViews(
        used=frozenset(consumed),
        unused=unused,
        depth=max(depth_of, default=0),
        edges=edges,
        lookbacks_used=frozenset(lookbacks),
    )


def _topological_orders(edges_in: Sequence[set[int]]) -> Iterable[tuple[int, ...]]:
    """All topological orders of the block DAG (edges_in[j] = blocks j consumes)."""
    n = len(edges_in)
    order: list[int] = []
    placed: set[int] = set()

    def rec():
        if len(order) == n:
            yield tuple(order)
            return
        for v in range(n):
            if v in placed or not edges_in[v] <= placed:
                continue
            placed.add(v)
            order.append(v)
            yield from rec()
            order.pop()
            placed.remove(v)

    yield from rec()


def canonical_form(
    cell: CellSpec,
    *,
    reorder: bool = True,
    canonicalization_bound: int = CANONICALIZATION_BOUND,
) -> str:
    """Canonical serialization: equal iff the cells are isomorphic.

    Isomorphism covers within-block pair swaps and, when ``reorder`` is true,
    any relabeling of blocks that preserves the edge structure and the
    operator/lookback labels. Implemented by enumerating every topological
    order of the block DAG, rewriting indices, canonicalizing each block and
    taking the lexicographically smallest serialization. ``reorder=False``
    restricts equivalence to pair swaps only.
    """
    b = len(cell)
    if b > canonicalization_bound:
        raise CellTooLarge(f"{b} blocks exceeds canonicalization bound "
                           f"{canonicalization_bound}")
    if b == 0:
        return EMPTY_CELL.serialize()
    if not reorder:
        return CellSpec(
            tuple(canonicalize_block(blk) for blk in cell.blocks)
        ).serialize()

    edges_in = [set(r for r in blk.inputs() if r >= 0) for blk in cell.blocks]
    best: str | None = None
    for order in _topological_orders(edges_in):
        new_index = {old: new for new, old in enumerate(order)}
        relabeled = []
        for new_j, old_j in enumerate(order):
            blk = cell.blocks[old_j]
            remap = lambda r: r if r < 0 else new_index[r]
            relabeled.append(
                canonicalize_block(
                    BlockSpec(remap(blk.in1), blk.op1, remap(blk.in2), blk.op2)
                )
            )
        form = CellSpec(tuple(relabeled)).serialize()
        if best is None or form < best:
            best = form
    assert best is not None
    return best


def expand_cell(
    cell: CellSpec,
    operators: Iterable[OperatorSpec],
    max_lookback: int,
    *,
    max_blocks: int | None = None,
) -> list[CellSpec]:
    """Every cell obtained by appending one canonical block.

    Inputs for the new block range over lookbacks {-max_lookback..-1} and the
    existing block indices {0..b-1}. With p = (b + max_lookback) * |operators|
    available (input, operator) pairs, exactly p*(p+1)/2 children come back
    (unordered pairs with repetition; the swapped twin of each block is
    isomorphic and never generated). Order is deterministic.
    """
    b = len(cell)
    if max_blocks is not None and b >= max_blocks:
        raise CellComplete(f"cell already has {b} blocks")
    ops = sorted(set(operators), key=lambda o: o.token)
    inputs = list(range(-max_lookback, 0)) + list(range(b))
    pairs = [(i, op) for i in inputs for op in ops]
    children = []
    for x, y in itertools.combinations_with_replacement(pairs, 2):
        block = BlockSpec(x[0], x[1], y[0], y[1])
        children.append(CellSpec(cell.blocks + (block,)))
    return children
