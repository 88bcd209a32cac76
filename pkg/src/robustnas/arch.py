"""Student-architecture data model.

A student network is an embedding layer, a stack of repeated blocks, and a
max-pool classifier.  Each block is a DAG on vertices ``v0 .. v(n-1)`` where
``v0`` is the block input, ``v(n-1)`` the block output, and the vertices in
between are computational layers.  Edges always point from lower to higher
vertex id, so every representable graph is acyclic by construction.

This module owns validation, the canonical text record (the interchange
format for persistence, the CLI, and the worker protocol), content hashing,
active-subgraph computation, and the analytic parameter counter used as the
efficiency metric.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .errors import RecordParseError

__all__ = [
    "LayerType",
    "InputMode",
    "Activation",
    "NodeSpec",
    "OutputNodeSpec",
    "BlockGraph",
    "Architecture",
    "ModelShapeConfig",
    "ValidationReport",
    "GLU_PARAM",
    "REPEATS_RANGE",
    "WIDTH_RANGE",
    "CONV_PARAMS",
    "SEPCONV_PARAMS",
    "ATTN_PARAMS",
    "layer_param_range",
    "validate",
    "active_nodes",
    "count_params",
    "count_params_breakdown",
    "serialize",
    "parse",
    "to_record",
    "from_record",
    "shape_to_record",
    "canonical_hash",
]


class LayerType(str, Enum):
    CONV = "conv"
    SEP_CONV = "sep_conv"
    ATTN = "attn"
    GLU = "glu"


class InputMode(str, Enum):
    ADD = "add"
    MUL = "mul"
    CONCAT = "concat"


class Activation(str, Enum):
    NONE = "none"
    RELU = "relu"
    SWISH = "swish"


# GLU layers carry no kernel/head parameter; this sentinel keeps the field total.
GLU_PARAM = 0

# Attribute ranges of the full search space.  `parse` enforces these; restricted
# spaces (see robustnas.space) may only narrow them.
REPEATS_RANGE = frozenset({3, 4, 5, 6, 7, 8})
WIDTH_RANGE = frozenset({128, 256, 512})
CONV_PARAMS = frozenset({1, 3, 5})
SEPCONV_PARAMS = frozenset({3, 5, 7, 9, 11})
ATTN_PARAMS = frozenset({4, 8, 16})

_PARAM_RANGES = {
    LayerType.CONV: CONV_PARAMS,
    LayerType.SEP_CONV: SEPCONV_PARAMS,
    LayerType.ATTN: ATTN_PARAMS,
    LayerType.GLU: frozenset({GLU_PARAM}),
}


def layer_param_range(layer_type: LayerType) -> frozenset[int]:
    """Admissible layer-parameter values for a layer type (kernel width,
    head count, or the GLU sentinel)."""
    return _PARAM_RANGES[layer_type]


@dataclass(frozen=True)
class NodeSpec:
    """One computational DAG vertex."""

    layer_type: LayerType
    layer_param: int
    output_width: int
    input_mode: InputMode
    activation: Activation

    def __post_init__(self):
        if not isinstance(self.layer_param, int) or self.layer_param < 0:
            raise ValueError(f"layer_param must be a non-negative int, got {self.layer_param!r}")
        if not isinstance(self.output_width, int) or self.output_width <= 0:
            raise ValueError(f"output_width must be a positive int, got {self.output_width!r}")


@dataclass(frozen=True)
class OutputNodeSpec:
    """The block output vertex; only merge mode and activation vary."""

    input_mode: InputMode
    activation: Activation


@dataclass(frozen=True)
class BlockGraph:
    """DAG of one block: ``n`` vertices, node specs for v1..v(n-2), an edge set.

    Construction enforces only what makes the value representable (typed
    fields, ``i < j`` edges, one spec per computational vertex).  Range and
    connectivity rules are checked by :func:`validate`, which must be able to
    report on arbitrary candidates without crashing.
    """

    n: int
    nodes: tuple[NodeSpec, ...]
    output_node: OutputNodeSpec
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"block needs at least input, one layer, output; got n={self.n}")
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if len(self.nodes) != self.n - 2:
            raise ValueError(f"expected {self.n - 2} node specs for n={self.n}, got {len(self.nodes)}")
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        for i, j in edges:
            if not (0 <= i < j <= self.n - 1):
                raise ValueError(f"edge ({i},{j}) violates 0 <= i < j <= {self.n - 1}")
        object.__setattr__(self, "edges", edges)

    @property
    def computational_vertices(self) -> range:
        return range(1, self.n - 1)

    def node(self, vertex: int) -> NodeSpec:
        return self.nodes[vertex - 1]

    def predecessors(self, vertex: int) -> list[int]:
        return sorted(i for i, j in self.edges if j == vertex)

    def successors(self, vertex: int) -> list[int]:
        return sorted(j for i, j in self.edges if i == vertex)

    def max_edges(self) -> int:
        return self.n * (self.n - 1) // 2 - 3


@dataclass(frozen=True)
class Architecture:
    """The full search variable: block repetition count, inter-block hidden
    width, and the block DAG."""

    repeats: int
    hidden_width: int
    block: BlockGraph


@dataclass(frozen=True)
class ModelShapeConfig:
    """Fixed model surroundings: embedding table sizes and classifier width.

    Defaults are BERT-compatible (WordPiece vocab of 30,522) with two
    sentence segments and binary classification.
    """

    vocab_size: int = 30522
    max_positions: int = 128
    num_segments: int = 2
    num_classes: int = 2

    def __post_init__(self):
        for name in ("vocab_size", "max_positions", "num_segments", "num_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def active_nodes(block: BlockGraph) -> frozenset[int]:
    """Computational vertices lying on at least one v0 -> v(n-1) path.

    In a DAG, a vertex is on such a path exactly when it is reachable from
    the input and the output is reachable from it.
    """
    fwd = _reachable_from(block, 0, forward=True)
    bwd = _reachable_from(block, block.n - 1, forward=False)
    return frozenset(v for v in block.computational_vertices if v in fwd and v in bwd)


def _reachable_from(block: BlockGraph, start: int, forward: bool) -> set[int]:
    seen = {start}
    frontier = [start]
    while frontier:
        v = frontier.pop()
        nexts = block.successors(v) if forward else block.predecessors(v)
        for u in nexts:
            if u not in seen:
                seen.add(u)
                frontier.append(u)
    return seen


def validate(arch: Architecture, space) -> ValidationReport:
    """Check every architecture invariant plus membership in `space`.

    Never raises on bad candidates: each failed rule becomes one entry in
    ``violations``.  Dangling vertices (not on any input->output path) are
    legal but inert, so they are reported as warnings only.

    `space` is a :class:`robustnas.space.SearchSpaceDef`; it is passed
    untyped here to keep this module free of import cycles.
    """
    v: list[str] = []
    w: list[str] = []
    block = arch.block

    if block.n != space.n:
        v.append(f"block has n={block.n}, space requires n={space.n}")

    if arch.repeats not in space.repeats_range:
        v.append(f"repeats {arch.repeats} outside {_fmt_range(space.repeats_range)}")
    if arch.hidden_width not in space.width_range:
        v.append(f"hidden_width {arch.hidden_width} outside {_fmt_range(space.width_range)}")

    for vertex in block.computational_vertices:
        if vertex - 1 >= len(block.nodes):
            break
        node = block.node(vertex)
        at = f"node v{vertex}"
        if node.layer_type not in space.layer_types:
            v.append(f"{at}: layer_type {node.layer_type.value} not allowed")
            continue
        allowed = space.layer_params(node.layer_type)
        if node.layer_param not in allowed:
            v.append(
                f"{at}: layer_param {node.layer_param} outside {_fmt_range(allowed)}"
                f" for {node.layer_type.value}"
            )
        if node.output_width not in space.output_widths:
            v.append(f"{at}: output_width {node.output_width} outside {_fmt_range(space.output_widths)}")
        if node.input_mode not in space.input_modes:
            v.append(f"{at}: input_mode {node.input_mode.value} not allowed")
        if node.activation not in space.activations:
            v.append(f"{at}: activation {node.activation.value} not allowed")
        # All in-range (head count, width) pairs divide evenly; checked defensively.
        if (
            node.layer_type is LayerType.ATTN
            and node.layer_param > 0
            and node.output_width % node.layer_param != 0
        ):
            v.append(f"{at}: output_width {node.output_width} not divisible by {node.layer_param} heads")

    if block.output_node.input_mode not in space.input_modes:
        v.append(f"output node: input_mode {block.output_node.input_mode.value} not allowed")
    if block.output_node.activation not in space.activations:
        v.append(f"output node: activation {block.output_node.activation.value} not allowed")

    if len(block.edges) < space.edge_min:
        v.append(f"edge count {len(block.edges)} below {space.edge_min}")
    if len(block.edges) > space.edge_max:
        v.append(f"edge count {len(block.edges)} above {space.edge_max}")

    if block.n - 1 not in _reachable_from(block, 0, forward=True):
        v.append(f"no directed path from v0 to v{block.n - 1}")
    else:
        inactive = set(block.computational_vertices) - set(active_nodes(block))
        if inactive:
            names = ", ".join(f"v{x}" for x in sorted(inactive))
            w.append(f"inactive nodes (not on any v0->v{block.n - 1} path): {names}")

    return ValidationReport(ok=not v, violations=v, warnings=w)


def _fmt_range(values: Iterable) -> str:
    return "{" + ", ".join(str(x) for x in sorted(values)) + "}"


# ---------------------------------------------------------------------------
# Parameter counting
# ---------------------------------------------------------------------------

def _merge_width(mode: InputMode, widths: list[int]) -> int:
    # Add/Mul pad narrower inputs (with 0 / 1 respectively), so the merged
    # width is the max; Concat stacks along the hidden dimension.
    if mode is InputMode.CONCAT:
        return sum(widths)
    return max(widths)


def _node_weight_count(node: NodeSpec, w_in: int) -> int:
    w_out = node.output_width
    k = node.layer_param
    if node.layer_type is LayerType.CONV:
        return k * w_in * w_out + w_out
    if node.layer_type is LayerType.SEP_CONV:
        # depthwise k-tap filter (no bias) + pointwise projection with bias
        return k * w_in + w_in * w_out + w_out
    if node.layer_type is LayerType.ATTN:
        # q/k/v input projections + output projection, all with bias
        return 3 * (w_in * w_out + w_out) + (w_out * w_out + w_out)
    # GLU: two parallel linear maps (signal and gate), both with bias
    return 2 * (w_in * w_out + w_out)


def count_params_breakdown(arch: Architecture, shape: ModelShapeConfig) -> dict[str, int]:
    """Analytic weight count split into embedding / blocks / classifier.

    Only active vertices contribute: a dangling node is never built.  Block
    repetitions do not share weights, so the block term scales with
    ``repeats``.  The output vertex adds a linear width adapter when its
    merged input width differs from the inter-block hidden width.

    Python integers do not overflow, so no wrap-around can occur; absurd
    shape configs simply produce big exact integers.
    """
    block = arch.block
    h = arch.hidden_width
    active = active_nodes(block)

    width: dict[int, int] = {0: h}
    per_block = 0
    for vertex in sorted(active):
        node = block.node(vertex)
        preds = [p for p in block.predecessors(vertex) if p == 0 or p in active]
        w_in = _merge_width(node.input_mode, [width[p] for p in preds])
        per_block += _node_weight_count(node, w_in)
        width[vertex] = node.output_width

    out = block.n - 1
    out_preds = [p for p in block.predecessors(out) if p == 0 or p in active]
    if out_preds:
        w_merged = _merge_width(block.output_node.input_mode, [width[p] for p in out_preds])
        if w_merged != h:
            per_block += w_merged * h + h

    embedding = (shape.vocab_size + shape.max_positions + shape.num_segments) * h
    classifier = h * shape.num_classes + shape.num_classes
    blocks = arch.repeats * per_block
    return {
        "embedding": embedding,
        "blocks": blocks,
        "classifier": classifier,
        "total": embedding + blocks + classifier,
    }


def count_params(arch: Architecture, shape: ModelShapeConfig) -> int:
    """Total trainable-weight count of the built network (symbolically, the
    size of the distilled weight vector)."""
    return count_params_breakdown(arch, shape)["total"]


# ---------------------------------------------------------------------------
# Canonical record
# ---------------------------------------------------------------------------

def shape_to_record(shape: ModelShapeConfig) -> dict:
    return {
        "vocab_size": shape.vocab_size,
        "max_positions": shape.max_positions,
        "num_segments": shape.num_segments,
        "num_classes": shape.num_classes,
    }


def to_record(arch: Architecture) -> dict:
    """Plain-data form of an architecture with fixed key order and edges
    sorted ascending, so the JSON dump is canonical."""
    block = arch.block
    return {
        "repeats": arch.repeats,
        "hidden_width": arch.hidden_width,
        "block": {
            "n": block.n,
            "nodes": [
                {
                    "layer_type": node.layer_type.value,
                    "layer_param": node.layer_param,
                    "output_width": node.output_width,
                    "input_mode": node.input_mode.value,
                    "activation": node.activation.value,
                }
                for node in block.nodes
            ],
            "output_node": {
                "input_mode": block.output_node.input_mode.value,
                "activation": block.output_node.activation.value,
            },
            "edges": [[i, j] for i, j in sorted(block.edges)],
        },
    }


def serialize(arch: Architecture) -> str:
    """Canonical text record: byte-equal iff structurally equal."""
    return json.dumps(to_record(arch), separators=(",", ":"))


def _expect(mapping, key: str, kind, where: str):
    if not isinstance(mapping, dict):
        raise RecordParseError(f"expected an object, got {type(mapping).__name__}", where)
    if key not in mapping:
        raise RecordParseError(f"missing key '{key}'", where)
    value = mapping[key]
    if kind is int:
        # bool is an int subclass; never a valid count/width
        if isinstance(value, bool) or not isinstance(value, int):
            raise RecordParseError(f"'{key}' must be an integer, got {value!r}", where)
    elif not isinstance(value, kind):
        raise RecordParseError(f"'{key}' must be {kind.__name__}, got {value!r}", where)
    return value


def _expect_choice(mapping, key: str, values: frozenset[int], where: str) -> int:
    value = _expect(mapping, key, int, where)
    if value not in values:
        raise RecordParseError(f"'{key}' value {value} outside {_fmt_range(values)}", where)
    return value


def _expect_enum(mapping, key: str, enum_cls, where: str):
    value = _expect(mapping, key, str, where)
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise RecordParseError(f"'{key}' value {value!r} not one of: {allowed}", where) from None


def _reject_unknown(mapping: Mapping, allowed: set[str], where: str):
    unknown = set(mapping) - allowed
    if unknown:
        raise RecordParseError(f"unknown key(s): {', '.join(sorted(unknown))}", where)


def from_record(record: Mapping, where: str = "record") -> Architecture:
    """Build an Architecture from plain data, rejecting malformed input.

    Structural rules and the full attribute ranges are enforced here with the
    violated range named; narrower space membership is `validate`'s job.
    """
    _reject_unknown(record, {"repeats", "hidden_width", "block"}, where)
    repeats = _expect_choice(record, "repeats", REPEATS_RANGE, where)
    hidden_width = _expect_choice(record, "hidden_width", WIDTH_RANGE, where)
    blk = _expect(record, "block", dict, where)
    bwhere = f"{where}.block"
    _reject_unknown(blk, {"n", "nodes", "output_node", "edges"}, bwhere)
    n = _expect(blk, "n", int, bwhere)
    if n < 3:
        raise RecordParseError(f"'n' must be >= 3, got {n}", bwhere)

    raw_nodes = _expect(blk, "nodes", list, bwhere)
    if len(raw_nodes) != n - 2:
        raise RecordParseError(f"expected {n - 2} node specs for n={n}, got {len(raw_nodes)}", bwhere)
    nodes = []
    for idx, raw in enumerate(raw_nodes):
        nwhere = f"{bwhere}.nodes[{idx}]"
        if not isinstance(raw, dict):
            raise RecordParseError("node spec must be an object", nwhere)
        _reject_unknown(raw, {"layer_type", "layer_param", "output_width", "input_mode", "activation"}, nwhere)
        layer_type = _expect_enum(raw, "layer_type", LayerType, nwhere)
        layer_param = _expect_choice(raw, "layer_param", layer_param_range(layer_type), nwhere)
        nodes.append(
            NodeSpec(
                layer_type=layer_type,
                layer_param=layer_param,
                output_width=_expect_choice(raw, "output_width", WIDTH_RANGE, nwhere),
                input_mode=_expect_enum(raw, "input_mode", InputMode, nwhere),
                activation=_expect_enum(raw, "activation", Activation, nwhere),
            )
        )

    raw_out = _expect(blk, "output_node", dict, bwhere)
    owhere = f"{bwhere}.output_node"
    _reject_unknown(raw_out, {"input_mode", "activation"}, owhere)
    output_node = OutputNodeSpec(
        input_mode=_expect_enum(raw_out, "input_mode", InputMode, owhere),
        activation=_expect_enum(raw_out, "activation", Activation, owhere),
    )

    raw_edges = _expect(blk, "edges", list, bwhere)
    edges = set()
    for idx, pair in enumerate(raw_edges):
        ewhere = f"{bwhere}.edges[{idx}]"
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or any(isinstance(x, bool) or not isinstance(x, int) for x in pair)
        ):
            raise RecordParseError(f"edge must be a pair of integers, got {pair!r}", ewhere)
        i, j = pair
        if not (0 <= i < j <= n - 1):
            raise RecordParseError(f"edge ({i},{j}) violates 0 <= i < j <= {n - 1}", ewhere)
        if (i, j) in edges:
            raise RecordParseError(f"duplicate edge ({i},{j})", ewhere)
        edges.add((i, j))

    return Architecture(
        repeats=repeats,
        hidden_width=hidden_width,
        block=BlockGraph(n=n, nodes=tuple(nodes), output_node=output_node, edges=frozenset(edges)),
    )


def parse(text: str) -> Architecture:
    """Inverse of :func:`serialize`; errors carry position and cause."""
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordParseError(f"invalid JSON: {exc.msg}", f"offset {exc.pos}") from exc
    return from_record(record)


def canonical_hash(arch: Architecture) -> str:
    """SHA-256 hex digest of the canonical record; stable across runs and
    platforms, used as the fitness-cache key."""
    return hashlib.sha256(serialize(arch).encode("utf-8")).hexdigest()
