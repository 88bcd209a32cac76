"""Mutation operations over architectures, with dangling-node repair.

Every application changes the architecture (distance > 0), stays inside the
search space, and moves less than ``epsilon = n`` in edit distance: one
mutated attribute or edge plus at most ``n - 2`` repair edges.  Operations
that cannot change anything under the given space (e.g. AddEdge at the edge
cap, ChangeRepeats over a singleton range) are excluded from the draw rather
than resampled after the fact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from .arch import Architecture, BlockGraph
from .errors import EvolutionError, IncomparableError
from .space import SearchSpaceDef, contains

__all__ = ["OpKind", "EvolutionOp", "RepairStep", "evolve", "distance", "epsilon", "RETRY_CAP"]

RETRY_CAP = 100

_NODE_ATTRS = ("layer_type", "layer_param", "output_width", "input_mode", "activation")
_OUTPUT_ATTRS = ("input_mode", "activation")


class OpKind(str, Enum):
    CHANGE_REPEATS = "change_repeats"
    CHANGE_WIDTH = "change_width"
    ADD_EDGE = "add_edge"
    REMOVE_EDGE = "remove_edge"
    MUTATE_NODE_ATTR = "mutate_node_attr"


@dataclass(frozen=True)
class EvolutionOp:
    """Descriptor of the applied operation, for audit logs and tests.

    ``vertex``/``attribute`` are set only for node mutations; the output
    vertex may only mutate its input mode or activation.
    """

    kind: OpKind
    vertex: Optional[int] = None
    attribute: Optional[str] = None
    before: object = None
    after: object = None

    def __post_init__(self):
        if self.kind is OpKind.MUTATE_NODE_ATTR:
            if self.vertex is None or self.attribute is None:
                raise ValueError("node mutation needs vertex and attribute")
            if self.attribute not in _NODE_ATTRS:
                raise ValueError(f"unknown node attribute {self.attribute!r}")
        elif self.vertex is not None or self.attribute is not None:
            raise ValueError(f"{self.kind.value} carries no vertex/attribute")


@dataclass(frozen=True)
class RepairStep:
    added_edge: tuple[int, int]
    reason: str


def epsilon(n: int) -> int:
    """Distance tolerance: a repaired single operation always moves < n."""
    return n


def distance(a: Architecture, b: Architecture) -> int:
    """Attribute-plus-edge edit count between two same-shape architectures.

    Sum of: repeats differ, hidden width differs, edge-set symmetric
    difference, and per-vertex attribute differences.  Symmetric, zero iff
    structurally equal, and a metric (each term is one)."""
    if a.block.n != b.block.n:
        raise IncomparableError(f"cannot compare n={a.block.n} with n={b.block.n}")
    d = int(a.repeats != b.repeats) + int(a.hidden_width != b.hidden_width)
    d += len(a.block.edges ^ b.block.edges)
    for na, nb in zip(a.block.nodes, b.block.nodes):
        d += sum(getattr(na, attr) != getattr(nb, attr) for attr in _NODE_ATTRS)
    d += sum(
        getattr(a.block.output_node, attr) != getattr(b.block.output_node, attr)
        for attr in _OUTPUT_ATTRS
    )
    return d


def _mutable_slots(arch: Architecture, space: SearchSpaceDef) -> list[tuple[int, str]]:
    """(vertex, attribute) pairs where resampling-excluding-current is possible."""
    slots = []
    for vertex in arch.block.computational_vertices:
        node = arch.block.node(vertex)
        if len(space.layer_types - {node.layer_type}) > 0:
            slots.append((vertex, "layer_type"))
        if len(space.layer_params(node.layer_type) - {node.layer_param}) > 0:
            slots.append((vertex, "layer_param"))
        if len(space.output_widths - {node.output_width}) > 0:
            slots.append((vertex, "output_width"))
        if len(space.input_modes - {node.input_mode}) > 0:
            slots.append((vertex, "input_mode"))
        if len(space.activations - {node.activation}) > 0:
            slots.append((vertex, "activation"))
    out = arch.block.n - 1
    if len(space.input_modes - {arch.block.output_node.input_mode}) > 0:
        slots.append((out, "input_mode"))
    if len(space.activations - {arch.block.output_node.activation}) > 0:
        slots.append((out, "activation"))
    return slots


def _legal_kinds(arch: Architecture, space: SearchSpaceDef) -> list[OpKind]:
    kinds = []
    if space.repeats_range - {arch.repeats}:
        kinds.append(OpKind.CHANGE_REPEATS)
    if space.width_range - {arch.hidden_width}:
        kinds.append(OpKind.CHANGE_WIDTH)
    n_pairs = space.n * (space.n - 1) // 2
    if len(arch.block.edges) < space.edge_max and len(arch.block.edges) < n_pairs:
        kinds.append(OpKind.ADD_EDGE)
    if len(arch.block.edges) > space.edge_min:
        kinds.append(OpKind.REMOVE_EDGE)
    if _mutable_slots(arch, space):
        kinds.append(OpKind.MUTATE_NODE_ATTR)
    return kinds


def _pick_excluding(rng: random.Random, values, current):
    return rng.choice(sorted(values - {current}))


def _repair_dangling(
    edges: set[tuple[int, int]], n: int, rng: random.Random
) -> Optional[list[RepairStep]]:
    """Connect nodes left with only incoming or only outgoing edges.

    Repair edges can themselves strand a previously edge-free vertex, so
    passes cascade; a pass that finds no legal endpoint, or more passes than
    vertices, reports failure so the caller resamples the whole operation.
    """
    steps: list[RepairStep] = []
    for _ in range(n):
        dangling = []
        for v in range(1, n - 1):
            has_in = any(j == v for _, j in edges)
            has_out = any(i == v for i, _ in edges)
            if has_in != has_out:
                dangling.append((v, has_in))
        if not dangling:
            return steps
        v, has_in = dangling[0]
        if has_in:
            choices = [(v, t) for t in range(v + 1, n) if (v, t) not in edges]
            reason = f"v{v} had only incoming edges"
        else:
            choices = [(s, v) for s in range(0, v) if (s, v) not in edges]
            reason = f"v{v} had only outgoing edges"
        if not choices:
            return None
        edge = rng.choice(choices)
        edges.add(edge)
        steps.append(RepairStep(added_edge=edge, reason=reason))
    return None


def _apply_once(
    arch: Architecture, space: SearchSpaceDef, rng: random.Random
) -> Optional[tuple[Architecture, EvolutionOp, list[RepairStep]]]:
    kinds = _legal_kinds(arch, space)
    if not kinds:
        raise EvolutionError("no evolution operation can modify this architecture in this space")
    kind = rng.choice(kinds)
    block = arch.block

    if kind is OpKind.CHANGE_REPEATS:
        new = _pick_excluding(rng, space.repeats_range, arch.repeats)
        op = EvolutionOp(kind, before=arch.repeats, after=new)
        return replace(arch, repeats=new), op, []

    if kind is OpKind.CHANGE_WIDTH:
        new = _pick_excluding(rng, space.width_range, arch.hidden_width)
        op = EvolutionOp(kind, before=arch.hidden_width, after=new)
        return replace(arch, hidden_width=new), op, []

    if kind in (OpKind.ADD_EDGE, OpKind.REMOVE_EDGE):
        edges = set(block.edges)
        if kind is OpKind.ADD_EDGE:
            absent = [
                (i, j)
                for i in range(space.n)
                for j in range(i + 1, space.n)
                if (i, j) not in edges
            ]
            edge = rng.choice(absent)
            edges.add(edge)
            op = EvolutionOp(kind, after=edge)
        else:
            edge = rng.choice(sorted(edges))
            edges.remove(edge)
            op = EvolutionOp(kind, before=edge)
        repairs = _repair_dangling(edges, space.n, rng)
        if repairs is None:
            return None
        new_block = BlockGraph(
            n=block.n, nodes=block.nodes, output_node=block.output_node, edges=frozenset(edges)
        )
        return replace(arch, block=new_block), op, repairs

    # Node-attribute mutation; resampled values always exclude the current
    # one, and a layer-type change re-draws the layer parameter from the new
    # type's range.
    vertex, attr = rng.choice(_mutable_slots(arch, space))
    if vertex == block.n - 1:
        out = block.output_node
        current = getattr(out, attr)
        pool = space.input_modes if attr == "input_mode" else space.activations
        new_value = _pick_excluding(rng, pool, current)
        new_out = replace(out, **{attr: new_value})
        new_block = BlockGraph(n=block.n, nodes=block.nodes, output_node=new_out, edges=block.edges)
        op = EvolutionOp(kind, vertex=vertex, attribute=attr, before=current, after=new_value)
        return replace(arch, block=new_block), op, []

    node = block.node(vertex)
    current = getattr(node, attr)
    if attr == "layer_type":
        new_type = _pick_excluding(rng, space.layer_types, node.layer_type)
        new_param = rng.choice(sorted(space.layer_params(new_type)))
        new_node = replace(node, layer_type=new_type, layer_param=new_param)
        op = EvolutionOp(kind, vertex=vertex, attribute=attr, before=current, after=new_type)
    else:
        pools = {
            "layer_param": space.layer_params(node.layer_type),
            "output_width": space.output_widths,
            "input_mode": space.input_modes,
            "activation": space.activations,
        }
        new_value = _pick_excluding(rng, pools[attr], current)
        new_node = replace(node, **{attr: new_value})
        op = EvolutionOp(kind, vertex=vertex, attribute=attr, before=current, after=new_value)
    nodes = list(block.nodes)
    nodes[vertex - 1] = new_node
    new_block = BlockGraph(n=block.n, nodes=tuple(nodes), output_node=block.output_node, edges=block.edges)
    return replace(arch, block=new_block), op, []


def evolve(
    arch: Architecture, space: SearchSpaceDef, rng_seed: int
) -> tuple[Architecture, EvolutionOp, list[RepairStep]]:
    """One random mutation with repair; deterministic per (arch, seed).

    Guarantees on success: result is in `space` and 0 < distance < epsilon(n).
    An operation whose repaired result is invalid, unchanged, or too far is
    resampled; after RETRY_CAP failures the space is considered degenerate.
    """
    rng = random.Random(rng_seed)
    last_problem = "no attempt made"
    for _ in range(RETRY_CAP):
        outcome = _apply_once(arch, space, rng)
        if outcome is None:
            last_problem = "dangling-node repair could not reconnect the graph"
            continue
        candidate, op, repairs = outcome
        report_ok = contains(space, candidate)
        if not report_ok:
            last_problem = f"{op.kind.value} left the architecture outside the space"
            continue
        d = distance(candidate, arch)
        if d <= 0:
            last_problem = f"{op.kind.value} produced an unchanged architecture"
            continue
        if d >= epsilon(space.n):
            last_problem = f"{op.kind.value} moved distance {d}, tolerance is {epsilon(space.n)}"
            continue
        return candidate, op, repairs
    raise EvolutionError(f"gave up after {RETRY_CAP} attempts; last problem: {last_problem}")
