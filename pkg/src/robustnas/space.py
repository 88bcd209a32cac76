"""Search-space definition: membership, the simplest member, random sampling,
and exhaustive enumeration of restricted sub-spaces for oracle tests."""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, replace
from typing import Iterator, Mapping

from . import arch as am
from .arch import (
    Activation,
    Architecture,
    BlockGraph,
    InputMode,
    LayerType,
    NodeSpec,
    OutputNodeSpec,
    validate,
)
from .errors import SpaceError

__all__ = [
    "SearchSpaceDef",
    "DEFAULT_SPACE",
    "contains",
    "simplest",
    "sample",
    "enumerate_restricted",
    "space_to_record",
    "space_from_record",
]

SAMPLE_RETRY_CAP = 1000
ENUMERATION_CAP = 10**6

# Stable orders for deterministic iteration and tie-breaking.
_LAYER_ORDER = (LayerType.CONV, LayerType.SEP_CONV, LayerType.ATTN, LayerType.GLU)
_MODE_ORDER = (InputMode.ADD, InputMode.MUL, InputMode.CONCAT)
_ACT_ORDER = (Activation.NONE, Activation.RELU, Activation.SWISH)


@dataclass(frozen=True)
class SearchSpaceDef:
    """The feasible set: one value range per variable architecture attribute.

    Defaults span the full space; tests narrow them via :meth:`restrict`.
    Edge-count bounds are fixed by the node count: at least 3 edges, at most
    ``n(n-1)/2 - 3``.  For ``n=4`` the two bounds coincide (every graph has
    exactly 3 edges), which is the smallest legal node count.
    """

    n: int = 6
    repeats_range: frozenset[int] = frozenset({3, 4, 5, 6, 7, 8})
    width_range: frozenset[int] = frozenset({128, 256, 512})
    conv_params: frozenset[int] = am.CONV_PARAMS
    sepconv_params: frozenset[int] = am.SEPCONV_PARAMS
    attn_params: frozenset[int] = am.ATTN_PARAMS
    output_widths: frozenset[int] = frozenset({128, 256, 512})
    layer_types: frozenset[LayerType] = frozenset(_LAYER_ORDER)
    input_modes: frozenset[InputMode] = frozenset(_MODE_ORDER)
    activations: frozenset[Activation] = frozenset(_ACT_ORDER)

    def __post_init__(self):
        for name in (
            "repeats_range",
            "width_range",
            "output_widths",
            "layer_types",
            "input_modes",
            "activations",
        ):
            value = frozenset(getattr(self, name))
            object.__setattr__(self, name, value)
            if not value:
                raise SpaceError(f"{name} is empty (space cardinality 0)")
        for name in ("conv_params", "sepconv_params", "attn_params"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        for lt in self.layer_types:
            if not self.layer_params(lt):
                raise SpaceError(f"no layer parameters for enabled type {lt.value} (space cardinality 0)")
        if self.edge_min > self.edge_max:
            raise SpaceError(
                f"n={self.n} gives edge bounds [{self.edge_min}, {self.edge_max}]; need n >= 4"
            )

    @property
    def edge_min(self) -> int:
        return 3

    @property
    def edge_max(self) -> int:
        return self.n * (self.n - 1) // 2 - 3

    def layer_params(self, layer_type: LayerType) -> frozenset[int]:
        if layer_type is LayerType.CONV:
            return self.conv_params
        if layer_type is LayerType.SEP_CONV:
            return self.sepconv_params
        if layer_type is LayerType.ATTN:
            return self.attn_params
        return frozenset({am.GLU_PARAM})

    def restrict(self, **overrides) -> "SearchSpaceDef":
        """New space with some attribute ranges replaced (used for oracle and
        acceptance tests on enumerable sub-spaces)."""
        return replace(self, **overrides)


DEFAULT_SPACE = SearchSpaceDef()


def contains(space: SearchSpaceDef, architecture: Architecture) -> bool:
    return validate(architecture, space).ok


_INT_FIELDS = ("repeats_range", "width_range", "conv_params", "sepconv_params", "attn_params", "output_widths")
_ENUM_FIELDS = {"layer_types": LayerType, "input_modes": InputMode, "activations": Activation}


def space_to_record(space: SearchSpaceDef) -> dict:
    """Plain-data form with sorted ranges; canonical for digesting."""
    record: dict = {"n": space.n}
    for name in _INT_FIELDS:
        record[name] = sorted(getattr(space, name))
    for name, enum_cls in _ENUM_FIELDS.items():
        record[name] = sorted(v.value for v in getattr(space, name))
    return record


def space_from_record(record: Mapping, where: str = "space") -> SearchSpaceDef:
    """Build a space from plain data (the config-file path into restrict)."""
    if not isinstance(record, Mapping):
        raise SpaceError(f"{where}: expected an object, got {type(record).__name__}")
    known = {"n"} | set(_INT_FIELDS) | set(_ENUM_FIELDS)
    unknown = set(record) - known
    if unknown:
        raise SpaceError(f"{where}: unknown key(s): {', '.join(sorted(unknown))}")
    kwargs: dict = {}
    if "n" in record:
        n = record["n"]
        if isinstance(n, bool) or not isinstance(n, int):
            raise SpaceError(f"{where}.n: expected an integer, got {n!r}")
        kwargs["n"] = n
    for name in _INT_FIELDS:
        if name in record:
            values = record[name]
            if not isinstance(values, (list, tuple)) or any(
                isinstance(v, bool) or not isinstance(v, int) for v in values
            ):
                raise SpaceError(f"{where}.{name}: expected a list of integers, got {values!r}")
            kwargs[name] = frozenset(values)
    for name, enum_cls in _ENUM_FIELDS.items():
        if name in record:
            values = record[name]
            if not isinstance(values, (list, tuple)):
                raise SpaceError(f"{where}.{name}: expected a list, got {values!r}")
            try:
                kwargs[name] = frozenset(enum_cls(v) for v in values)
            except ValueError as exc:
                allowed = ", ".join(m.value for m in enum_cls)
                raise SpaceError(f"{where}.{name}: {exc}; allowed: {allowed}") from None
    return SearchSpaceDef(**kwargs)


def _cheapest_node(space: SearchSpaceDef) -> NodeSpec:
    # Minimum-parameter node at the narrowest widths, ties broken by the
    # stable layer/mode/activation orders.  With Conv{1} available this is a
    # plain linear layer.
    w = min(space.output_widths)
    w_in = min(space.width_range)
    best = None
    for lt in _LAYER_ORDER:
        if lt not in space.layer_types:
            continue
        for p in sorted(space.layer_params(lt)):
            node = NodeSpec(
                layer_type=lt,
                layer_param=p,
                output_width=w,
                input_mode=_first(_MODE_ORDER, space.input_modes),
                activation=_first(_ACT_ORDER, space.activations),
            )
            cost = am._node_weight_count(node, w_in)
            if best is None or cost < best[0]:
                best = (cost, node)
    return best[1]


def _first(order, allowed):
    for item in order:
        if item in allowed:
            return item
    raise SpaceError("empty attribute range")


def simplest(space: SearchSpaceDef) -> Architecture:
    """Deterministic minimum-parameter member: fewest repeats, narrowest
    widths, and a 3-edge chain through the lowest-id vertices."""
    node = _cheapest_node(space)
    chain = frozenset({(0, 1), (1, 2), (2, space.n - 1)})
    block = BlockGraph(
        n=space.n,
        nodes=tuple(node for _ in range(space.n - 2)),
        output_node=OutputNodeSpec(
            input_mode=_first(_MODE_ORDER, space.input_modes),
            activation=_first(_ACT_ORDER, space.activations),
        ),
        edges=chain,
    )
    return Architecture(
        repeats=min(space.repeats_range),
        hidden_width=min(space.width_range),
        block=block,
    )


def _random_node(space: SearchSpaceDef, rng: random.Random) -> NodeSpec:
    lt = rng.choice([t for t in _LAYER_ORDER if t in space.layer_types])
    return NodeSpec(
        layer_type=lt,
        layer_param=rng.choice(sorted(space.layer_params(lt))),
        output_width=rng.choice(sorted(space.output_widths)),
        input_mode=rng.choice([m for m in _MODE_ORDER if m in space.input_modes]),
        activation=rng.choice([a for a in _ACT_ORDER if a in space.activations]),
    )


def _all_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def _has_path(n: int, edges) -> bool:
    seen = {0}
    frontier = [0]
    adj: dict[int, list[int]] = {}
    for i, j in edges:
        adj.setdefault(i, []).append(j)
    while frontier:
        v = frontier.pop()
        for u in adj.get(v, ()):
            if u not in seen:
                seen.add(u)
                frontier.append(u)
    return (n - 1) in seen


def sample(space: SearchSpaceDef, rng_seed: int) -> Architecture:
    """Attribute-uniform random member, deterministic per seed.

    Each attribute is drawn uniformly from its range; the edge set is drawn
    by rejection until the graph invariants hold, which skews edge-set
    frequencies slightly (documented: enumeration-based oracles never rely
    on exact uniformity).  A misconfigured space surfaces as a retry-cap
    failure rather than a hang.
    """
    rng = random.Random(rng_seed)
    pairs = _all_pairs(space.n)
    for _ in range(SAMPLE_RETRY_CAP):
        k = rng.randint(space.edge_min, space.edge_max)
        edges = frozenset(rng.sample(pairs, k))
        if not _has_path(space.n, edges):
            continue
        block = BlockGraph(
            n=space.n,
            nodes=tuple(_random_node(space, rng) for _ in range(space.n - 2)),
            output_node=OutputNodeSpec(
                input_mode=rng.choice([m for m in _MODE_ORDER if m in space.input_modes]),
                activation=rng.choice([a for a in _ACT_ORDER if a in space.activations]),
            ),
            edges=edges,
        )
        return Architecture(
            repeats=rng.choice(sorted(space.repeats_range)),
            hidden_width=rng.choice(sorted(space.width_range)),
            block=block,
        )
    raise SpaceError(
        f"no connected edge set found in {SAMPLE_RETRY_CAP} attempts; space n={space.n} looks degenerate"
    )


def _cardinality_bound(space: SearchSpaceDef) -> int:
    node_variants = sum(len(space.layer_params(t)) for t in space.layer_types)
    node_variants *= len(space.output_widths) * len(space.input_modes) * len(space.activations)
    total_pairs = space.n * (space.n - 1) // 2
    edge_sets = sum(math.comb(total_pairs, k) for k in range(space.edge_min, space.edge_max + 1))
    return (
        len(space.repeats_range)
        * len(space.width_range)
        * node_variants ** (space.n - 2)
        * len(space.input_modes)
        * len(space.activations)
        * edge_sets
    )


def _node_variants(space: SearchSpaceDef) -> list[NodeSpec]:
    out = []
    for lt in _LAYER_ORDER:
        if lt not in space.layer_types:
            continue
        for p in sorted(space.layer_params(lt)):
            for w in sorted(space.output_widths):
                for mode in (m for m in _MODE_ORDER if m in space.input_modes):
                    for act in (a for a in _ACT_ORDER if a in space.activations):
                        out.append(NodeSpec(lt, p, w, mode, act))
    return out


def enumerate_restricted(space: SearchSpaceDef, cap: int = ENUMERATION_CAP) -> Iterator[Architecture]:
    """Yield every valid member of `space` exactly once, in a fixed order.

    Refuses spaces whose cardinality bound exceeds `cap`; restrict the
    attribute ranges (see :meth:`SearchSpaceDef.restrict`) until the bound
    fits.  Intended for brute-force oracles, not production searching.
    """
    bound = _cardinality_bound(space)
    if bound > cap:
        raise SpaceError(f"restricted space bound {bound} exceeds enumeration cap {cap}")

    pairs = _all_pairs(space.n)
    edge_sets = [
        frozenset(combo)
        for k in range(space.edge_min, space.edge_max + 1)
        for combo in itertools.combinations(pairs, k)
        if _has_path(space.n, combo)
    ]
    variants = _node_variants(space)
    out_variants = [
        OutputNodeSpec(mode, act)
        for mode in (m for m in _MODE_ORDER if m in space.input_modes)
        for act in (a for a in _ACT_ORDER if a in space.activations)
    ]

    for repeats in sorted(space.repeats_range):
        for width in sorted(space.width_range):
            for nodes in itertools.product(variants, repeat=space.n - 2):
                for out_node in out_variants:
                    for edges in edge_sets:
                        yield Architecture(
                            repeats=repeats,
                            hidden_width=width,
                            block=BlockGraph(
                                n=space.n,
                                nodes=nodes,
                                output_node=out_node,
                                edges=edges,
                            ),
                        )
