"""Architecture-record validation, independent of the engine.

The worker receives architectures as plain JSON records over the wire and
must not trust them: a malformed record becomes an error result, never a
crash.  This module re-implements the record schema checks from the
interchange format itself (key sets, enum values, attribute ranges, edge
rules, input-to-output connectivity) so the worker stands alone.
"""

__all__ = [
    "RecordError",
    "LAYER_TYPES",
    "INPUT_MODES",
    "ACTIVATIONS",
    "LAYER_PARAMS",
    "WIDTHS",
    "REPEATS",
    "parse_architecture",
    "active_vertices",
]

LAYER_TYPES = ("conv", "sep_conv", "attn", "glu")
INPUT_MODES = ("add", "mul", "concat")
ACTIVATIONS = ("none", "relu", "swish")

# Admissible layer_param values per layer type: conv/sep-conv kernel widths,
# attention head counts, and the fixed sentinel for GLU (which has none).
LAYER_PARAMS = {
    "conv": (1, 3, 5),
    "sep_conv": (3, 5, 7, 9, 11),
    "attn": (4, 8, 16),
    "glu": (0,),
}
WIDTHS = (128, 256, 512)
REPEATS = (3, 4, 5, 6, 7, 8)


class RecordError(ValueError):
    """A received architecture record violates the interchange schema."""


def _need(mapping, key, where):
    if not isinstance(mapping, dict):
        raise RecordError(f"{where}: expected an object, got {type(mapping).__name__}")
    if key not in mapping:
        raise RecordError(f"{where}: missing key '{key}'")
    return mapping[key]


def _need_int(mapping, key, where):
    value = _need(mapping, key, where)
    if isinstance(value, bool) or not isinstance(value, int):
        raise RecordError(f"{where}: '{key}' must be an integer, got {value!r}")
    return value


def _need_choice(mapping, key, allowed, where):
    value = _need_int(mapping, key, where)
    if value not in allowed:
        raise RecordError(f"{where}: '{key}' value {value} not in {sorted(allowed)}")
    return value


def _need_name(mapping, key, allowed, where):
    value = _need(mapping, key, where)
    if value not in allowed:
        raise RecordError(f"{where}: '{key}' value {value!r} not one of: {', '.join(allowed)}")
    return value


def _only_keys(mapping, allowed, where):
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise RecordError(f"{where}: unknown key(s): {', '.join(sorted(unknown))}")


def active_vertices(n: int, edges: list[tuple[int, int]]) -> set[int]:
    """Computational vertices on at least one input->output path."""
    succ: dict[int, list[int]] = {}
    pred: dict[int, list[int]] = {}
    for i, j in edges:
        succ.setdefault(i, []).append(j)
        pred.setdefault(j, []).append(i)

    def flood(start: int, arcs: dict[int, list[int]]) -> set[int]:
        seen = {start}
        frontier = [start]
        while frontier:
            v = frontier.pop()
            for w in arcs.get(v, ()):
                if w not in seen:
                    seen.add(w)
                    frontier.append(w)
        return seen

    fwd = flood(0, succ)
    bwd = flood(n - 1, pred)
    return {v for v in range(1, n - 1) if v in fwd and v in bwd}


def parse_architecture(record) -> dict:
    """Validate a raw architecture record; returns it in normalized form.

    Raises :class:`RecordError` naming the first violated rule.  The record
    must be buildable, so a missing input-to-output path is an error here
    even though it is merely a dead architecture to the search engine.
    """
    _only_keys(record if isinstance(record, dict) else {}, ("repeats", "hidden_width", "block"), "record")
    repeats = _need_choice(record, "repeats", REPEATS, "record")
    hidden_width = _need_choice(record, "hidden_width", WIDTHS, "record")

    block = _need(record, "block", "record")
    _only_keys(block if isinstance(block, dict) else {}, ("n", "nodes", "output_node", "edges"), "block")
    n = _need_int(block, "n", "block")
    if n < 3:
        raise RecordError(f"block: 'n' must be >= 3, got {n}")

    raw_nodes = _need(block, "nodes", "block")
    if not isinstance(raw_nodes, list) or len(raw_nodes) != n - 2:
        got = len(raw_nodes) if isinstance(raw_nodes, list) else type(raw_nodes).__name__
        raise RecordError(f"block: expected {n - 2} node specs for n={n}, got {got}")
    nodes = []
    for idx, raw in enumerate(raw_nodes):
        where = f"node v{idx + 1}"
        if not isinstance(raw, dict):
            raise RecordError(f"{where}: node spec must be an object")
        _only_keys(raw, ("layer_type", "layer_param", "output_width", "input_mode", "activation"), where)
        layer_type = _need_name(raw, "layer_type", LAYER_TYPES, where)
        nodes.append(
            {
                "layer_type": layer_type,
                "layer_param": _need_choice(raw, "layer_param", LAYER_PARAMS[layer_type], where),
                "output_width": _need_choice(raw, "output_width", WIDTHS, where),
                "input_mode": _need_name(raw, "input_mode", INPUT_MODES, where),
                "activation": _need_name(raw, "activation", ACTIVATIONS, where),
            }
        )
        if layer_type == "attn" and nodes[-1]["output_width"] % nodes[-1]["layer_param"] != 0:
            raise RecordError(
                f"{where}: output_width {nodes[-1]['output_width']} not divisible by"
                f" {nodes[-1]['layer_param']} heads"
            )

    raw_out = _need(block, "output_node", "block")
    _only_keys(raw_out if isinstance(raw_out, dict) else {}, ("input_mode", "activation"), "output node")
    output_node = {
        "input_mode": _need_name(raw_out, "input_mode", INPUT_MODES, "output node"),
        "activation": _need_name(raw_out, "activation", ACTIVATIONS, "output node"),
    }

    raw_edges = _need(block, "edges", "block")
    if not isinstance(raw_edges, list):
        raise RecordError("block: 'edges' must be a list of pairs")
    edges: list[tuple[int, int]] = []
    seen = set()
    for idx, pair in enumerate(raw_edges):
        where = f"edge [{idx}]"
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or any(isinstance(x, bool) or not isinstance(x, int) for x in pair)
        ):
            raise RecordError(f"{where}: must be a pair of integers, got {pair!r}")
        i, j = pair
        if not (0 <= i < j <= n - 1):
            raise RecordError(f"{where}: ({i},{j}) violates 0 <= i < j <= {n - 1}")
        if (i, j) in seen:
            raise RecordError(f"{where}: duplicate edge ({i},{j})")
        seen.add((i, j))
        edges.append((i, j))

    # Reachability, not emptiness, is what makes the network computable.
    reach = active_vertices(n, edges)
    out_feeds = [i for i, j in edges if j == n - 1 and (i == 0 or i in reach)]
    if not out_feeds:
        raise RecordError(f"block: no directed path from v0 to v{n - 1}")

    return {
        "repeats": repeats,
        "hidden_width": hidden_width,
        "block": {
            "n": n,
            "nodes": nodes,
            "output_node": output_node,
            "edges": [list(e) for e in sorted(edges)],
        },
    }
