#!/usr/bin/env python3
"""Derive the frozen parameter-count fixture table from a real torch build.

Builds every fixture architecture as an actual ``nn.Module`` tree, following
the construction rules (conv with bias, depthwise-no-bias + pointwise-bias
separable conv, q/k/v/out projections, twin GLU projections, per-repeat block
instances, width adapter on the output vertex) and counts weights with
``p.numel()``.  The resulting numbers are written to
``tests/fixtures/param_count_cases.json`` and the analytic counter in
``robustnas.arch`` is tested against them, so this script is deliberately an
independent implementation: it reads plain record dicts and computes its own
reachability instead of calling into the package.

Run from the repository root:

    python3 tools/derive_param_fixtures.py

Each case also gets a forward-pass smoke check so the fixture table can only
contain constructible networks.
"""

from __future__ import annotations

import json
import math
import pathlib
import sys

import torch
import torch.nn as nn
import torch.nn.functional as F

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from robustnas.arch import from_record, to_record, validate  # noqa: E402
from robustnas.space import DEFAULT_SPACE, sample, simplest  # noqa: E402

OUT_PATH = pathlib.Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "param_count_cases.json"


# ---------------------------------------------------------------------------
# independent record interpretation


def _active_vertices(n: int, edges: list) -> set[int]:
    """Vertices on some input->output path, computed by two flood fills."""
    fwd = {0}
    frontier = [0]
    succ: dict[int, list[int]] = {}
    pred: dict[int, list[int]] = {}
    for i, j in edges:
        succ.setdefault(i, []).append(j)
        pred.setdefault(j, []).append(i)
    while frontier:
        v = frontier.pop()
        for w in succ.get(v, ()):
            if w not in fwd:
                fwd.add(w)
                frontier.append(w)
    bwd = {n - 1}
    frontier = [n - 1]
    while frontier:
        v = frontier.pop()
        for w in pred.get(v, ()):
            if w not in bwd:
                bwd.add(w)
                frontier.append(w)
    return {v for v in range(1, n - 1) if v in fwd and v in bwd}


def _act(name: str):
    if name == "none":
        return lambda x: x
    if name == "relu":
        return F.relu
    if name == "swish":
        return F.silu
    raise ValueError(f"unknown activation {name!r}")


def _merge(mode: str, tensors: list[torch.Tensor]) -> torch.Tensor:
    if mode == "concat":
        return torch.cat(tensors, dim=-1)
    w = max(t.shape[-1] for t in tensors)
    if mode == "add":
        out = tensors[0].new_zeros(*tensors[0].shape[:-1], w)
        for t in tensors:
            out[..., : t.shape[-1]] += t
        return out
    if mode == "mul":
        out = tensors[0].new_ones(*tensors[0].shape[:-1], w)
        for t in tensors:
            padded = tensors[0].new_ones(*t.shape[:-1], w)
            padded[..., : t.shape[-1]] = t
            out = out * padded
        return out
    raise ValueError(f"unknown input mode {mode!r}")


class _Node(nn.Module):
    def __init__(self, spec: dict, w_in: int):
        super().__init__()
        kind = spec["layer_type"]
        k = spec["layer_param"]
        w_out = spec["output_width"]
        self.kind = kind
        self.activation = _act(spec["activation"])
        if kind == "conv":
            self.op = nn.Conv1d(w_in, w_out, kernel_size=k, padding="same", bias=True)
        elif kind == "sep_conv":
            self.depthwise = nn.Conv1d(w_in, w_in, kernel_size=k, padding="same", groups=w_in, bias=False)
            self.pointwise = nn.Conv1d(w_in, w_out, kernel_size=1, bias=True)
        elif kind == "attn":
            self.heads = k
            self.q = nn.Linear(w_in, w_out)
            self.k = nn.Linear(w_in, w_out)
            self.v = nn.Linear(w_in, w_out)
            self.out = nn.Linear(w_out, w_out)
        elif kind == "glu":
            self.value = nn.Linear(w_in, w_out)
            self.gate = nn.Linear(w_in, w_out)
        else:
            raise ValueError(f"unknown layer type {kind!r}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == "conv":
            y = self.op(x.transpose(1, 2)).transpose(1, 2)
        elif self.kind == "sep_conv":
            y = self.pointwise(self.depthwise(x.transpose(1, 2))).transpose(1, 2)
        elif self.kind == "attn":
            b, length, _ = x.shape
            q, k, v = self.q(x), self.k(x), self.v(x)
            d = q.shape[-1] // self.heads
            q = q.view(b, length, self.heads, d).transpose(1, 2)
            k = k.view(b, length, self.heads, d).transpose(1, 2)
            v = v.view(b, length, self.heads, d).transpose(1, 2)
            attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d), dim=-1)
            y = (attn @ v).transpose(1, 2).reshape(b, length, -1)
            y = self.out(y)
        else:
            y = self.value(x) * torch.sigmoid(self.gate(x))
        return self.activation(y)


class _Block(nn.Module):
    """One repetition of the searched cell.  Input and output width are both
    the inter-block hidden width; an adapter is inserted when the output
    vertex's merged width differs."""

    def __init__(self, record: dict, hidden_width: int):
        super().__init__()
        block = record["block"]
        n = block["n"]
        edges = [tuple(e) for e in block["edges"]]
        active = _active_vertices(n, edges)
        self.n = n
        self.active = sorted(active)
        self.preds = {
            v: sorted(i for i, j in edges if j == v and (i == 0 or i in active))
            for v in list(active) + [n - 1]
        }
        self.modes = {v: block["nodes"][v - 1]["input_mode"] for v in active}
        self.ops = nn.ModuleDict()
        width = {0: hidden_width}
        for v in self.active:
            spec = block["nodes"][v - 1]
            widths = [width[p] for p in self.preds[v]]
            w_in = sum(widths) if spec["input_mode"] == "concat" else max(widths)
            self.ops[str(v)] = _Node(spec, w_in)
            width[v] = spec["output_width"]
        out_spec = block["output_node"]
        self.out_mode = out_spec["input_mode"]
        self.out_activation = _act(out_spec["activation"])
        out_widths = [width[p] for p in self.preds[n - 1]]
        w_merged = sum(out_widths) if self.out_mode == "concat" else max(out_widths)
        self.adapter = nn.Linear(w_merged, hidden_width) if w_merged != hidden_width else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        value = {0: x}
        for v in self.active:
            merged = _merge(self.modes[v], [value[p] for p in self.preds[v]])
            value[v] = self.ops[str(v)](merged)
        y = _merge(self.out_mode, [value[p] for p in self.preds[self.n - 1]])
        if self.adapter is not None:
            y = self.adapter(y)
        return self.out_activation(y)


class StudentNet(nn.Module):
    """Reference network: embeddings -> repeated cells -> pooled classifier."""

    def __init__(self, record: dict, shape: dict):
        super().__init__()
        h = record["hidden_width"]
        self.embedding = nn.ModuleDict(
            {
                "word": nn.Embedding(shape["vocab_size"], h),
                "position": nn.Embedding(shape["max_positions"], h),
                "segment": nn.Embedding(shape["num_segments"], h),
            }
        )
        self.blocks = nn.ModuleList(_Block(record, h) for _ in range(record["repeats"]))
        self.classifier = nn.Linear(h, shape["num_classes"])

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(tokens.shape[1], device=tokens.device)
        segments = torch.zeros_like(tokens)
        x = (
            self.embedding["word"](tokens)
            + self.embedding["position"](positions)[None, :, :]
            + self.embedding["segment"](segments)
        )
        for block in self.blocks:
            x = block(x)
        return self.classifier(x.amax(dim=1))


def torch_breakdown(record: dict, shape: dict) -> dict[str, int]:
    model = StudentNet(record, shape)
    groups = {
        "embedding": sum(p.numel() for p in model.embedding.parameters()),
        "blocks": sum(p.numel() for p in model.blocks.parameters()),
        "classifier": sum(p.numel() for p in model.classifier.parameters()),
    }
    total = sum(p.numel() for p in model.parameters())
    assert total == sum(groups.values()), "stray parameters outside the three groups"
    groups["total"] = total

    # constructibility smoke check: two short sequences through the net
    length = min(16, shape["max_positions"])
    tokens = torch.randint(0, shape["vocab_size"], (2, length))
    with torch.no_grad():
        logits = model(tokens)
    assert logits.shape == (2, shape["num_classes"]), logits.shape
    return groups


# ---------------------------------------------------------------------------
# fixture corpus

BERT_SHAPE = {"vocab_size": 30522, "max_positions": 128, "num_segments": 2, "num_classes": 2}
SMALL_SHAPE = {"vocab_size": 1000, "max_positions": 64, "num_segments": 2, "num_classes": 5}
TINY_SHAPE = {"vocab_size": 101, "max_positions": 16, "num_segments": 1, "num_classes": 3}


def _node(layer_type: str, layer_param: int, output_width: int, input_mode: str = "add", activation: str = "relu") -> dict:
    return {
        "layer_type": layer_type,
        "layer_param": layer_param,
        "output_width": output_width,
        "input_mode": input_mode,
        "activation": activation,
    }


def _handcrafted() -> list[tuple[str, dict, dict]]:
    """Records exercising corners the random samples may miss."""
    cases = []

    # concat merge at the output vertex forces a 384->128 adapter; vertices
    # 3 and 4 carry no edges at all and must not be built
    cases.append(
        (
            "concat-adapter",
            {
                "repeats": 3,
                "hidden_width": 128,
                "block": {
                    "n": 6,
                    "nodes": [
                        _node("conv", 3, 256),
                        _node("sep_conv", 5, 128, activation="swish"),
                        _node("glu", 0, 256),
                        _node("attn", 4, 128),
                    ],
                    "output_node": {"input_mode": "concat", "activation": "none"},
                    "edges": [[0, 1], [0, 2], [1, 5], [2, 5]],
                },
            },
            BERT_SHAPE,
        )
    )

    # vertex 3 has no incoming edge, so 3 and 4 are dead even though the
    # edge (4,5) points at the output; the merge at v5 must skip vertex 4
    cases.append(
        (
            "dead-branch-into-output",
            {
                "repeats": 4,
                "hidden_width": 256,
                "block": {
                    "n": 6,
                    "nodes": [
                        _node("glu", 0, 512, activation="swish"),
                        _node("attn", 4, 128, input_mode="mul"),
                        _node("sep_conv", 9, 256),
                        _node("conv", 1, 128),
                    ],
                    "output_node": {"input_mode": "add", "activation": "relu"},
                    "edges": [[0, 1], [1, 2], [2, 5], [3, 4], [4, 5]],
                },
            },
            BERT_SHAPE,
        )
    )

    # near-max density: 12 of 15 possible edges, widest everything; the
    # concat output merges four predecessors into a 2048->512 adapter
    dense_edges = sorted(
        {(i, j) for i in range(6) for j in range(i + 1, 6)}
        - {(0, 5), (0, 4), (0, 3)}
    )
    cases.append(
        (
            "dense-attn-max",
            {
                "repeats": 8,
                "hidden_width": 512,
                "block": {
                    "n": 6,
                    "nodes": [
                        _node("attn", 16, 512),
                        _node("attn", 8, 512),
                        _node("attn", 16, 512, input_mode="mul", activation="swish"),
                        _node("attn", 4, 512),
                    ],
                    "output_node": {"input_mode": "concat", "activation": "none"},
                    "edges": [list(e) for e in dense_edges],
                },
            },
            BERT_SHAPE,
        )
    )

    # mul merges across mismatched widths (128 vs 512) pad with ones; the
    # count only cares that merged width is the max
    cases.append(
        (
            "mul-width-mismatch",
            {
                "repeats": 5,
                "hidden_width": 128,
                "block": {
                    "n": 6,
                    "nodes": [
                        _node("conv", 1, 512),
                        _node("sep_conv", 11, 128),
                        _node("glu", 0, 256, input_mode="mul", activation="none"),
                        _node("conv", 3, 128, input_mode="mul"),
                    ],
                    "output_node": {"input_mode": "mul", "activation": "swish"},
                    "edges": [[0, 1], [0, 3], [1, 3], [3, 5], [1, 5]],
                },
            },
            BERT_SHAPE,
        )
    )

    # pure GLU chain, no adapter (widths all equal hidden), swish everywhere
    cases.append(
        (
            "glu-chain",
            {
                "repeats": 3,
                "hidden_width": 256,
                "block": {
                    "n": 6,
                    "nodes": [
                        _node("glu", 0, 256, activation="swish"),
                        _node("glu", 0, 256, activation="swish"),
                        _node("glu", 0, 256, activation="swish"),
                        _node("glu", 0, 256, activation="swish"),
                    ],
                    "output_node": {"input_mode": "add", "activation": "none"},
                    "edges": [[0, 1], [1, 2], [2, 3], [3, 4], [4, 5]],
                },
            },
            TINY_SHAPE,
        )
    )
    return cases


def build_cases() -> list[dict]:
    cases: list[tuple[str, dict, dict]] = []

    cases.append(("default-simplest", to_record(simplest(DEFAULT_SPACE)), BERT_SHAPE))
    for seed in (11, 23, 37, 59):
        cases.append((f"sampled-seed{seed}", to_record(sample(DEFAULT_SPACE, seed)), BERT_SHAPE))
    cases.append(("sampled-seed71-small-shape", to_record(sample(DEFAULT_SPACE, 71)), SMALL_SHAPE))

    n4 = DEFAULT_SPACE.restrict(n=4)
    cases.append(("n4-simplest", to_record(simplest(n4)), TINY_SHAPE))
    cases.append(("n4-sampled-seed5", to_record(sample(n4, 5)), BERT_SHAPE))

    cases.extend(_handcrafted())

    rows = []
    for name, record, shape in cases:
        arch = from_record(record)  # strict parse; also proves the record is well formed
        report = validate(arch, DEFAULT_SPACE if record["block"]["n"] == 6 else n4)
        assert report.ok, f"{name}: fixture arch rejected: {report.violations}"
        rows.append(
            {
                "name": name,
                "shape": shape,
                "arch": record,
                "expected": torch_breakdown(record, shape),
            }
        )
    return rows


def main() -> int:
    torch.manual_seed(0)
    rows = build_cases()
    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": "param-count-fixtures-v1",
        "generator": f"tools/derive_param_fixtures.py (torch {torch.__version__})",
        "cases": rows,
    }
    OUT_PATH.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} cases to {OUT_PATH}")
    for row in rows:
        print(f"  {row['name']:28s} total={row['expected']['total']:,}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
