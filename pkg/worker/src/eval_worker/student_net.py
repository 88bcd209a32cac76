"""Student network construction from a validated architecture record.

The network is embeddings (word + position + segment), ``repeats``
instances of the block DAG, and a masked max-pool followed by a linear
classifier.  Only active vertices are built; Add/Mul merges zero/one-pad
narrower inputs up to the widest predecessor, Concat stacks along the
hidden dimension, and the block output gets a linear width adapter exactly
when its merged width differs from the inter-block hidden width.

Parameter grouping (embedding / blocks / classifier) mirrors the engine's
analytic counter so the two can be compared exactly.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .records import active_vertices

__all__ = ["ShapeError", "check_shape", "StudentNet", "param_breakdown"]


class ShapeError(ValueError):
    """The fixed model dimensions are unusable."""


def check_shape(shape: dict) -> dict:
    required = ("vocab_size", "max_positions", "num_segments", "num_classes")
    unknown = set(shape) - set(required)
    if unknown:
        raise ShapeError(f"unknown shape key(s): {', '.join(sorted(unknown))}")
    for key in required:
        value = shape.get(key)
        if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
            raise ShapeError(f"shape '{key}' must be a positive integer, got {value!r}")
    return dict(shape)


def _activation(name: str):
    if name == "none":
        return lambda x: x
    if name == "relu":
        return F.relu
    return F.silu


def _merge(mode: str, tensors: list[torch.Tensor]) -> torch.Tensor:
    if mode == "concat":
        return torch.cat(tensors, dim=-1)
    widest = max(t.shape[-1] for t in tensors)
    if mode == "add":
        out = tensors[0].new_zeros(*tensors[0].shape[:-1], widest)
        for t in tensors:
            out[..., : t.shape[-1]] += t
        return out
    out = tensors[0].new_ones(*tensors[0].shape[:-1], widest)
    for t in tensors:
        padded = tensors[0].new_ones(*t.shape[:-1], widest)
        padded[..., : t.shape[-1]] = t
        out = out * padded
    return out


class _Node(nn.Module):
    """One computational vertex; the op depends on the layer type."""

    def __init__(self, spec: dict, w_in: int):
        super().__init__()
        self.kind = spec["layer_type"]
        self.activation = _activation(spec["activation"])
        k = spec["layer_param"]
        w_out = spec["output_width"]
        if self.kind == "conv":
            self.op = nn.Conv1d(w_in, w_out, kernel_size=k, padding="same", bias=True)
        elif self.kind == "sep_conv":
            # depthwise k-tap filter without bias, then pointwise projection with bias
            self.depthwise = nn.Conv1d(w_in, w_in, kernel_size=k, padding="same", groups=w_in, bias=False)
            self.pointwise = nn.Conv1d(w_in, w_out, kernel_size=1, bias=True)
        elif self.kind == "attn":
            self.heads = k
            self.q = nn.Linear(w_in, w_out)
            self.k = nn.Linear(w_in, w_out)
            self.v = nn.Linear(w_in, w_out)
            self.out = nn.Linear(w_out, w_out)
        else:  # glu
            self.value = nn.Linear(w_in, w_out)
            self.gate = nn.Linear(w_in, w_out)

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
            y = self.out((attn @ v).transpose(1, 2).reshape(b, length, -1))
        else:
            y = self.value(x) * torch.sigmoid(self.gate(x))
        return self.activation(y)


class _Block(nn.Module):
    def __init__(self, record: dict, hidden_width: int):
        super().__init__()
        block = record["block"]
        n = block["n"]
        edges = [tuple(e) for e in block["edges"]]
        active = active_vertices(n, edges)
        self.n = n
        self.active = sorted(active)
        self.preds = {
            v: sorted(i for i, j in edges if j == v and (i == 0 or i in active))
            for v in self.active + [n - 1]
        }
        self.modes = {v: block["nodes"][v - 1]["input_mode"] for v in self.active}
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
        self.out_activation = _activation(out_spec["activation"])
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
    """Embeddings -> repeated block DAG -> masked max-pool -> classifier."""

    def __init__(self, record: dict, shape: dict):
        super().__init__()
        shape = check_shape(shape)
        h = record["hidden_width"]
        self.max_positions = shape["max_positions"]
        self.num_classes = shape["num_classes"]
        self.embedding = nn.ModuleDict(
            {
                "word": nn.Embedding(shape["vocab_size"], h),
                "position": nn.Embedding(shape["max_positions"], h),
                "segment": nn.Embedding(shape["num_segments"], h),
            }
        )
        self.blocks = nn.ModuleList(_Block(record, h) for _ in range(record["repeats"]))
        self.classifier = nn.Linear(h, shape["num_classes"])

    def _embed(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[1] > self.max_positions:
            raise ValueError(f"sequence length {tokens.shape[1]} exceeds max_positions {self.max_positions}")
        positions = torch.arange(tokens.shape[1], device=tokens.device)
        segments = torch.zeros_like(tokens)
        return (
            self.embedding["word"](tokens)
            + self.embedding["position"](positions)[None, :, :]
            + self.embedding["segment"](segments)
        )

    @staticmethod
    def _pool(x: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        if mask is None:
            return x.amax(dim=1)
        return x.masked_fill(~mask[:, :, None], float("-inf")).amax(dim=1)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        x = self._embed(tokens)
        for block in self.blocks:
            x = block(x)
        return self.classifier(self._pool(x, mask))

    def forward_with_block_outputs(
        self, tokens: torch.Tensor, mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Logits plus one masked mean-pooled feature per block repetition,
        in order — the attachment points for probe classifiers."""
        x = self._embed(tokens)
        pooled: list[torch.Tensor] = []
        if mask is None:
            mask = torch.ones(tokens.shape, dtype=torch.bool, device=tokens.device)
        denom = mask.sum(dim=1, keepdim=True).clamp(min=1)
        for block in self.blocks:
            x = block(x)
            pooled.append((x * mask[:, :, None]).sum(dim=1) / denom)
        return self.classifier(self._pool(x, mask)), pooled


def param_breakdown(model: StudentNet) -> dict[str, int]:
    """Framework-counted weights, grouped the same way the engine groups
    its analytic count."""
    groups = {
        "embedding": sum(p.numel() for p in model.embedding.parameters()),
        "blocks": sum(p.numel() for p in model.blocks.parameters()),
        "classifier": sum(p.numel() for p in model.classifier.parameters()),
    }
    groups["total"] = sum(groups.values())
    assert groups["total"] == sum(p.numel() for p in model.parameters())
    return groups
