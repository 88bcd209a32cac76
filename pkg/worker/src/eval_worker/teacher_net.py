"""Toy teacher: a small transformer fine-tuned on the bundled corpus.

Distillation never runs the teacher online.  Everything the student needs —
final logits and per-layer probe logits for every training sentence — is
precomputed here once and cached on disk, keyed by the training data, the
seed, and the teacher recipe.  Probes are linear classifiers trained on
frozen mean-pooled layer outputs; their predictions give the layer-wise
alignment targets.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .text_data import Example, Vocabulary, encode_batch, index_batches

__all__ = ["TeacherNet", "TeacherBundle", "prepare_bundle"]

logger = logging.getLogger("eval_worker.teacher")

BUNDLE_FORMAT = "teacher-bundle-v1"

D_MODEL = 96
NUM_LAYERS = 2
NUM_HEADS = 4
FEEDFORWARD = 192
FINETUNE_EPOCHS = 8
FINETUNE_LR = 1e-3
PROBE_EPOCHS = 30
PROBE_LR = 1e-2
BATCH_SIZE = 64


class TeacherNet(nn.Module):
    def __init__(self, vocab_size: int, max_positions: int, num_classes: int):
        super().__init__()
        self.word = nn.Embedding(vocab_size, D_MODEL)
        self.position = nn.Embedding(max_positions, D_MODEL)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=D_MODEL,
                nhead=NUM_HEADS,
                dim_feedforward=FEEDFORWARD,
                dropout=0.1,
                batch_first=True,
            )
            for _ in range(NUM_LAYERS)
        )
        self.classifier = nn.Linear(D_MODEL, num_classes)

    def forward_layers(
        self, tokens: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Final logits and the masked mean-pooled output of every layer."""
        positions = torch.arange(tokens.shape[1], device=tokens.device)
        x = self.word(tokens) + self.position(positions)[None, :, :]
        denom = mask.sum(dim=1, keepdim=True).clamp(min=1)
        pooled = []
        for layer in self.layers:
            x = layer(x, src_key_padding_mask=~mask)
            pooled.append((x * mask[:, :, None]).sum(dim=1) / denom)
        return self.classifier(pooled[-1]), pooled

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.forward_layers(tokens, mask)[0]


@dataclass
class TeacherBundle:
    """Precomputed distillation targets, aligned with the training examples."""

    teacher_logits: torch.Tensor  # (N, classes)
    probe_logits: torch.Tensor  # (layers, N, classes)
    num_layers: int
    num_classes: int
    train_accuracy_pct: float
    eval_accuracy_pct: float

    def to_payload(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "teacher_logits": self.teacher_logits,
            "probe_logits": self.probe_logits,
            "num_layers": self.num_layers,
            "num_classes": self.num_classes,
            "train_accuracy_pct": self.train_accuracy_pct,
            "eval_accuracy_pct": self.eval_accuracy_pct,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "TeacherBundle":
        return cls(
            teacher_logits=payload["teacher_logits"],
            probe_logits=payload["probe_logits"],
            num_layers=payload["num_layers"],
            num_classes=payload["num_classes"],
            train_accuracy_pct=payload["train_accuracy_pct"],
            eval_accuracy_pct=payload["eval_accuracy_pct"],
        )


def _accuracy_pct(model: TeacherNet, tokens, mask, labels) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, tokens.shape[0], 256):
            logits = model(tokens[start : start + 256], mask[start : start + 256])
            correct += (logits.argmax(dim=1) == labels[start : start + 256]).sum().item()
    return 100.0 * correct / tokens.shape[0]


def _cache_key(train_path: Path, seed: int) -> str:
    digest = hashlib.sha256()
    digest.update(BUNDLE_FORMAT.encode())
    digest.update(f"|d{D_MODEL}|l{NUM_LAYERS}|h{NUM_HEADS}|f{FEEDFORWARD}|e{FINETUNE_EPOCHS}|s{seed}|".encode())
    digest.update(train_path.read_bytes())
    return digest.hexdigest()[:16]


def prepare_bundle(
    train: list[Example],
    evaluation: list[Example],
    vocab: Vocabulary,
    max_positions: int,
    num_classes: int,
    train_path: Path,
    cache_dir: Path,
    seed: int,
    device: str = "cpu",
) -> TeacherBundle:
    """Fine-tune the teacher and precompute its targets, or load the cache."""
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache_file = cache_dir / f"bundle-{_cache_key(train_path, seed)}.pt"
    if cache_file.exists():
        payload = torch.load(cache_file, weights_only=True)
        if payload.get("format") == BUNDLE_FORMAT:
            logger.info("loaded cached teacher bundle %s", cache_file.name)
            return TeacherBundle.from_payload(payload)
        logger.warning("cached bundle %s has a stale format; rebuilding", cache_file.name)

    torch.manual_seed(seed)
    dev = torch.device(device)
    tokens, mask = encode_batch([ex.words for ex in train], vocab, max_positions)
    labels = torch.tensor([ex.label for ex in train], dtype=torch.long)
    tokens, mask, labels = tokens.to(dev), mask.to(dev), labels.to(dev)
    ev_tokens, ev_mask = encode_batch([ex.words for ex in evaluation], vocab, max_positions)
    ev_labels = torch.tensor([ex.label for ex in evaluation], dtype=torch.long)
    ev_tokens, ev_mask, ev_labels = ev_tokens.to(dev), ev_mask.to(dev), ev_labels.to(dev)

    teacher = TeacherNet(len(vocab), max_positions, num_classes).to(dev)
    optimizer = torch.optim.Adam(teacher.parameters(), lr=FINETUNE_LR)
    teacher.train()
    for epoch in range(FINETUNE_EPOCHS):
        total = 0.0
        for batch in index_batches(len(train), BATCH_SIZE, seed=seed * 1000 + epoch):
            idx = torch.tensor(batch, device=dev)
            optimizer.zero_grad()
            logits = teacher(tokens[idx], mask[idx])
            loss = F.cross_entropy(logits, labels[idx])
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
        logger.info("teacher epoch %d: loss %.4f", epoch + 1, total / len(train))

    train_acc = _accuracy_pct(teacher, tokens, mask, labels)
    eval_acc = _accuracy_pct(teacher, ev_tokens, ev_mask, ev_labels)
    logger.info("teacher accuracy: train %.2f%%, eval %.2f%%", train_acc, eval_acc)

    # Frozen layer features, then linear probes on top of them.
    teacher.eval()
    with torch.no_grad():
        feature_chunks: list[list[torch.Tensor]] = [[] for _ in range(NUM_LAYERS)]
        logit_chunks: list[torch.Tensor] = []
        for start in range(0, tokens.shape[0], 256):
            logits, pooled = teacher.forward_layers(tokens[start : start + 256], mask[start : start + 256])
            logit_chunks.append(logits)
            for layer, feats in enumerate(pooled):
                feature_chunks[layer].append(feats)
        teacher_logits = torch.cat(logit_chunks)
        features = [torch.cat(chunks) for chunks in feature_chunks]

    probe_logits = []
    for layer, feats in enumerate(features):
        probe = nn.Linear(D_MODEL, num_classes).to(dev)
        popt = torch.optim.Adam(probe.parameters(), lr=PROBE_LR)
        for epoch in range(PROBE_EPOCHS):
            for batch in index_batches(len(train), 256, seed=seed * 77 + epoch):
                idx = torch.tensor(batch, device=dev)
                popt.zero_grad()
                loss = F.cross_entropy(probe(feats[idx]), labels[idx])
                loss.backward()
                popt.step()
        with torch.no_grad():
            out = probe(feats)
            acc = 100.0 * (out.argmax(dim=1) == labels).float().mean().item()
        logger.info("teacher probe for layer %d: train accuracy %.2f%%", layer + 1, acc)
        probe_logits.append(out.cpu())

    bundle = TeacherBundle(
        teacher_logits=teacher_logits.cpu(),
        probe_logits=torch.stack(probe_logits),
        num_layers=NUM_LAYERS,
        num_classes=num_classes,
        train_accuracy_pct=train_acc,
        eval_accuracy_pct=eval_acc,
    )
    torch.save(bundle.to_payload(), cache_file)
    logger.info("cached teacher bundle at %s", cache_file)
    return bundle
