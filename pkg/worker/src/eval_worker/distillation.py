"""Knowledge-distillation training loop for student networks.

The student minimizes a three-part objective against precomputed teacher
targets: a temperature-softened KL term on the final logits, a probe term
aligning each block's pooled output with the matching teacher layer's probe
predictions, and a plain mean-squared error on the logits.  Student probes
are linear classifiers trained jointly with the student and thrown away
afterwards.
"""

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .student_net import StudentNet
from .teacher_net import TeacherBundle
from .text_data import Example, Vocabulary, encode_batch, index_batches

__all__ = [
    "DistillConfig",
    "DistillationError",
    "tkd_loss",
    "soft_cross_entropy",
    "probe_layer_for_block",
    "combined_loss",
    "distill",
]

logger = logging.getLogger("eval_worker.distill")


@dataclass(frozen=True)
class DistillConfig:
    kd_weight: float = 0.5
    probe_weight: float = 0.25
    mse_weight: float = 0.25
    temperature: float = 2.0
    learning_rate: float = 5e-4
    epochs: int = 15
    dataset: str = "toy-sentiment"
    batch_size: int = 64

    def __post_init__(self):
        for name in ("kd_weight", "probe_weight", "mse_weight"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a non-negative number, got {value!r}")
        if not isinstance(self.temperature, (int, float)) or not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature!r}")
        if not isinstance(self.learning_rate, (int, float)) or not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ValueError(f"epochs must be a positive integer, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ValueError(f"batch_size must be a positive integer, got {self.batch_size!r}")


class DistillationError(RuntimeError):
    """Training failed (e.g. the loss stopped being finite)."""


def tkd_loss(student_logits: torch.Tensor, teacher_logits: torch.Tensor, temperature: float) -> torch.Tensor:
    """Temperature-softened KL between teacher and student predictions,
    scaled by t^2 so its gradient magnitude stays comparable across
    temperatures.  Zero exactly when the softened distributions match."""
    log_student = F.log_softmax(student_logits / temperature, dim=-1)
    teacher_probs = F.softmax(teacher_logits / temperature, dim=-1)
    return temperature**2 * F.kl_div(log_student, teacher_probs, reduction="batchmean")


def soft_cross_entropy(logits: torch.Tensor, target_logits: torch.Tensor) -> torch.Tensor:
    """Cross entropy against the target's predicted distribution."""
    return -(F.softmax(target_logits, dim=-1) * F.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


def probe_layer_for_block(block_index: int, num_blocks: int, teacher_layers: int) -> int:
    """Zero-based teacher layer aligned with zero-based student block
    ``block_index``: block k of R maps to teacher layer ceil(k * L / R)."""
    return math.ceil((block_index + 1) * teacher_layers / num_blocks) - 1


def combined_loss(
    cfg: DistillConfig,
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    probe_pairs: list[tuple[torch.Tensor, torch.Tensor]],
) -> dict[str, torch.Tensor]:
    """The weighted objective with its parts; probe CE sums over blocks."""
    kd = tkd_loss(student_logits, teacher_logits, cfg.temperature)
    probe = student_logits.new_zeros(())
    for student_probe, teacher_probe in probe_pairs:
        probe = probe + soft_cross_entropy(student_probe, teacher_probe)
    mse = F.mse_loss(student_logits, teacher_logits)
    total = cfg.kd_weight * kd + cfg.probe_weight * probe + cfg.mse_weight * mse
    return {"total": total, "kd": kd, "probe": probe, "mse": mse}


def distill(
    student: StudentNet,
    bundle: TeacherBundle,
    cfg: DistillConfig,
    train: list[Example],
    vocab: Vocabulary,
    max_positions: int,
    seed: int,
    device: str = "cpu",
) -> tuple[StudentNet, list[dict[str, float]]]:
    """Train the student against the bundle's precomputed targets.

    Returns the student and a per-epoch loss trace.  A non-finite loss
    aborts with :class:`DistillationError` naming the epoch.
    """
    if bundle.teacher_logits.shape[0] != len(train):
        raise DistillationError(
            f"bundle holds {bundle.teacher_logits.shape[0]} targets for {len(train)} training examples"
        )
    dev = torch.device(device)
    student = student.to(dev)
    tokens, mask = encode_batch([ex.words for ex in train], vocab, max_positions)
    tokens, mask = tokens.to(dev), mask.to(dev)
    teacher_logits = bundle.teacher_logits.to(dev)
    probe_targets = bundle.probe_logits.to(dev)

    num_blocks = len(student.blocks)
    hidden = student.classifier.in_features
    probes = nn.ModuleList(
        nn.Linear(hidden, bundle.num_classes) for _ in range(num_blocks)
    ).to(dev)
    layer_for_block = [
        probe_layer_for_block(k, num_blocks, bundle.num_layers) for k in range(num_blocks)
    ]

    optimizer = torch.optim.Adam(
        list(student.parameters()) + list(probes.parameters()), lr=cfg.learning_rate
    )
    trace: list[dict[str, float]] = []
    student.train()
    for epoch in range(1, cfg.epochs + 1):
        sums = {"total": 0.0, "kd": 0.0, "probe": 0.0, "mse": 0.0}
        for batch in index_batches(len(train), cfg.batch_size, seed=seed * 10_000 + epoch):
            idx = torch.tensor(batch, device=dev)
            optimizer.zero_grad()
            logits, pooled = student.forward_with_block_outputs(tokens[idx], mask[idx])
            probe_pairs = [
                (probes[k](pooled[k]), probe_targets[layer_for_block[k]][idx])
                for k in range(num_blocks)
            ]
            parts = combined_loss(cfg, logits, teacher_logits[idx], probe_pairs)
            if not torch.isfinite(parts["total"]):
                raise DistillationError(f"loss diverged at epoch {epoch} (non-finite total)")
            parts["total"].backward()
            optimizer.step()
            for key in sums:
                sums[key] += float(parts[key].detach()) * len(batch)
        epoch_means = {key: value / len(train) for key, value in sums.items()}
        if not all(math.isfinite(v) for v in epoch_means.values()):
            raise DistillationError(f"loss diverged at epoch {epoch} (non-finite epoch mean)")
        trace.append({"epoch": epoch, **epoch_means})
        logger.info(
            "distill epoch %d: total %.4f (kd %.4f, probe %.4f, mse %.4f)",
            epoch, epoch_means["total"], epoch_means["kd"], epoch_means["probe"], epoch_means["mse"],
        )
    student.eval()
    return student, trace
