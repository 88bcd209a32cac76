"""One-job orchestration: build the student, distill it, attack it.

``EvalContext`` holds everything that outlives a single job — the corpus,
the vocabulary, the embedding table, and the precomputed teacher bundle —
so evaluating an architecture is a pure function of the context, the
record, and the per-job configuration.  Failures of any kind become an
error payload, never an exception: the serving loop must outlive bad jobs.
"""

import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path

import torch

from .attack import AttackConfig, attack_eval
from .distillation import DistillConfig, distill
from .embeddings import EmbeddingTable
from .records import RecordError, parse_architecture
from .student_net import StudentNet, param_breakdown
from .teacher_net import TeacherBundle, prepare_bundle
from .text_data import Example, Vocabulary, bundled_data_dir, load_examples

__all__ = ["MAX_POSITIONS", "EvalContext", "evaluate_record", "default_cache_dir"]

logger = logging.getLogger("eval_worker.evaluation")

# Bundled sentences are at most a dozen tokens; a fixed position budget keeps
# every architecture's embedding table the same size.
MAX_POSITIONS = 16

# Per-job keys the engine may override through the eval request.
_EVAL_CONFIG_KEYS = {"epochs", "batch_size", "robustness_samples", "seed"}


def default_cache_dir() -> Path:
    root = Path(os.environ.get("XDG_CACHE_HOME", "~/.cache")).expanduser()
    return root / "eval-worker"


@dataclass
class EvalContext:
    train: list[Example]
    evaluation: list[Example]
    vocab: Vocabulary
    table: EmbeddingTable
    bundle: TeacherBundle
    num_classes: int
    seed: int
    device: str
    distill_cfg: DistillConfig
    attack_cfg: AttackConfig

    @classmethod
    def create(
        cls,
        data_dir: str | Path | None = None,
        cache_dir: str | Path | None = None,
        seed: int = 0,
        device: str = "cpu",
        distill_cfg: DistillConfig | None = None,
        attack_cfg: AttackConfig | None = None,
    ) -> "EvalContext":
        """Load the corpus and teacher bundle (training the teacher on a
        cache miss).  Single-threaded math keeps reruns bit-identical."""
        torch.set_num_threads(1)
        data = Path(data_dir) if data_dir is not None else bundled_data_dir()
        cache = Path(cache_dir) if cache_dir is not None else default_cache_dir()
        train = load_examples(data / "train.tsv")
        evaluation = load_examples(data / "eval.tsv")
        table = EmbeddingTable.load(data / "embeddings.tsv")
        words = set(table.words)
        words.update(w for ex in train + evaluation for w in ex.words)
        vocab = Vocabulary(words)
        num_classes = max(ex.label for ex in train + evaluation) + 1
        bundle = prepare_bundle(
            train,
            evaluation,
            vocab,
            MAX_POSITIONS,
            num_classes,
            train_path=data / "train.tsv",
            cache_dir=cache,
            seed=seed,
            device=device,
        )
        return cls(
            train=train,
            evaluation=evaluation,
            vocab=vocab,
            table=table,
            bundle=bundle,
            num_classes=num_classes,
            seed=seed,
            device=device,
            distill_cfg=distill_cfg or DistillConfig(),
            attack_cfg=attack_cfg or AttackConfig(),
        )

    def shape(self) -> dict:
        return {
            "vocab_size": len(self.vocab),
            "max_positions": MAX_POSITIONS,
            "num_segments": 1,
            "num_classes": self.num_classes,
        }


def _apply_eval_config(ctx: EvalContext, eval_config: dict | None) -> tuple[DistillConfig, AttackConfig, int]:
    """Per-job overrides, request values winning over context defaults."""
    distill_cfg = ctx.distill_cfg
    attack_cfg = ctx.attack_cfg
    seed = ctx.seed
    if not eval_config:
        return distill_cfg, attack_cfg, seed
    unknown = set(eval_config) - _EVAL_CONFIG_KEYS
    if unknown:
        logger.debug("ignoring unknown eval_config key(s): %s", ", ".join(sorted(unknown)))
    if "epochs" in eval_config:
        distill_cfg = replace(distill_cfg, epochs=eval_config["epochs"])
    if "batch_size" in eval_config:
        distill_cfg = replace(distill_cfg, batch_size=eval_config["batch_size"])
    if "robustness_samples" in eval_config:
        attack_cfg = replace(attack_cfg, robustness_samples=eval_config["robustness_samples"])
    if "seed" in eval_config:
        seed = eval_config["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ValueError(f"eval_config seed must be an integer, got {seed!r}")
    return distill_cfg, attack_cfg, seed


def evaluate_record(ctx: EvalContext, arch_record, eval_config: dict | None = None) -> dict:
    """Full evaluation of one architecture record.

    Returns the result payload for the wire: ``{"status": "ok",
    "accuracy_pct", "robustness_pct", "param_count"}`` on success, or
    ``{"status": "error", "error_message"}`` on any failure.
    """
    try:
        record = parse_architecture(arch_record)
        distill_cfg, attack_cfg, seed = _apply_eval_config(ctx, eval_config)
        attack_cfg = replace(attack_cfg, seed=seed)

        torch.manual_seed(seed)
        student = StudentNet(record, ctx.shape())
        param_count = param_breakdown(student)["total"]

        student, trace = distill(
            student, ctx.bundle, distill_cfg, ctx.train, ctx.vocab, MAX_POSITIONS, seed, ctx.device
        )
        logger.debug("distillation final losses: %s", trace[-1] if trace else "no epochs")
        report = attack_eval(
            student, ctx.evaluation, ctx.table, attack_cfg, ctx.vocab, MAX_POSITIONS, ctx.device
        )
        return {
            "status": "ok",
            "accuracy_pct": report.accuracy_pct,
            "robustness_pct": report.robustness_pct,
            "param_count": param_count,
        }
    except RecordError as exc:
        logger.warning("rejecting architecture record: %s", exc)
        return {"status": "error", "error_message": f"invalid architecture record: {exc}"}
    except Exception as exc:  # the worker must survive any single bad job
        logger.exception("evaluation failed")
        return {"status": "error", "error_message": f"{type(exc).__name__}: {exc}"}
