"""Evaluation worker: trains distilled students and measures their
robustness against synonym-substitution attacks, serving results to a
search engine over a newline-delimited JSON protocol."""

from .attack import AttackConfig, AttackError, AttackReport, attack_eval
from .distillation import DistillConfig, DistillationError, distill
from .evaluation import EvalContext, evaluate_record
from .records import RecordError, parse_architecture
from .service import WorkerService
from .student_net import StudentNet, param_breakdown

__all__ = [
    "AttackConfig",
    "AttackError",
    "AttackReport",
    "DistillConfig",
    "DistillationError",
    "EvalContext",
    "RecordError",
    "StudentNet",
    "WorkerService",
    "attack_eval",
    "distill",
    "evaluate_record",
    "param_breakdown",
    "parse_architecture",
]
