"""Word-substitution robustness evaluation.

The attack follows the classic recipe at toy scale: rank words of a
correctly-classified sentence by how much deleting them drops the true-class
probability, then walk that ranking greedily substituting synonyms — nearest
neighbors in the static embedding table with cosine similarity at or above
the threshold — keeping a substitution when it lowers the true-class score
and declaring success when the predicted label flips.  Perturbation stops at
a budget proportional to sentence length.

Robustness is the fraction of a seeded sample of the evaluation set that is
still classified correctly after the attack; inputs the attack cannot touch
(no admissible synonyms) count as robust when they were correct, and inputs
that were already misclassified count against robustness without being
attacked.
"""

import logging
import random
from dataclasses import dataclass, field

import torch

from .embeddings import EmbeddingTable
from .text_data import Example, Vocabulary, encode_batch

__all__ = ["AttackConfig", "AttackError", "Substitution", "AttackTranscript", "AttackReport", "attack_eval"]

logger = logging.getLogger("eval_worker.attack")


@dataclass(frozen=True)
class AttackConfig:
    similarity_threshold: float = 0.7
    candidate_synonyms: int = 8
    max_perturb_fraction: float = 0.3
    robustness_samples: int = 200
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.similarity_threshold, (int, float)) or not (0.0 < self.similarity_threshold <= 1.0):
            raise ValueError(f"similarity_threshold must be in (0, 1], got {self.similarity_threshold!r}")
        if not isinstance(self.candidate_synonyms, int) or self.candidate_synonyms < 1:
            raise ValueError(f"candidate_synonyms must be a positive integer, got {self.candidate_synonyms!r}")
        if not isinstance(self.max_perturb_fraction, (int, float)) or not (0.0 < self.max_perturb_fraction <= 1.0):
            raise ValueError(f"max_perturb_fraction must be in (0, 1], got {self.max_perturb_fraction!r}")
        if not isinstance(self.robustness_samples, int) or self.robustness_samples < 1:
            raise ValueError(f"robustness_samples must be a positive integer, got {self.robustness_samples!r}")


class AttackError(ValueError):
    """The evaluation input is unusable (e.g. an empty evaluation set)."""


@dataclass(frozen=True)
class Substitution:
    position: int
    original: str
    replacement: str
    similarity: float


@dataclass
class AttackTranscript:
    """Audit record of one attacked input."""

    index: int
    label: int
    original: tuple[str, ...]
    adversarial: tuple[str, ...]
    substitutions: list[Substitution] = field(default_factory=list)
    success: bool = False


@dataclass
class AttackReport:
    accuracy_pct: float
    robustness_pct: float
    subset_accuracy_pct: float
    subset_size: int
    attacked: int
    transcripts: list[AttackTranscript]


def _predict_many(model, vocab: Vocabulary, sentences, max_positions: int, device, chunk: int = 256):
    """Predicted labels and class probabilities for a list of word tuples."""
    labels = []
    probs = []
    model.eval()
    dev = torch.device(device)
    with torch.no_grad():
        for start in range(0, len(sentences), chunk):
            tokens, mask = encode_batch(sentences[start : start + chunk], vocab, max_positions)
            logits = model(tokens.to(dev), mask.to(dev))
            p = torch.softmax(logits, dim=-1).cpu()
            probs.append(p)
            labels.append(p.argmax(dim=1))
    return torch.cat(labels), torch.cat(probs)


def _attack_one(
    model,
    vocab: Vocabulary,
    table: EmbeddingTable,
    cfg: AttackConfig,
    example: Example,
    index: int,
    max_positions: int,
    device,
) -> AttackTranscript:
    """Greedy substitution attack on one correctly-classified input."""
    words = list(example.words)
    label = example.label
    transcript = AttackTranscript(index=index, label=label, original=tuple(words), adversarial=tuple(words))

    _, base_probs = _predict_many(model, vocab, [tuple(words)], max_positions, device)
    p_true = float(base_probs[0, label])

    # importance = true-class probability drop when the word is deleted
    deletable = [i for i in range(len(words)) if words[i] in table and len(words) > 1]
    if not deletable:
        return transcript
    deleted = [tuple(words[:i] + words[i + 1 :]) for i in deletable]
    _, del_probs = _predict_many(model, vocab, deleted, max_positions, device)
    ranked = sorted(
        zip(deletable, (p_true - float(del_probs[row, label]) for row in range(len(deletable)))),
        key=lambda pair: (-pair[1], pair[0]),
    )

    budget = max(1, int(cfg.max_perturb_fraction * len(words)))
    current = list(words)
    for position, _importance in ranked:
        if len(transcript.substitutions) >= budget:
            break
        candidates = table.neighbors(words[position], cfg.candidate_synonyms, cfg.similarity_threshold)
        if not candidates:
            continue
        trials = []
        for candidate, _sim in candidates:
            trial = list(current)
            trial[position] = candidate
            trials.append(tuple(trial))
        trial_labels, trial_probs = _predict_many(model, vocab, trials, max_positions, device)

        flips = [row for row in range(len(trials)) if int(trial_labels[row]) != label]
        if flips:
            best = min(flips, key=lambda row: (float(trial_probs[row, label]), row))
        else:
            drops = [row for row in range(len(trials)) if float(trial_probs[row, label]) < p_true]
            if not drops:
                continue
            best = min(drops, key=lambda row: (float(trial_probs[row, label]), row))
        replacement, similarity = candidates[best]
        current[position] = replacement
        transcript.substitutions.append(
            Substitution(position=position, original=words[position], replacement=replacement, similarity=similarity)
        )
        p_true = float(trial_probs[best, label])
        if flips:
            transcript.success = True
            break

    transcript.adversarial = tuple(current)
    return transcript


def attack_eval(
    model,
    evaluation: list[Example],
    table: EmbeddingTable,
    cfg: AttackConfig,
    vocab: Vocabulary,
    max_positions: int,
    device: str = "cpu",
) -> AttackReport:
    """Benign accuracy on the full set, robustness over an attacked sample."""
    if not evaluation:
        raise AttackError("empty evaluation set")

    sentences = [ex.words for ex in evaluation]
    labels = torch.tensor([ex.label for ex in evaluation])
    predicted, _ = _predict_many(model, vocab, sentences, max_positions, device)
    correct = predicted == labels
    accuracy_pct = 100.0 * correct.sum().item() / len(evaluation)

    subset_size = min(cfg.robustness_samples, len(evaluation))
    subset = random.Random(cfg.seed).sample(range(len(evaluation)), subset_size)

    robust = 0
    initially_correct = 0
    transcripts: list[AttackTranscript] = []
    for index in subset:
        if not bool(correct[index]):
            continue  # already wrong; counts against robustness, nothing to attack
        initially_correct += 1
        transcript = _attack_one(model, vocab, table, cfg, evaluation[index], index, max_positions, device)
        transcripts.append(transcript)
        if not transcript.success:
            robust += 1

    report = AttackReport(
        accuracy_pct=accuracy_pct,
        robustness_pct=100.0 * robust / subset_size,
        subset_accuracy_pct=100.0 * initially_correct / subset_size,
        subset_size=subset_size,
        attacked=initially_correct,
        transcripts=transcripts,
    )
    logger.info(
        "attack: benign %.2f%%, robustness %.2f%% over %d sampled (%d attacked, %d flipped)",
        report.accuracy_pct,
        report.robustness_pct,
        subset_size,
        initially_correct,
        sum(1 for t in transcripts if t.success),
    )
    return report
