"""Bundled sentiment dataset: loading, vocabulary, tensor encoding.

Datasets are plain text, one ``label<TAB>sentence`` per line, tokenized by
whitespace.  The vocabulary is built deterministically (sorted words after
two fixed specials), so encodings are stable across runs and processes.
"""

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import torch

__all__ = [
    "PAD_TOKEN",
    "UNK_TOKEN",
    "DatasetError",
    "Example",
    "Vocabulary",
    "load_examples",
    "encode_batch",
    "index_batches",
    "bundled_data_dir",
]

PAD_TOKEN = "[pad]"
UNK_TOKEN = "[unk]"


class DatasetError(ValueError):
    """A dataset file is missing or malformed."""


@dataclass(frozen=True)
class Example:
    label: int
    words: tuple[str, ...]


def bundled_data_dir() -> Path:
    """Directory of the dataset shipped inside the package."""
    return Path(__file__).resolve().parent / "data"


def load_examples(path: str | Path) -> list[Example]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    examples: list[Example] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'label<TAB>sentence'")
        raw_label, sentence = parts
        try:
            label = int(raw_label)
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: label {raw_label!r} is not an integer") from None
        if label < 0:
            raise DatasetError(f"{path}:{lineno}: label must be non-negative, got {label}")
        words = tuple(sentence.split())
        if not words:
            raise DatasetError(f"{path}:{lineno}: empty sentence")
        examples.append(Example(label=label, words=words))
    if not examples:
        raise DatasetError(f"{path}: no examples")
    return examples


class Vocabulary:
    """Word <-> id mapping with pad id 0 and unknown id 1."""

    def __init__(self, words: Iterable[str]):
        uniq = sorted(set(words) - {PAD_TOKEN, UNK_TOKEN})
        self._words = [PAD_TOKEN, UNK_TOKEN] + uniq
        self._ids = {w: i for i, w in enumerate(self._words)}

    def __len__(self) -> int:
        return len(self._words)

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def id_of(self, word: str) -> int:
        return self._ids.get(word, 1)

    def word_of(self, idx: int) -> str:
        return self._words[idx]


def encode_batch(
    sentences: list[tuple[str, ...]] | list[list[str]],
    vocab: Vocabulary,
    max_positions: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a batch of tokenized sentences into (tokens, mask) long/bool tensors."""
    if not sentences:
        raise DatasetError("cannot encode an empty batch")
    longest = max(len(s) for s in sentences)
    if longest > max_positions:
        raise DatasetError(f"sentence length {longest} exceeds max_positions {max_positions}")
    tokens = torch.zeros(len(sentences), longest, dtype=torch.long)
    mask = torch.zeros(len(sentences), longest, dtype=torch.bool)
    for row, words in enumerate(sentences):
        for col, word in enumerate(words):
            tokens[row, col] = vocab.id_of(word)
            mask[row, col] = True
    return tokens, mask


def index_batches(count: int, batch_size: int, seed: int | None = None) -> Iterator[list[int]]:
    """Yield index batches over ``range(count)``, shuffled when a seed is
    given (deterministically).  Batching by index keeps examples aligned
    with any precomputed per-example tensors."""
    order = list(range(count))
    if seed is not None:
        random.Random(seed).shuffle(order)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]
