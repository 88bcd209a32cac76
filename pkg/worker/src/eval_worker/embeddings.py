"""Static word-embedding table used for synonym lookup during attacks.

The attack admits a substitution when the cosine similarity between the
original word's vector and the candidate's vector reaches the configured
threshold.  The table is bundled as plain text (``word<TAB>v1 v2 ...``) and
rows are L2-normalized on load, so cosine similarity is a dot product.
"""

from pathlib import Path

import torch

__all__ = ["EmbeddingTableError", "EmbeddingTable"]


class EmbeddingTableError(ValueError):
    """The embedding-table file is missing or malformed."""


class EmbeddingTable:
    def __init__(self, words: list[str], vectors: torch.Tensor):
        if len(words) != vectors.shape[0]:
            raise EmbeddingTableError(f"{len(words)} words but {vectors.shape[0]} vectors")
        if len(set(words)) != len(words):
            raise EmbeddingTableError("duplicate words in embedding table")
        self.words = list(words)
        norms = vectors.norm(dim=1, keepdim=True)
        if (norms == 0).any():
            raise EmbeddingTableError("zero vector in embedding table")
        self.vectors = vectors / norms
        self._index = {w: i for i, w in enumerate(words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingTable":
        path = Path(path)
        if not path.exists():
            raise EmbeddingTableError(f"embedding table not found: {path}")
        words: list[str] = []
        rows: list[list[float]] = []
        dim = None
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise EmbeddingTableError(f"{path}:{lineno}: expected 'word<TAB>values'")
            word, raw_values = parts
            try:
                values = [float(x) for x in raw_values.split()]
            except ValueError:
                raise EmbeddingTableError(f"{path}:{lineno}: non-numeric vector component") from None
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise EmbeddingTableError(f"{path}:{lineno}: expected {dim} components, got {len(values)}")
            words.append(word)
            rows.append(values)
        if not words:
            raise EmbeddingTableError(f"{path}: empty embedding table")
        return cls(words, torch.tensor(rows, dtype=torch.float32))

    def similarity(self, a: str, b: str) -> float:
        """Cosine similarity between two in-table words."""
        return float(self.vectors[self._index[a]] @ self.vectors[self._index[b]])

    def neighbors(self, word: str, count: int, threshold: float) -> list[tuple[str, float]]:
        """Up to `count` nearest other words with cosine >= threshold.

        Sorted by descending similarity; ties break alphabetically so the
        candidate list is deterministic.
        """
        if word not in self._index:
            return []
        sims = self.vectors @ self.vectors[self._index[word]]
        found = [
            (self.words[i], float(sims[i]))
            for i in range(len(self.words))
            if i != self._index[word] and float(sims[i]) >= threshold
        ]
        found.sort(key=lambda pair: (-pair[1], pair[0]))
        return found[:count]
