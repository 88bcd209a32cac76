import json
from pathlib import Path

import pytest

from eval_worker.embeddings import EmbeddingTable
from eval_worker.evaluation import MAX_POSITIONS, EvalContext
from eval_worker.text_data import Vocabulary, bundled_data_dir, load_examples

FIXTURES = Path(__file__).parent / "fixtures"
CACHE_DIR = Path(__file__).parent / "cache"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return bundled_data_dir()


@pytest.fixture(scope="session")
def corpus(data_dir):
    return load_examples(data_dir / "train.tsv"), load_examples(data_dir / "eval.tsv")


@pytest.fixture(scope="session")
def table(data_dir) -> EmbeddingTable:
    return EmbeddingTable.load(data_dir / "embeddings.tsv")


@pytest.fixture(scope="session")
def vocab(corpus, table) -> Vocabulary:
    words = set(table.words)
    words.update(w for ex in corpus[0] + corpus[1] for w in ex.words)
    return Vocabulary(words)


@pytest.fixture(scope="session")
def shape(vocab) -> dict:
    return {
        "vocab_size": len(vocab),
        "max_positions": MAX_POSITIONS,
        "num_segments": 1,
        "num_classes": 2,
    }


@pytest.fixture(scope="session")
def context() -> EvalContext:
    """Full evaluation context; the teacher bundle is cached on disk, so
    only the first session on a machine pays for fine-tuning."""
    return EvalContext.create(cache_dir=CACHE_DIR)


@pytest.fixture(scope="session")
def simplest_record() -> dict:
    return json.loads((FIXTURES / "simplest_arch.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def pilot() -> dict:
    return json.loads((FIXTURES / "pilot.json").read_text(encoding="utf-8"))
