import pytest
import torch

from distattack.core import Vocabulary
from distattack.models import LMContextualEmbedder, ModelBundle, TinyCausalLM, TinyClassifier
from distattack.synthetic import train_synthetic_task


@pytest.fixture(scope="session")
def task():
    """The trained desk-scale reference task (source model, seed 0)."""
    return train_synthetic_task(seed=0)


@pytest.fixture(scope="session")
def task_b():
    """Same data and architecture, independently initialized classifier."""
    return train_synthetic_task(seed=0, classifier_seed=2)


@pytest.fixture
def desk():
    """Untrained double-precision models small enough for finite differences."""
    vocab = Vocabulary(tokens=tuple(f"t{i}" for i in range(8)))
    clf = TinyClassifier(vocab.size, num_classes=2, dim=6, max_len=8, dtype=torch.float64, seed=7)
    lm = TinyCausalLM(vocab.size, dim=6, max_len=9, dtype=torch.float64, seed=8)
    bundle = ModelBundle(vocab=vocab, classifier=clf, lm=lm, embedder=LMContextualEmbedder(lm))
    return bundle.freeze()
