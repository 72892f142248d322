"""Shared fixtures: a small corpus and a model fine-tuned on it.

Session scope keeps the expensive pieces (fine-tuning mostly) to one
build per test run; tests must treat these objects as read-only.
"""

import pytest

from unlearnkit.data import generate_corpus
from unlearnkit.harness import ExperimentConfig, finetune


@pytest.fixture(scope="session")
def tiny_corpus():
    """10 trained authors x 2 QAs: 2 forget, 18 retain, 4 holdout examples."""
    return generate_corpus(seed=5, n_authors=10, qa_per_author=2,
                           forget_ratio=0.1, n_perturbed=3)


@pytest.fixture(scope="session")
def tiny_config():
    return ExperimentConfig(n_authors=10, qa_per_author=2, n_perturbed=3,
                            seed=5, hidden_dim=48)


@pytest.fixture(scope="session")
def memorized(tiny_config, tiny_corpus):
    """A model fine-tuned to mean training NLL below the stop threshold."""
    model, history = finetune(tiny_config, tiny_corpus)
    return model, history
