import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from weaktag import documents, labeling, synth, training

TOY_SPEC = synth.SynthSpec(
    n_documents=40,
    tokens_min=10,
    tokens_max=16,
    n_classes=2,
    n_lfs=3,
    coverage_min=0.10,
    coverage_max=0.20,
    precision_min=0.80,
    precision_max=0.90,
    noise_rate=0.05,
    vocab_size=50,
    seed=7,
)


@pytest.fixture(scope="session")
def toy_setup():
    """Small end-to-end bundle: corpus, suite, matrix, split, training data."""
    params = labeling.ContextParams()
    corpus, lfs = synth.generate(TOY_SPEC, params)
    matrix = labeling.build_label_matrix(lfs, corpus, params)
    split = documents.split_corpus(corpus, 0.2, 0.15, 0.15, seed=3)
    data = training.build_training_data(corpus, matrix, split, params, hash_bits=10)
    return corpus, lfs, matrix, split, data
