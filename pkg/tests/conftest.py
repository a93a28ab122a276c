"""Shared fixtures.

The expensive session fixtures (the 500-document corpus and the trained
scorer) exist for the acceptance tests; everything else trains throwaway
models small enough to not matter.
"""

import pytest

from scoredeck.model import ModelConfig, NeuralScorer, SplitDataset, train
from scoredeck.pipeline import corpus_vocab, encode_examples, train_split
from scoredeck.synth import GeneratorConfig, gen_corpus


@pytest.fixture(scope="session")
def default_corpus():
    """The seed-0 desk-scale corpus every corpus-level claim is checked on."""
    return gen_corpus(GeneratorConfig())


@pytest.fixture(scope="session")
def default_split(default_corpus):
    examples = [s.example for s in default_corpus]
    vocab, dataset = train_split(examples, val_fraction=0.2, seed=0)
    return vocab, dataset


@pytest.fixture(scope="session")
def scorer_config():
    return ModelConfig(
        b=32, e=24, d=8, r=0.1, l=0.005, epochs=40, batch_size=8, pooling="attention"
    )


@pytest.fixture(scope="session")
def trained_net(default_split, scorer_config):
    """The reference trained scorer (seed 0); takes about a minute."""
    vocab, dataset = default_split
    net = NeuralScorer.build(scorer_config, vocab, dataset.train, seed=0)
    net, _ = train(net, dataset, seed=0)
    return net


@pytest.fixture(scope="session")
def tiny_corpus():
    """40 short documents; enough structure for plumbing tests."""
    return gen_corpus(
        GeneratorConfig(n_docs=40, doc_len=(60, 120), n_neutral=400, seed=3)
    )


@pytest.fixture(scope="session")
def tiny_net(tiny_corpus):
    """A briefly-trained scorer over the tiny corpus (a few seconds)."""
    examples = [s.example for s in tiny_corpus]
    vocab = corpus_vocab(examples)
    encoded = encode_examples(examples, vocab)
    cfg = ModelConfig(
        b=8, e=8, d=8, r=0.0, l=0.01, epochs=3, batch_size=16, pooling="attention"
    )
    net = NeuralScorer.build(cfg, vocab, encoded, seed=1)
    net, _ = train(net, SplitDataset(train=encoded, val=[]), seed=1)
    return net
