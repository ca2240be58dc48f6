import numpy as np
import pytest
import torch

from domainbridge.classifier import ClassifierConfig, train_classifier
from domainbridge.datakit import split
from domainbridge.manifest import Split, SplitSpec
from domainbridge.synthgen import SynthConfig, generate_domain_pair

torch.set_num_threads(1)


TINY_SIZE = 32


@pytest.fixture(scope="session")
def tiny_synth(tmp_path_factory):
    """Small two-domain dataset shared across unit tests: 20/class/domain at 32x32."""
    out = tmp_path_factory.mktemp("tiny_synth")
    config = SynthConfig(image_size=TINY_SIZE, n_per_class_per_domain=20, seed=3)
    manifest_a, manifest_b = generate_domain_pair(config, out)
    return config, manifest_a, manifest_b, out


@pytest.fixture(scope="session")
def tiny_split(tiny_synth):
    _, manifest_a, manifest_b, _ = tiny_synth
    split_a = split(manifest_a, SplitSpec(fractions=(0.7, 0.15, 0.15), seed=0, stratified=True))
    split_b = split(manifest_b, SplitSpec(fractions=(0.7, 0.15, 0.15), seed=0, stratified=True))
    return split_a, split_b


@pytest.fixture(scope="session")
def tiny_classifier(tiny_split):
    """Classifier trained on the tiny domain-A set; good enough for plumbing tests."""
    split_a, _ = tiny_split
    config = ClassifierConfig(epochs=6, batch_size=8, seed=0, input_size=TINY_SIZE)
    model, log = train_classifier(
        split_a.subset(Split.TRAIN), split_a.subset(Split.VAL), config
    )
    return model, log


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
