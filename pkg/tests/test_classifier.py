import copy

import numpy as np
import pytest
import torch

import domainbridge.classifier as clf_mod
from domainbridge.classifier import (
    ClassifierConfig,
    ClassifierEmbedding,
    evaluate,
    load_classifier,
    predict,
    register_architecture,
    save_classifier,
    train_classifier,
)
from domainbridge.errors import DataError, LabelingError, SpecError
from domainbridge.manifest import DatasetManifest, RegimeLabel, Split


def test_config_invariants():
    with pytest.raises(SpecError):
        ClassifierConfig(epochs=0)
    with pytest.raises(SpecError):
        ClassifierConfig(learning_rate=0.0)
    with pytest.raises(SpecError):
        ClassifierConfig(learning_rate=-1e-3)


def test_config_roundtrip():
    config = ClassifierConfig(epochs=7, learning_rate=2e-4, input_size=32)
    assert ClassifierConfig.from_dict(config.to_dict()) == config


def test_best_epoch_selection_with_induced_series(tiny_split, monkeypatch):
    split_a, _ = tiny_split
    series = iter([0.7, 0.4, 0.5])
    snapshots = []

    def fake_validation(module, val_x, val_y):
        snapshots.append(copy.deepcopy(module.state_dict()))
        return next(series), 0.5

    monkeypatch.setattr(clf_mod, "_epoch_validation", fake_validation)
    config = ClassifierConfig(epochs=3, batch_size=8, seed=0, input_size=32)
    model, log = train_classifier(
        split_a.subset(Split.TRAIN), split_a.subset(Split.VAL), config
    )
    assert log.best_epoch == 2
    assert log.val_loss == [0.7, 0.4, 0.5]
    returned = model.module.state_dict()
    epoch2 = snapshots[1]
    assert all(torch.equal(returned[k], epoch2[k]) for k in returned)
    # And the returned snapshot differs from the final epoch's weights.
    epoch3 = snapshots[2]
    assert any(not torch.equal(returned[k], epoch3[k]) for k in returned)


def test_best_epoch_tie_goes_to_earliest(tiny_split, monkeypatch):
    split_a, _ = tiny_split
    series = iter([0.5, 0.5, 0.5])
    monkeypatch.setattr(
        clf_mod, "_epoch_validation", lambda m, x, y: (next(series), 0.5)
    )
    config = ClassifierConfig(epochs=3, batch_size=8, seed=0, input_size=32)
    _, log = train_classifier(
        split_a.subset(Split.TRAIN), split_a.subset(Split.VAL), config
    )
    assert log.best_epoch == 1


def test_single_class_training_rejected(tiny_split):
    split_a, _ = tiny_split
    train = split_a.subset(Split.TRAIN)
    chf_only = DatasetManifest(
        samples=[s for s in train.samples if s.label is RegimeLabel.CHF],
        domain_id=train.domain_id,
    )
    config = ClassifierConfig(epochs=1, input_size=32)
    with pytest.raises(DataError):
        train_classifier(chf_only, split_a.subset(Split.VAL), config)


def test_empty_val_rejected(tiny_split):
    split_a, _ = tiny_split
    empty = DatasetManifest(samples=[], domain_id=split_a.domain_id)
    config = ClassifierConfig(epochs=1, input_size=32)
    with pytest.raises(DataError):
        train_classifier(split_a.subset(Split.TRAIN), empty, config)


def test_training_is_deterministic(tiny_split):
    split_a, _ = tiny_split
    config = ClassifierConfig(epochs=2, batch_size=8, seed=11, input_size=32)
    model1, log1 = train_classifier(
        split_a.subset(Split.TRAIN), split_a.subset(Split.VAL), config
    )
    model2, log2 = train_classifier(
        split_a.subset(Split.TRAIN), split_a.subset(Split.VAL), config
    )
    assert log1.val_loss == log2.val_loss
    assert model1.weights_digest() == model2.weights_digest()


def test_predict_rows_sum_to_one(tiny_classifier, tiny_split):
    model, _ = tiny_classifier
    split_a, _ = tiny_split
    probs = predict(model, split_a.subset(Split.TEST))
    assert probs.shape[1] == 2
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_predict_deterministic(tiny_classifier, tiny_split):
    model, _ = tiny_classifier
    split_a, _ = tiny_split
    test = split_a.subset(Split.TEST)
    assert np.array_equal(predict(model, test), predict(model, test))


def test_predict_order_equivariant(tiny_classifier, tiny_split, rng):
    model, _ = tiny_classifier
    split_a, _ = tiny_split
    test = split_a.subset(Split.TEST)
    probs = predict(model, test)
    perm = rng.permutation(len(test))
    shuffled = DatasetManifest(
        samples=[test.samples[i] for i in perm], domain_id=test.domain_id
    )
    probs_shuffled = predict(model, shuffled)
    assert np.allclose(probs_shuffled, probs[perm], atol=1e-6)


def test_predict_empty_rejected(tiny_classifier):
    model, _ = tiny_classifier
    with pytest.raises(DataError):
        predict(model, DatasetManifest(samples=[], domain_id="x"))


def test_evaluate_learns_source_domain(tiny_classifier, tiny_split):
    model, log = tiny_classifier
    split_a, _ = tiny_split
    report = evaluate(model, split_a.subset(Split.TEST))
    assert report.balanced_accuracy >= 0.75  # easy task, tiny desk-scale splits
    assert log.best_epoch >= 1


def test_evaluate_shuffle_invariant(tiny_classifier, tiny_split, rng):
    model, _ = tiny_classifier
    split_a, _ = tiny_split
    test = split_a.subset(Split.TEST)
    report = evaluate(model, test)
    perm = rng.permutation(len(test))
    shuffled = DatasetManifest(
        samples=[test.samples[i] for i in perm], domain_id=test.domain_id
    )
    report_shuffled = evaluate(model, shuffled)
    assert report_shuffled.to_dict() == report.to_dict()


def test_evaluate_requires_labels(tiny_classifier, tiny_split):
    model, _ = tiny_classifier
    split_a, _ = tiny_split
    with pytest.raises(LabelingError):
        evaluate(model, split_a.subset(Split.TEST).without_labels())


def test_save_load_roundtrip(tiny_classifier, tiny_split, tmp_path):
    model, _ = tiny_classifier
    split_a, _ = tiny_split
    test = split_a.subset(Split.TEST)
    bundle = save_classifier(model, tmp_path / "bundle")
    assert (bundle / "weights.pt").exists()
    assert (bundle / "model.json").exists()
    loaded = load_classifier(bundle)
    assert loaded.architecture_id == model.architecture_id
    assert loaded.class_order == model.class_order
    assert loaded.training_fingerprint == model.training_fingerprint
    assert np.allclose(predict(loaded, test), predict(model, test), atol=1e-7)
    assert loaded.weights_digest() == model.weights_digest()


def test_unknown_architecture_rejected():
    with pytest.raises(SpecError):
        clf_mod._build_architecture("not_registered", 32)


def test_architecture_registry_extension(tiny_split):
    split_a, _ = tiny_split

    class TinyNet(torch.nn.Module):
        def __init__(self, input_size):
            super().__init__()
            self.hidden = torch.nn.Linear(input_size * input_size, 8)
            self.head = torch.nn.Linear(8, 2)

        def features(self, x):
            return torch.relu(self.hidden(x.flatten(1)))

        def forward(self, x):
            return self.head(self.features(x))

    register_architecture("tiny_net", TinyNet)
    config = ClassifierConfig(
        architecture_id="tiny_net", epochs=1, batch_size=8, input_size=32
    )
    model, _ = train_classifier(
        split_a.subset(Split.TRAIN), split_a.subset(Split.VAL), config
    )
    probs = predict(model, split_a.subset(Split.TEST))
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_embedding_extractor_shape(tiny_classifier, tiny_split):
    model, _ = tiny_classifier
    split_a, _ = tiny_split
    extractor = ClassifierEmbedding(model)
    emb = extractor.embed(split_a.subset(Split.TEST))
    assert emb.shape == (len(split_a.subset(Split.TEST)), extractor.embedding_dim)
    assert extractor.extractor_id == "classifier_penultimate"


def test_extractor_registry_entries():
    from domainbridge.classifier import InceptionEmbedding
    from domainbridge.errors import DomainBridgeError
    from domainbridge.metrics import EXTRACTOR_REGISTRY

    assert "classifier_penultimate" in EXTRACTOR_REGISTRY
    assert "inception_v3" in EXTRACTOR_REGISTRY
    # The optional extractor needs pretrained weights; without a local file or
    # network access it must fail with a package error, not something opaque.
    try:
        extractor = InceptionEmbedding()
    except DomainBridgeError:
        pass
    else:
        assert extractor.embedding_dim == 2048
