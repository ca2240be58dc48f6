import json

import numpy as np
import pytest
import torch

from domainbridge.errors import ConfigError, DataError, SpecError
from domainbridge.imgio import write_image
from domainbridge.manifest import (
    AccessAudit,
    DatasetManifest,
    DatasetMeta,
    ImageSample,
    RegimeLabel,
    Split,
    write_sidecar,
)
from domainbridge.ui2i import (
    CheckpointRecord,
    CondCycleBackend,
    Critic,
    DomainCode,
    LossWeights,
    UI2IConfig,
    checkpoint_filename,
    compute_losses,
    get_backend,
    list_checkpoints,
    plan_checkpoints,
    register_backend,
    train_ui2i,
    translate,
)
from domainbridge.ui2i.training import META_NAME

# ---------------------------------------------------------------- config


def test_config_checkpoint_divisibility():
    with pytest.raises(ConfigError):
        UI2IConfig(total_iterations=300, checkpoint_every=101)
    with pytest.raises(ConfigError):
        UI2IConfig(total_iterations=100, checkpoint_every=300)
    with pytest.raises(ConfigError):
        UI2IConfig(total_iterations=100, checkpoint_every=0)


def test_config_rejects_unalignable_input_size():
    with pytest.raises(ConfigError):
        UI2IConfig(total_iterations=100, checkpoint_every=100, input_size=65)
    with pytest.raises(ConfigError):
        UI2IConfig(total_iterations=100, checkpoint_every=100, input_size=4)


def test_loss_weights_invariants():
    with pytest.raises(SpecError):
        LossWeights(cycle=0.0)
    with pytest.raises(SpecError):
        LossWeights(identity=0.0)
    with pytest.raises(SpecError):
        LossWeights(adversarial=-1.0)


def test_checkpoint_plan_reference_run():
    config = UI2IConfig(total_iterations=300_000, checkpoint_every=10_000)
    plan = plan_checkpoints(config)
    assert len(plan) == 30
    assert plan[0] == 10_000
    assert plan[-1] == 300_000


def test_checkpoint_plan_desk_run():
    plan = plan_checkpoints(UI2IConfig(total_iterations=300, checkpoint_every=100))
    assert plan == [100, 200, 300]


def test_checkpoint_filename_padding():
    assert checkpoint_filename(10_000) == "ckpt_0010000.bin"


def test_config_json_roundtrip():
    config = UI2IConfig(
        total_iterations=200, checkpoint_every=50, base_channels=8, n_res_blocks=1,
        weights=LossWeights(cycle=5.0, identity=2.0),
    )
    assert UI2IConfig.from_dict(config.to_dict()) == config
    assert config.digest() == UI2IConfig.from_dict(config.to_dict()).digest()


# ---------------------------------------------------------------- losses


class IdentityGenerator(torch.nn.Module):
    def forward(self, x, to):
        return x


class OffsetGenerator(torch.nn.Module):
    """Adds a constant only for own-domain requests; used for exact MAE checks."""

    def __init__(self, offset):
        super().__init__()
        self.offset = offset

    def forward(self, x, to):
        return x + self.offset


def _tiny_critic(size=4, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    critic = Critic(input_size=size, base_channels=4).to(dtype)
    return critic


def test_identity_generator_zero_cycle_and_identity():
    torch.manual_seed(0)
    batch_src = torch.rand(2, 1, 8, 8)
    batch_tgt = torch.rand(2, 1, 8, 8)
    critic = Critic(input_size=8, base_channels=4)
    losses = compute_losses(IdentityGenerator(), critic, batch_src, batch_tgt, LossWeights())
    assert losses["cycle"].item() == 0.0
    assert losses["identity"].item() == 0.0


def test_offset_generator_identity_component():
    # 2x2 single-image batches, own-domain output shifted by +0.25 everywhere.
    batch_src = torch.full((1, 1, 2, 2), 0.25, dtype=torch.float64)
    batch_tgt = torch.full((1, 1, 2, 2), 0.5, dtype=torch.float64)
    generator = OffsetGenerator(0.25).double()

    fake_src_own = generator(batch_src, DomainCode.SOURCE)
    fake_tgt_own = generator(batch_tgt, DomainCode.TARGET)
    identity = (
        (fake_src_own - batch_src).abs().mean() + (fake_tgt_own - batch_tgt).abs().mean()
    ) / 2.0
    assert identity.item() == pytest.approx(0.25, abs=1e-12)

    critic = _tiny_critic(size=2)
    losses = compute_losses(generator, critic, batch_src, batch_tgt, LossWeights())
    assert losses["identity"].item() == pytest.approx(0.25, abs=1e-12)


def test_total_is_weighted_sum_on_frozen_batch():
    torch.manual_seed(3)
    batch_src = torch.rand(2, 1, 4, 4, dtype=torch.float64)
    batch_tgt = torch.rand(2, 1, 4, 4, dtype=torch.float64)
    generator = OffsetGenerator(0.1).double()
    critic = _tiny_critic(size=4, seed=1)
    weights = LossWeights(adversarial=1.5, domain=0.7, cycle=9.0, identity=4.0)
    losses = compute_losses(generator, critic, batch_src, batch_tgt, weights)
    hand_total = (
        1.5 * losses["adversarial"].item()
        + 0.7 * losses["domain_classification"].item()
        + 9.0 * losses["cycle"].item()
        + 4.0 * losses["identity"].item()
    )
    assert losses["total"].item() == pytest.approx(hand_total, abs=1e-7)


def test_empty_batch_rejected():
    critic = _tiny_critic()
    with pytest.raises(DataError):
        compute_losses(
            IdentityGenerator(), critic, torch.empty(0, 1, 4, 4), torch.rand(1, 1, 4, 4),
            LossWeights(),
        )


class PerturbationGenerator(torch.nn.Module):
    """g(x) = x + P with P a leaf parameter: the gradient of any loss with
    respect to P equals its gradient with respect to the generator output."""

    def __init__(self, shape, seed):
        super().__init__()
        torch.manual_seed(seed)
        self.perturbation = torch.nn.Parameter(torch.randn(shape, dtype=torch.float64) * 0.1)

    def forward(self, x, to):
        return x + self.perturbation


def test_gradient_matches_central_finite_differences():
    torch.manual_seed(7)
    shape = (1, 1, 4, 4)
    batch_src = torch.rand(*shape, dtype=torch.float64)
    batch_tgt = torch.rand(*shape, dtype=torch.float64)
    generator = PerturbationGenerator(shape, seed=11)
    critic = _tiny_critic(size=4, seed=2)
    weights = LossWeights(adversarial=1.0, domain=1.0, cycle=10.0, identity=10.0)

    def total_loss():
        return compute_losses(generator, critic, batch_src, batch_tgt, weights)["total"]

    loss = total_loss()
    loss.backward()
    analytic = generator.perturbation.grad.detach().clone().flatten()

    h = 1e-6
    numeric = torch.zeros_like(analytic)
    flat = generator.perturbation.data.view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + h
        up = total_loss().item()
        flat[i] = original - h
        down = total_loss().item()
        flat[i] = original
        numeric[i] = (up - down) / (2 * h)

    rel_error = (analytic - numeric).norm() / max(numeric.norm().item(), 1e-12)
    assert rel_error.item() < 1e-3


# ---------------------------------------------------------------- training loop


def _make_domain(tmp_path, name, n=6, size=8, seed=0, with_split=False):
    rng = np.random.default_rng(seed)
    directory = tmp_path / name
    directory.mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(n):
        path = directory / f"{name}_{i:03d}.png"
        write_image(path, rng.random((size, size)).astype(np.float32))
        samples.append(
            ImageSample(
                path=path,
                domain_id=name,
                label=RegimeLabel.CHF if i % 2 == 0 else RegimeLabel.PRE_CHF,
                frame_index=i,
                width=size,
                height=size,
                split=(Split.TRAIN if i < n - 2 else Split.VAL) if with_split else None,
            )
        )
    write_sidecar(directory, DatasetMeta(bit_depth=8, width=size, height=size))
    return DatasetManifest(samples=samples, domain_id=name)


def _desk_config(**overrides):
    base = dict(
        total_iterations=16,
        checkpoint_every=8,
        batch_size=2,
        critic_steps=2,
        seed=0,
        input_size=8,
        base_channels=4,
        n_res_blocks=1,
    )
    base.update(overrides)
    return UI2IConfig(**base)


def test_train_ui2i_checkpoint_contract(tmp_path):
    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9)
    config = _desk_config()
    records = train_ui2i(source, target, config, tmp_path / "ckpts")
    assert [r.iteration for r in records] == [8, 16]
    assert [r.path.name for r in records] == ["ckpt_0000008.bin", "ckpt_0000016.bin"]
    meta = json.loads((tmp_path / "ckpts" / META_NAME).read_text())
    assert meta["iteration"] == 16
    assert meta["backend_id"] == "cond_cycle"
    assert meta["iterations_saved"] == [8, 16]


def test_train_ui2i_empty_domain_rejected(tmp_path):
    source = _make_domain(tmp_path, "src")
    empty = DatasetManifest(samples=[], domain_id="tgt")
    with pytest.raises(DataError):
        train_ui2i(source, empty, _desk_config(), tmp_path / "ckpts")


def test_train_ui2i_uses_only_target_train_split(tmp_path, monkeypatch):
    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9, with_split=True)
    seen = {}
    import domainbridge.ui2i.training as training_mod

    original = training_mod.load_batch

    def spy(manifest, size, bit_depth=None):
        seen[manifest.domain_id] = len(list(manifest))
        return original(manifest, size, bit_depth)

    monkeypatch.setattr(training_mod, "load_batch", spy)
    train_ui2i(source, target, _desk_config(), tmp_path / "ckpts")
    assert seen["src"] == 6  # 100% of source
    assert seen["tgt"] == 4  # TRAIN split only


def test_train_ui2i_never_reads_labels(tmp_path):
    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9)
    audit_src, audit_tgt = AccessAudit(), AccessAudit()
    train_ui2i(
        audit_src.wrap(source), audit_tgt.wrap(target), _desk_config(),
        tmp_path / "ckpts",
    )
    assert audit_src.label_reads == 0
    assert audit_tgt.label_reads == 0
    assert audit_tgt.path_reads > 0  # pixels were read, labels were not


def test_train_ui2i_resume_after_interruption(tmp_path):
    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9)
    config = _desk_config(total_iterations=24, checkpoint_every=8)

    records_full = train_ui2i(source, target, config, tmp_path / "full")
    full_payload = torch.load(records_full[-1].path, weights_only=False)

    class FlakyBackend(CondCycleBackend):
        backend_id = "flaky"
        calls = 0

        def train_step(self, batch_src, batch_tgt, iteration):
            type(self).calls += 1
            if type(self).calls == 20:  # dies between checkpoints 16 and 24
                raise RuntimeError("simulated crash")
            return super().train_step(batch_src, batch_tgt, iteration)

    register_backend("flaky", FlakyBackend)
    flaky_config = _desk_config(
        total_iterations=24, checkpoint_every=8, backend_id="flaky"
    )
    with pytest.raises(RuntimeError):
        train_ui2i(source, target, flaky_config, tmp_path / "flaky")
    assert [r.iteration for r in list_checkpoints(tmp_path / "flaky")] == [8, 16]

    records_resumed = train_ui2i(source, target, flaky_config, tmp_path / "flaky")
    assert [r.iteration for r in records_resumed] == [8, 16, 24]

    # The resumed run restores RNG and optimizer state, so its final weights
    # match an uninterrupted run exactly.
    resumed_payload = torch.load(records_resumed[-1].path, weights_only=False)
    for key, tensor in full_payload["state"]["generator"].items():
        assert torch.equal(tensor, resumed_payload["state"]["generator"][key])


def test_train_ui2i_completed_run_is_noop(tmp_path):
    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9)
    config = _desk_config()
    records = train_ui2i(source, target, config, tmp_path / "ckpts")
    mtimes = {r.path: r.path.stat().st_mtime_ns for r in records}
    again = train_ui2i(source, target, config, tmp_path / "ckpts")
    assert [r.iteration for r in again] == [r.iteration for r in records]
    assert {r.path: r.path.stat().st_mtime_ns for r in again} == mtimes


# ---------------------------------------------------------------- translate


def test_translate_empty_manifest(tmp_path):
    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9)
    records = train_ui2i(source, target, _desk_config(), tmp_path / "ckpts")
    empty = DatasetManifest(samples=[], domain_id="tgt")
    out = translate(records[-1], empty, DomainCode.SOURCE, tmp_path / "out")
    assert len(out) == 0


def test_translate_deterministic_and_order_preserving(tmp_path):
    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9)
    records = train_ui2i(source, target, _desk_config(), tmp_path / "ckpts")
    out1 = translate(records[-1], target, DomainCode.SOURCE, tmp_path / "o1")
    out2 = translate(records[-1], target, DomainCode.SOURCE, tmp_path / "o2")
    assert len(out1) == len(target)
    assert [s.frame_index for s in out1.samples] == list(range(len(target)))
    for s1, s2 in zip(out1.samples, out2.samples):
        assert s1.path.read_bytes() == s2.path.read_bytes()
    for s in out1.samples:
        assert s.label is None


def test_translate_missing_checkpoint(tmp_path):
    record = CheckpointRecord(
        iteration=1, path=tmp_path / "ckpt_0000001.bin", backend_id="cond_cycle",
        order_index=0,
    )
    target = _make_domain(tmp_path, "tgt")
    with pytest.raises(FileNotFoundError):
        translate(record, target, DomainCode.SOURCE, tmp_path / "out")


def test_translate_outputs_in_unit_interval(tmp_path):
    from domainbridge.imgio import read_image

    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9)
    records = train_ui2i(source, target, _desk_config(), tmp_path / "ckpts")
    out = translate(records[0], target, DomainCode.SOURCE, tmp_path / "out")
    for s in out.samples:
        img = read_image(s.path)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert img.shape == (8, 8)


# ---------------------------------------------------------------- backends


def test_twin_backend_trains_and_translates(tmp_path):
    source = _make_domain(tmp_path, "src")
    target = _make_domain(tmp_path, "tgt", seed=9)
    config = _desk_config(backend_id="twin_cycle")
    records = train_ui2i(source, target, config, tmp_path / "twin")
    assert [r.iteration for r in records] == [8, 16]
    assert records[0].backend_id == "twin_cycle"
    out = translate(records[-1], target, DomainCode.SOURCE, tmp_path / "out")
    assert len(out) == len(target)


def test_unknown_backend_rejected():
    with pytest.raises(KeyError):
        get_backend("not_a_backend")


def test_registered_custom_backend_is_usable(tmp_path):
    class EchoBackend:
        backend_id = "echo"
        input_size = 8

        @classmethod
        def load(cls, path):
            if not path.exists():
                raise FileNotFoundError(path)
            return cls()

        def translate(self, images01, to):
            return images01

    register_backend("echo", EchoBackend)
    target = _make_domain(tmp_path, "tgt")
    ckpt_file = tmp_path / "ckpt_0000001.bin"
    ckpt_file.write_bytes(b"echo")
    record = CheckpointRecord(iteration=1, path=ckpt_file, backend_id="echo", order_index=0)
    out = translate(record, target, DomainCode.SOURCE, tmp_path / "echo_out")
    from domainbridge.imgio import read_image

    for orig, echoed in zip(target.samples, out.samples):
        assert np.allclose(read_image(orig.path), read_image(echoed.path), atol=1e-9)
