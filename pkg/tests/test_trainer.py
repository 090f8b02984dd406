"""
Test entropy model training

Fast checks cover configuration, batching, checkpoints and resume. The
trend checks at the bottom train for a few hundred steps and are marked
slow (set NLLC_RUN_SLOW=1 to run them).
"""

import csv
import math

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from conftest import make_natural_image
from src.entropy import load_weights, weights_fingerprint
from src.errors import TrainingDivergedError, WeightsFormatError
from src.imaging import save_image
from src.learning import (
    METRICS_HEADER,
    Checkpoint,
    PatchDataset,
    TrainConfig,
    Trainer,
    evaluate_residual_bpsp,
    moment_matched_baseline_bits,
    train,
)
from src.lossy import BlockDCTCodec
from src.orchestration import InstrumentMode, estimate_residual_bits


def _dataset(patch_size=8, count=3, size=24):
    images = [make_natural_image(size, size + 4, seed=100 + i) for i in range(count)]
    return PatchDataset(images, patch_size)


def _config(**overrides) -> TrainConfig:
    fields = dict(patch_size=8, batch_size=2, steps=4, seed=3, dtype="float64", log_every=1)
    fields.update(overrides)
    return TrainConfig(**fields)


# ---------------------------------------------------------------- configuration


@pytest.mark.parametrize("overrides", [
    {"taus": []},
    {"taus": [0, 1]},
    {"taus": [6]},
    {"dtype": "float16"},
    {"scale_range": (0.5, 1.0)},
    {"scale_range": (0.9, 0.8)},
    {"batch_size": 0},
    {"learning_rate": -1e-3},
    {"bias_phase_fraction": 1.0},
])
def test_config_validation(overrides):
    with pytest.raises(ValidationError):
        _config(**overrides)


def test_config_hash_ignores_bookkeeping():
    base = _config()
    assert base.config_hash() == _config(steps=99, log_every=7, checkpoint_every=2).config_hash()
    assert base.config_hash() != _config(seed=4).config_hash()
    assert base.config_hash() != _config(taus=[1, 2]).config_hash()


def test_effective_scale_range():
    assert _config().effective_scale_range == (0.6, 1.0)
    assert _config(augment=False).effective_scale_range == (1.0, 1.0)


def test_learning_rate_schedule():
    trainer = Trainer(_config(steps=8, learning_rate=1e-3), _dataset())
    assert trainer.learning_rate(0) == pytest.approx(1e-3)
    assert trainer.learning_rate(6) == pytest.approx(1e-3)
    assert trainer.learning_rate(7) == pytest.approx(1e-4)


def test_bias_phase_start():
    dataset = _dataset()
    assert Trainer(_config(steps=8), dataset).bias_phase_start == 6
    assert Trainer(_config(steps=8, bias_phase_fraction=0.0), dataset).bias_phase_start == 8
    assert not Trainer(_config(steps=8), dataset).in_bias_phase(5)
    assert Trainer(_config(steps=8), dataset).in_bias_phase(6)


# ---------------------------------------------------------------- data


def test_dataset_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        PatchDataset([], 8)
    with pytest.raises(ValueError):
        PatchDataset([make_natural_image(4, 4)], 8)
    with pytest.raises(ValueError):
        PatchDataset.from_directory(tmp_path, 8)


def test_dataset_skips_small_images():
    dataset = PatchDataset([make_natural_image(4, 4), make_natural_image(16, 16)], 8)
    assert len(dataset) == 1


def test_dataset_from_directory(tmp_path):
    for i in range(2):
        save_image(make_natural_image(12, 12, seed=i), tmp_path / f"img{i}.ppm")
    dataset = PatchDataset.from_directory(tmp_path, 8)
    assert len(dataset) == 2


def test_batches_are_deterministic():
    trainer = Trainer(_config(), _dataset())
    a = trainer.make_batch(3)
    b = trainer.make_batch(3)
    c = trainer.make_batch(4)
    assert torch.equal(a.residuals, b.residuals)
    assert torch.equal(a.tau, b.tau)
    assert not torch.equal(a.x_tilde, c.x_tilde)


def test_batch_contents():
    trainer = Trainer(_config(batch_size=4, taus=[2, 5]), _dataset())
    batch = trainer.make_batch(0)
    assert batch.x_tilde.shape == (4, 3, 8, 8)
    assert set(batch.tau.tolist()) <= {2, 5}
    for i in range(4):
        tau = int(batch.tau[i])
        assert float((batch.residuals[i] - batch.quantized[i]).abs().max()) <= tau
        assert bool((torch.remainder(batch.quantized[i], 2 * tau + 1) == 0).all())


# ---------------------------------------------------------------- training


def test_overfitting_one_patch_reduces_moving_average():
    config = _config(batch_size=1, learning_rate=1e-3, steps=200, bias_phase_fraction=0.0)
    trainer = Trainer(config, _dataset())
    batch = trainer.make_batch(0)
    losses = [trainer.train_step(batch, step).main_bits for step in range(200)]
    assert all(math.isfinite(m.bias_bits) for m in trainer.history)
    window_means = [float(np.mean(losses[k:k + 50])) for k in range(0, 200, 50)]
    assert all(a > b for a, b in zip(window_means, window_means[1:])), window_means


def test_zero_learning_rate_keeps_weights():
    trainer = Trainer(_config(learning_rate=0.0), _dataset())
    before = weights_fingerprint(trainer.model)
    for step in range(2):
        trainer.train_step(trainer.make_batch(step), step)
    assert weights_fingerprint(trainer.model) == before


def _state(module):
    return {k: v.clone() for k, v in module.state_dict().items()}


def test_bias_phase_reseeds_conditional_estimator():
    trainer = Trainer(_config(steps=8, learning_rate=1e-2), _dataset())
    trainer.run(stop_at=trainer.bias_phase_start)
    trainer.begin_bias_phase(trainer.bias_phase_start)

    model = trainer.model
    batch = trainer.make_batch(0)
    with torch.no_grad():
        u = model.extract_feature(batch.x_tilde)
        ctx = model.extract_context(batch.quantized)
        plain = model.estimate_params(u, ctx)
        for tau in range(1, 6):
            cond = model.estimate_params(u, ctx, condition=tau)
            assert torch.equal(cond.means, plain.means)
            assert torch.equal(cond.scales, plain.scales)
    conditional = set(model.conditional_estimator.parameters())
    assert not conditional & set(trainer.optimizer.state)


def test_bias_phase_only_moves_conditional_estimator():
    trainer = Trainer(_config(steps=8, learning_rate=1e-2), _dataset())
    trainer.run(stop_at=trainer.bias_phase_start)
    model = trainer.model
    frozen = {
        name: _state(getattr(model, name))
        for name in ("feature_extractor", "context_conv", "plain_estimator")
    }
    trainer.run()
    for name, before in frozen.items():
        after = getattr(model, name).state_dict()
        for key, tensor in before.items():
            assert torch.equal(after[key], tensor), f"{name}.{key}"
    plain = model.plain_estimator.state_dict()
    moved = model.conditional_estimator.state_dict()
    assert any(not torch.equal(moved[k], plain[k]) for k in plain)


def test_training_keeps_mask():
    trainer = Trainer(_config(learning_rate=1e-2), _dataset())
    trainer.run()
    w = trainer.model.context_conv.weight
    assert bool((w[:, :, 2, 2:] == 0).all())
    assert bool((w[:, :, 3:] == 0).all())


def test_training_is_deterministic():
    a = Trainer(_config(), _dataset()).run()
    b = Trainer(_config(), _dataset()).run()
    assert weights_fingerprint(a.model) == weights_fingerprint(b.model)


def test_resume_matches_uninterrupted_run(tmp_path):
    full = Trainer(_config(), _dataset()).run()

    first = Trainer(_config(), _dataset())
    first.run(stop_at=2, checkpoint_path=tmp_path / "half.nllt")
    restored = Checkpoint.load(tmp_path / "half.nllt")
    assert restored.step == 2

    second = Trainer(_config(), _dataset())
    second.resume(restored)
    resumed = second.run()
    assert resumed.step == full.step == 4
    assert weights_fingerprint(resumed.model) == weights_fingerprint(full.model)


def test_resume_rejects_other_config():
    checkpoint = Trainer(_config(), _dataset()).run(stop_at=1)
    with pytest.raises(ValueError):
        Trainer(_config(seed=9), _dataset()).resume(checkpoint)


def test_divergence_is_reported(monkeypatch):
    trainer = Trainer(_config(), _dataset())
    monkeypatch.setattr(
        trainer.model, "main_loss",
        lambda batch: torch.tensor(float("nan"), dtype=torch.float64, requires_grad=True),
    )
    with pytest.raises(TrainingDivergedError):
        trainer.train_step(trainer.make_batch(0), 0)


def test_metrics_csv_and_checkpoint(tmp_path):
    csv_path = tmp_path / "metrics.csv"
    ckpt_path = tmp_path / "run.nllt"
    train(_config(steps=3), dataset=_dataset(), metrics_csv=csv_path, checkpoint_path=ckpt_path)
    with csv_path.open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == METRICS_HEADER
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]

    checkpoint = Checkpoint.load(ckpt_path)
    assert checkpoint.step == 3
    assert checkpoint.config["seed"] == 3
    model = load_weights(ckpt_path)
    assert weights_fingerprint(model) == weights_fingerprint(checkpoint.model)


def test_train_resume_appends_csv(tmp_path):
    csv_path = tmp_path / "metrics.csv"
    ckpt_path = tmp_path / "run.nllt"
    Trainer(_config(), _dataset()).run(metrics_csv=csv_path, checkpoint_path=ckpt_path, stop_at=2)
    train(_config(), resume_from=ckpt_path, dataset=_dataset(), metrics_csv=csv_path)
    with csv_path.open() as f:
        rows = list(csv.reader(f))
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2, 3]


def test_train_needs_a_dataset():
    with pytest.raises(ValueError):
        train(_config())


def test_checkpoint_rejects_garbage():
    with pytest.raises(WeightsFormatError):
        Checkpoint.from_bytes(b"NLLW\x01")
    good = Trainer(_config(), _dataset()).run(stop_at=0).to_bytes()
    with pytest.raises(WeightsFormatError):
        Checkpoint.from_bytes(good + b"\x00")


# ---------------------------------------------------------------- evaluation


def test_baseline_bits():
    assert moment_matched_baseline_bits(np.zeros((4, 4, 3), dtype=np.int64)) == pytest.approx(0.0, abs=1e-6)
    rng = np.random.default_rng(5)
    r = np.clip(np.rint(rng.laplace(0, 3, size=5000)), -255, 255).astype(np.int64)
    counts = np.bincount(r + 255)
    p = counts[counts > 0] / r.size
    empirical = float(-(counts[counts > 0] * np.log2(p)).sum())
    assert moment_matched_baseline_bits(r) >= empirical


def test_evaluate_residual_bpsp(small_model):
    images = [make_natural_image(8, 8, seed=i) for i in range(2)]
    model_rate, baseline_rate = evaluate_residual_bpsp(small_model, images)
    assert math.isfinite(model_rate) and model_rate > 0
    assert math.isfinite(baseline_rate) and baseline_rate > 0


# ---------------------------------------------------------------- trends (slow)


@pytest.fixture(scope="module")
def trained():
    images = [make_natural_image(48, 48, seed=200 + i) for i in range(6)]
    config = TrainConfig(patch_size=16, batch_size=8, steps=600, learning_rate=1e-3, seed=0)
    checkpoint = Trainer(config, PatchDataset(images, 16)).run()
    held_out = [make_natural_image(32, 32, seed=300 + i) for i in range(4)]
    return checkpoint.model, held_out


def _rate(model, images, tau, mode):
    lossy = BlockDCTCodec()
    total = sum(
        estimate_residual_bits(model, img, lossy.reconstruct(img), tau, mode) for img in images
    )
    return total / sum(img.num_subpixels for img in images)


@pytest.mark.slow
def test_trained_model_beats_baseline(trained):
    model, held_out = trained
    model_rate, baseline_rate = evaluate_residual_bpsp(model, held_out)
    assert model_rate < baseline_rate


@pytest.mark.slow
def test_rate_falls_with_tau(trained):
    model, held_out = trained
    rates = [_rate(model, held_out, tau, InstrumentMode.BIASED) for tau in range(6)]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    assert rates[1] <= 0.75 * rates[0]


@pytest.mark.slow
def test_bias_correction_closes_the_gap(trained):
    model, held_out = trained
    for tau in range(1, 6):
        ideal = _rate(model, held_out, tau, InstrumentMode.IDEAL)
        corrected = _rate(model, held_out, tau, InstrumentMode.CORRECTED)
        uncorrected = _rate(model, held_out, tau, InstrumentMode.BIASED)
        assert ideal <= corrected <= uncorrected, (tau, ideal, corrected, uncorrected)
        if tau >= 2:
            assert corrected < uncorrected, tau
