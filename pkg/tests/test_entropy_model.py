"""
Test the residual entropy model

Covers the mixture math, causal masking, the conditional estimator,
explicit gradients, the per-pixel evaluator and the weights file format.
"""

import numpy as np
import pytest
import torch

import src.entropy.residual_model as residual_model
from src.entropy import (
    SIGMA_MIN,
    LossSelection,
    MixtureParams,
    ResidualEntropyModel,
    TrainingInputs,
    autoregress_means,
    discrete_pmf,
    discrete_pmf_mass,
    image_tensor,
    load_weights,
    log_pmf_table,
    save_weights,
    weights_fingerprint,
    weights_from_bytes,
    weights_to_bytes,
)
from src.errors import WeightsFormatError
from src.evaluation import gradient_case, gradient_errors
from src.quantization import quantize_residual


def _batch(height=6, width=7, batch=2, seed=0, spread=12):
    rng = np.random.default_rng(seed)
    x_tilde = rng.integers(0, 256, size=(batch, height, width, 3))
    r = rng.integers(-spread, spread + 1, size=(batch, height, width, 3))
    return image_tensor(x_tilde), image_tensor(r)


# ---------------------------------------------------------------- mixture math


def test_autoregress_formula():
    rng = np.random.default_rng(1)
    p = MixtureParams(
        log_weights=np.zeros((3, 5)),
        means=rng.normal(size=(3, 5)),
        scales=np.ones((3, 5)),
        coeffs=np.array([0.5, -0.25, 2.0]),
    )
    q = autoregress_means(p, np.asarray(4.0), np.asarray(-2.0))
    np.testing.assert_allclose(q.means[0], p.means[0])
    np.testing.assert_allclose(q.means[1], p.means[1] + 0.5 * 4.0)
    np.testing.assert_allclose(q.means[2], p.means[2] - 0.25 * 4.0 + 2.0 * -2.0)


@pytest.mark.parametrize("mean,scale", [(0.0, 1.0), (3.7, 0.01), (250.0, 40.0), (-900.0, 2.0), (0.5, SIGMA_MIN)])
def test_pmf_normalized(mean, scale):
    weights = np.array([0.1, 0.2, 0.3, 0.25, 0.15])
    means = mean + np.linspace(-2, 2, 5)
    scales = np.full(5, scale)
    pmf = discrete_pmf(means, scales, weights)
    assert len(pmf) == 511
    assert np.all(pmf.mass >= 0)
    assert pmf.is_normalized()


def test_single_logistic_mass_at_zero():
    pmf = discrete_pmf(np.zeros(1), np.ones(1), np.ones(1))
    expected = 1.0 / (1.0 + np.exp(-0.5)) - 1.0 / (1.0 + np.exp(0.5))
    assert pmf.mass[255] == pytest.approx(expected, abs=1e-12)
    assert pmf.mass[255] == pytest.approx(0.244919, abs=1e-6)


@pytest.mark.parametrize("scale", [0.3, 1.0, 7.5, 120.0])
def test_centred_mixture_is_symmetric(scale):
    means = np.array([-3.0, 0.0, 3.0])
    weights = np.array([0.25, 0.5, 0.25])
    mass = discrete_pmf(means, np.full(3, scale), weights).mass
    np.testing.assert_allclose(mass, mass[::-1], rtol=1e-10, atol=1e-300)


def test_numpy_matches_torch_table():
    rng = np.random.default_rng(2)
    means = rng.normal(0, 20, size=(4, 5))
    scales = rng.uniform(0.05, 8.0, size=(4, 5))
    logits = rng.normal(size=(4, 5))
    log_w = logits - np.logaddexp.reduce(logits, axis=-1, keepdims=True)
    table = log_pmf_table(
        torch.from_numpy(log_w), torch.from_numpy(means), torch.from_numpy(scales)
    ).exp().numpy()
    for i in range(4):
        mass = discrete_pmf_mass(means[i], scales[i], np.exp(log_w[i]))
        np.testing.assert_allclose(mass, table[i], rtol=0, atol=1e-12)


# ---------------------------------------------------------------- model structure


def test_estimator_outputs_on_simplex(small_model):
    x_tilde, r = _batch()
    with torch.no_grad():
        u = small_model.extract_feature(x_tilde)
        ctx = small_model.extract_context(r)
        params = small_model.estimate_params(u, ctx)
    assert params.means.shape == (2, 6, 7, 3, 5)
    assert params.coeffs.shape == (2, 6, 7, 3)
    torch.testing.assert_close(params.weights.sum(-1), torch.ones(2, 6, 7, 3, dtype=torch.float64))
    assert bool((params.scales >= SIGMA_MIN).all())


def test_context_is_causal(small_model):
    _, r = _batch(height=8, width=8, batch=1, seed=3)
    with torch.no_grad():
        base = small_model.extract_context(r)
        for row, col in [(0, 0), (3, 4), (7, 7), (5, 0)]:
            changed = r.clone()
            changed[0, :, row, col] += 50
            out = small_model.extract_context(changed)
            diff = (out - base).abs().amax(dim=1)[0]
            for i in range(8):
                for j in range(8):
                    if (i, j) <= (row, col):
                        assert diff[i, j] <= 1e-12, f"context at {(i, j)} saw pixel {(row, col)}"
            if (row, col) != (7, 7):
                assert diff.max() > 0


def test_mask_survives_weight_updates():
    torch.manual_seed(4)
    model = ResidualEntropyModel().to(torch.float64)
    with torch.no_grad():
        model.context_conv.weight.add_(1.0)
    model.apply_mask_()
    w = model.context_conv.weight
    assert bool((w[:, :, 2, 2:] == 0).all())
    assert bool((w[:, :, 3:] == 0).all())


def test_conditional_starts_as_identity(small_model):
    x_tilde, r = _batch(seed=5)
    with torch.no_grad():
        u = small_model.extract_feature(x_tilde)
        ctx = small_model.extract_context(r)
        plain = small_model.estimate_params(u, ctx)
        for tau in range(1, 6):
            cond = small_model.estimate_params(u, ctx, condition=tau)
            torch.testing.assert_close(cond.means, plain.means)
            torch.testing.assert_close(cond.scales, plain.scales)
            torch.testing.assert_close(cond.log_weights, plain.log_weights)
            torch.testing.assert_close(cond.coeffs, plain.coeffs)


def test_reset_conditional_copies_trained_plain_estimator():
    torch.manual_seed(17)
    model = ResidualEntropyModel().to(torch.float64)
    with torch.no_grad():
        for p in model.plain_estimator.parameters():
            p.add_(0.1 * torch.randn_like(p))
        model.conditional_estimator.mod2.scale.mul_(1.5)
        model.conditional_estimator.mod_mu.shift.add_(2.0)
    model.reset_conditional()
    x_tilde, r = _batch(seed=18)
    with torch.no_grad():
        u = model.extract_feature(x_tilde)
        ctx = model.extract_context(r)
        plain = model.estimate_params(u, ctx)
        for tau in range(1, 6):
            cond = model.estimate_params(u, ctx, condition=tau)
            assert torch.equal(cond.means, plain.means)
            assert torch.equal(cond.scales, plain.scales)
            assert torch.equal(cond.log_weights, plain.log_weights)
            assert torch.equal(cond.coeffs, plain.coeffs)


@pytest.mark.parametrize("condition", [0, 6, -1])
def test_invalid_condition(small_model, condition):
    x_tilde, r = _batch()
    with torch.no_grad():
        u = small_model.extract_feature(x_tilde)
        ctx = small_model.extract_context(r)
        with pytest.raises(ValueError):
            small_model.estimate_params(u, ctx, condition=condition)


def test_residual_out_of_range(small_model):
    x_tilde, r = _batch()
    r[0, 1, 2, 3] = 256
    with torch.no_grad():
        u = small_model.extract_feature(x_tilde)
        with pytest.raises(ValueError):
            small_model.nll_bits(r, u, small_model.extract_context(r))


def test_nll_bits_positive_and_finite(small_model):
    x_tilde, r = _batch(seed=6)
    with torch.no_grad():
        u = small_model.extract_feature(x_tilde)
        bits = small_model.nll_bits(r, u, small_model.extract_context(r))
    assert bits.shape == (2,)
    assert bool(torch.isfinite(bits).all())
    assert bool((bits > 0).all())


def _naive_conv(x, weight, bias):
    """Direct same-padded convolution, x (C, H, W) and weight (O, C, k, k)"""
    k = weight.shape[-1]
    pad = k // 2
    _, height, width = x.shape
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.empty((weight.shape[0], height, width))
    for i in range(height):
        for j in range(width):
            out[:, i, j] = np.tensordot(weight, padded[:, i:i + k, j:j + k], axes=3) + bias
    return out


def test_feature_extractor_matches_naive_convolution(small_model):
    rng = np.random.default_rng(11)
    x = rng.integers(0, 256, size=(1, 8, 8, 3))
    with torch.no_grad():
        u = small_model.extract_feature(image_tensor(x))[0].numpy()
    fe = small_model.feature_extractor
    h = x[0].transpose(2, 0, 1) / 127.5 - 1.0
    h = np.logaddexp(0.0, _naive_conv(h, fe.conv1.weight.detach().numpy(), fe.conv1.bias.detach().numpy()))
    expected = _naive_conv(h, fe.conv2.weight.detach().numpy(), fe.conv2.bias.detach().numpy())
    np.testing.assert_allclose(u, expected, rtol=0, atol=1e-5)


def test_feature_extractor_with_zero_weights():
    model = ResidualEntropyModel().to(torch.float64)
    with torch.no_grad():
        for p in model.feature_extractor.parameters():
            p.zero_()
    x_tilde, _ = _batch(seed=12)
    with torch.no_grad():
        u = model.extract_feature(x_tilde)
    assert bool((u == 0).all())


def test_zero_trunk_gives_uniform_weights():
    model = ResidualEntropyModel().to(torch.float64)
    with torch.no_grad():
        for p in model.plain_estimator.parameters():
            p.zero_()
    x_tilde, r = _batch(seed=13)
    with torch.no_grad():
        params = model.estimate_params(model.extract_feature(x_tilde), model.extract_context(r))
    torch.testing.assert_close(params.weights, torch.full_like(params.weights, 1.0 / 5))
    sigma = float(np.log(2.0)) + SIGMA_MIN
    torch.testing.assert_close(params.scales, torch.full_like(params.scales, sigma))
    assert bool((params.means == 0).all())
    assert bool((params.coeffs == 0).all())


def test_uniform_likelihood_bits(small_model, monkeypatch):
    def uniform(x, log_weights, means, scales):
        return torch.full(x.shape, -np.log(511.0), dtype=means.dtype)

    monkeypatch.setattr(residual_model, "log_likelihood", uniform)
    x_tilde, r = _batch(height=4, width=6, batch=2, seed=14)
    with torch.no_grad():
        bits = small_model.nll_bits(r, small_model.extract_feature(x_tilde), small_model.extract_context(r))
    expected = 4 * 6 * 3 * np.log2(511.0)
    torch.testing.assert_close(bits, torch.full((2,), expected, dtype=torch.float64))


def _chain_rule_bits(params, r, channel_context):
    """-log2 p(r1) p(r2 | r1) p(r3 | r1, r2) for one pixel, with numpy masses"""
    means = params.means[0, 0, 0].numpy()
    scales = params.scales[0, 0, 0].numpy()
    weights = params.weights[0, 0, 0].numpy()
    b = params.coeffs[0, 0, 0].numpy()
    c1, c2 = channel_context[0], channel_context[1]
    shifted = [means[0], means[1] + b[0] * c1, means[2] + b[1] * c1 + b[2] * c2]
    bits = 0.0
    for c in range(3):
        mass = discrete_pmf_mass(shifted[c], scales[c], weights[c])
        bits -= np.log2(mass[int(r[c]) + 255])
    return bits


def test_single_pixel_bits_follow_chain_rule(small_model):
    x_tilde = image_tensor(np.array([[[[90, 140, 30]]]]))
    r = image_tensor(np.array([[[[5, -3, 11]]]]))
    with torch.no_grad():
        u = small_model.extract_feature(x_tilde)
        ctx = small_model.extract_context(r)
        bits = float(small_model.nll_bits(r, u, ctx)[0])
        params = small_model.estimate_params(u, ctx)
    assert bits == pytest.approx(_chain_rule_bits(params, [5, -3, 11], [5, -3]), rel=1e-9)


def test_bias_loss_vanishes_for_matched_contexts(small_model):
    x_tilde, _ = _batch(seed=15)
    r = torch.zeros_like(x_tilde)
    with torch.no_grad():
        u = small_model.extract_feature(x_tilde)
        for tau in range(1, 6):
            loss = small_model.bias_correction_loss(r, r.clone(), u, tau)
            assert bool((loss.abs() <= 1e-9).all()), tau


def test_bias_loss_single_pixel_oracle():
    torch.manual_seed(16)
    model = ResidualEntropyModel().to(torch.float64)
    with torch.no_grad():
        model.conditional_estimator.mod_mu.shift[2].add_(0.7)
        model.conditional_estimator.mod_sigma.scale[2].mul_(1.3)
    x_tilde = image_tensor(np.array([[[[120, 64, 200]]]]))
    r = image_tensor(np.array([[[[4, -2, 7]]]]))
    r_hat = image_tensor(quantize_residual(np.array([[[4, -2, 7]]]), 3))
    with torch.no_grad():
        u = model.extract_feature(x_tilde)
        loss = float(model.bias_correction_loss(r, r_hat, u, 3)[0])
        corrected = model.estimate_params(u, model.extract_context(r_hat), condition=3)
        plain = model.estimate_params(u, model.extract_context(r))
    expected = (
        _chain_rule_bits(corrected, [4, -2, 7], r_hat[0, :, 0, 0].tolist())
        - _chain_rule_bits(plain, [4, -2, 7], [4, -2])
    )
    assert loss == pytest.approx(expected, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------- gradients


def _bias_inputs(seed=7):
    x_tilde, r = _batch(height=5, width=5, seed=seed)
    tau = torch.tensor([2, 4])
    q = torch.stack([
        torch.from_numpy(quantize_residual(r[i].numpy().astype(np.int64), int(tau[i]))).to(r.dtype)
        for i in range(2)
    ])
    return TrainingInputs(x_tilde=x_tilde, residuals=r, quantized=q, tau=tau)


@pytest.mark.parametrize("selection", list(LossSelection))
@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_difference(small_model, seed, selection):
    model, inputs = gradient_case(small_model, seed)
    errors = gradient_errors(model, selection, inputs, h=1e-3)
    assert set(errors) == {n for n, _ in model.named_parameters()}
    bad = {name: err for name, err in errors.items() if not err < 1e-4}
    assert not bad, bad


def test_main_loss_leaves_conditional_untouched(small_model):
    grads = small_model.backward(LossSelection.MAIN, _bias_inputs())
    for name, g in grads.items():
        if name.startswith("conditional_estimator."):
            assert bool((g == 0).all()), name
    assert any(bool((g != 0).any()) for n, g in grads.items() if n.startswith("plain_estimator."))


def test_bias_loss_only_trains_conditional(small_model):
    grads = small_model.backward(LossSelection.BIAS, _bias_inputs())
    assert set(grads) == {n for n, _ in small_model.named_parameters()}
    for name, g in grads.items():
        if not name.startswith("conditional_estimator."):
            assert bool((g == 0).all()), name
    assert bool((grads["conditional_estimator.mod1.scale"][1] != 0).any())
    # tau 1 is not in the batch
    assert bool((grads["conditional_estimator.mod1.scale"][0] == 0).all())


def test_bias_loss_needs_quantized_inputs(small_model):
    x_tilde, r = _batch()
    with pytest.raises(ValueError):
        small_model.bias_loss(TrainingInputs(x_tilde=x_tilde, residuals=r))


# ---------------------------------------------------------------- per-pixel evaluation


def test_pixel_evaluator_matches_batched(small_model):
    x_tilde, r = _batch(height=6, width=6, batch=1, seed=9)
    with torch.no_grad():
        u = small_model.extract_feature(x_tilde)
        ctx = small_model.extract_context(r)
        for condition in (None, 3):
            batched = small_model.estimate_params(u, ctx, condition=condition)
            evaluator = small_model.pixel_evaluator(condition)
            padded = np.pad(r[0].numpy(), ((0, 0), (2, 2), (2, 2)))
            for row, col in [(0, 0), (2, 3), (5, 5)]:
                context = evaluator.context_at(padded, row, col)
                np.testing.assert_allclose(context, ctx[0, :, row, col].numpy(), atol=1e-10)
                p = evaluator.params(u[0, :, row, col].numpy(), context)
                np.testing.assert_allclose(p.means, batched.means[0, row, col].numpy(), atol=1e-10)
                np.testing.assert_allclose(p.scales, batched.scales[0, row, col].numpy(), atol=1e-10)
                np.testing.assert_allclose(
                    p.log_weights, batched.log_weights[0, row, col].numpy(), atol=1e-10
                )
                np.testing.assert_allclose(p.coeffs, batched.coeffs[0, row, col].numpy(), atol=1e-10)


def test_pixel_evaluator_rejects_bad_condition(small_model):
    with pytest.raises(ValueError):
        small_model.pixel_evaluator(7)


# ---------------------------------------------------------------- weights files


def test_weights_roundtrip(tmp_path, small_model):
    path = tmp_path / "model.nllw"
    fingerprint = save_weights(small_model, path)
    assert fingerprint == weights_fingerprint(small_model)
    loaded = load_weights(path)
    assert weights_fingerprint(loaded) == fingerprint
    for name, t in small_model.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], t), name


def test_weights_fingerprint_tracks_values():
    torch.manual_seed(10)
    model = ResidualEntropyModel().to(torch.float64)
    before = weights_fingerprint(model)
    with torch.no_grad():
        model.plain_estimator.mu_head.bias[0] += 1e-9
    assert weights_fingerprint(model) != before


def test_weights_corruption_detected(small_model):
    blob = bytearray(weights_to_bytes(small_model))
    blob[-33] ^= 0x01
    with pytest.raises(WeightsFormatError):
        weights_from_bytes(bytes(blob))


@pytest.mark.parametrize("blob", [b"", b"JUNKJUNK", b"NLLW\x09"])
def test_weights_bad_header(blob):
    with pytest.raises(WeightsFormatError):
        weights_from_bytes(blob)


def test_missing_weights_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_weights(tmp_path / "absent.nllw")
