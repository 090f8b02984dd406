"""
Test the near-lossless pipeline

Tests:
1. Container serialization and rejection of malformed files
2. Lossless (tau = 0) and near-lossless roundtrips in both coding modes
3. Fingerprint and payload integrity checks on decode
4. Code length bounds and agreement with the instrumented estimate
"""

import dataclasses

import numpy as np
import pytest
import torch

from src.entropy import ResidualEntropyModel
from src.errors import (
    ContainerFormatError,
    CorruptPayloadError,
    FingerprintMismatchError,
    NLLCError,
)
from src.imaging import Image
from src.orchestration import (
    CodedContainer,
    CodingMode,
    InstrumentMode,
    NearLosslessCodec,
    decode,
    encode,
    estimate_residual_bits,
    select_mode,
    verify,
)


def _container(**overrides) -> CodedContainer:
    fields = dict(
        width=5, height=3, tau=2, bias_correction=True, fingerprint=bytes(range(32)),
        lossy_payload=b"lossy-bytes", residual_payload=b"\x01\x02\x03\x04",
    )
    fields.update(overrides)
    return CodedContainer(**fields)


# ---------------------------------------------------------------- container


def test_container_roundtrip():
    c = _container()
    data = c.to_bytes()
    assert len(data) == c.num_bytes
    assert data[:4] == b"NLLC"
    assert CodedContainer.from_bytes(data) == c
    assert CodedContainer.from_bytes(_container(bias_correction=False).to_bytes()).flags == 0


def _patched(data: bytes, offset: int, value: int) -> bytes:
    out = bytearray(data)
    out[offset] = value
    return bytes(out)


@pytest.mark.parametrize("mutate", [
    lambda d: d[:10],
    lambda d: b"XLLC" + d[4:],
    lambda d: _patched(d, 4, 9),                 # version
    lambda d: _patched(d, 13, 6),                # tau
    lambda d: _patched(d, 14, 0x80),             # unknown flag
    lambda d: d[:-1],
    lambda d: d + b"\x00",
    lambda d: d[:5] + bytes(4) + d[9:],             # width 0
])
def test_container_rejects_malformed(mutate):
    with pytest.raises(ContainerFormatError):
        CodedContainer.from_bytes(mutate(_container().to_bytes()))


def test_container_errors_are_corrupt_payload():
    with pytest.raises(CorruptPayloadError):
        CodedContainer.from_bytes(b"NLLC")
    with pytest.raises(NLLCError):
        _container(fingerprint=b"short").to_bytes()


def test_select_mode():
    assert select_mode(0, True) is CodingMode.LOSSLESS
    assert select_mode(0, False) is CodingMode.LOSSLESS
    assert select_mode(3, True) is CodingMode.CORRECTED
    assert select_mode(3, False) is CodingMode.UNCORRECTED


# ---------------------------------------------------------------- roundtrips


def test_lossless_roundtrip(codec, natural_image):
    x = natural_image(8, 9, seed=11)
    container, report = codec.encode(x, 0)
    assert not container.bias_correction
    assert report.linf == 0
    decoded = codec.decode(CodedContainer.from_bytes(container.to_bytes()))
    assert decoded == x


@pytest.mark.parametrize("tau", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("bias_correction", [False, True])
def test_near_lossless_bound(codec, natural_image, tau, bias_correction):
    x = natural_image(8, 8, seed=20 + tau)
    container, report = codec.encode(x, tau, use_bias_correction=bias_correction)
    assert container.bias_correction is bias_correction
    decoded = codec.decode(CodedContainer.from_bytes(container.to_bytes()))
    diff = np.abs(decoded.data.astype(int) - x.data.astype(int))
    assert diff.max() <= tau
    assert report.linf == diff.max()
    assert report.psnr == pytest.approx(
        10 * np.log10(255.0 ** 2 / np.mean(diff.astype(float) ** 2)) if diff.any() else np.inf
    )


def test_encode_is_deterministic(codec, natural_image):
    x = natural_image(6, 7, seed=12)
    a, _ = codec.encode(x, 2)
    b, _ = codec.encode(x, 2)
    assert a.to_bytes() == b.to_bytes()


def test_module_level_functions(small_model, natural_image):
    x = natural_image(5, 6, seed=13)
    container, report = encode(x, 1, small_model, use_bias_correction=False)
    decoded = decode(container, small_model)
    assert verify(x, decoded, 1).passed
    assert report.bpsp_total == pytest.approx(8 * container.num_bytes / (3 * 30))
    assert report.bpsp_lossy + report.bpsp_residual < report.bpsp_total


def test_invalid_tau(codec, natural_image):
    for tau in (-1, 6, 2.5, True):
        with pytest.raises(ValueError):
            codec.encode(natural_image(4, 4), tau)


def test_report_lines(codec, natural_image):
    _, report = codec.encode(natural_image(4, 4, seed=14), 0)
    lines = dict(line.split("=") for line in report.as_lines().splitlines())
    assert lines["tau"] == "0"
    assert lines["bias_correction"] == "0"
    assert lines["linf"] == "0"
    assert lines["psnr"] == "inf"


# ---------------------------------------------------------------- integrity


def test_fingerprint_mismatch(codec, natural_image):
    container, _ = codec.encode(natural_image(4, 4, seed=15), 1)
    torch.manual_seed(99)
    other = NearLosslessCodec(ResidualEntropyModel())
    with pytest.raises(FingerprintMismatchError):
        other.decode(container)


def test_truncated_residual_payload(codec, natural_image):
    container, _ = codec.encode(natural_image(6, 6, seed=16), 2)
    short = dataclasses.replace(container, residual_payload=container.residual_payload[:-1])
    with pytest.raises(CorruptPayloadError):
        codec.decode(short)
    long = dataclasses.replace(container, residual_payload=container.residual_payload + b"\x00")
    with pytest.raises(CorruptPayloadError):
        codec.decode(long)


def test_dimension_mismatch(codec, natural_image):
    container, _ = codec.encode(natural_image(4, 4, seed=17), 0)
    with pytest.raises(CorruptPayloadError):
        codec.decode(dataclasses.replace(container, width=5))


# ---------------------------------------------------------------- code lengths


@pytest.mark.parametrize("tau", [0, 3])
def test_code_length_bounds_on_noise(codec, noise_image, tau):
    x = noise_image(8, 8, seed=18)
    container, report = codec.encode(x, tau, use_bias_correction=False)
    n_bits = 8 * len(container.residual_payload)
    assert n_bits >= report.table_bits
    assert n_bits <= report.table_bits + 64


@pytest.mark.parametrize("tau,bias_correction,mode", [
    (0, False, InstrumentMode.BIASED),
    (2, False, InstrumentMode.BIASED),
    (2, True, InstrumentMode.CORRECTED),
    (4, True, InstrumentMode.CORRECTED),
])
def test_instrumented_bits_match_encoder(codec, natural_image, tau, bias_correction, mode):
    x = natural_image(7, 6, seed=19)
    _, report = codec.encode(x, tau, use_bias_correction=bias_correction)
    x_tilde = codec.lossy.reconstruct(x)
    estimate = estimate_residual_bits(codec.model, x, x_tilde, tau, mode)
    assert estimate == pytest.approx(report.model_bits, rel=1e-6)


def test_ideal_mode(small_model, natural_image):
    assert not InstrumentMode.IDEAL.decodable
    assert InstrumentMode.BIASED.decodable and InstrumentMode.CORRECTED.decodable
    x = natural_image(6, 6, seed=21)
    x_tilde = NearLosslessCodec(small_model).lossy.reconstruct(x)
    ideal = estimate_residual_bits(small_model, x, x_tilde, 0, InstrumentMode.IDEAL)
    biased = estimate_residual_bits(small_model, x, x_tilde, 0, InstrumentMode.BIASED)
    assert ideal == pytest.approx(biased, rel=1e-12)


def test_instrumentation_does_not_touch_caller_model(natural_image):
    torch.manual_seed(22)
    model = ResidualEntropyModel()
    x = natural_image(4, 4, seed=22)
    x_tilde = NearLosslessCodec(model).lossy.reconstruct(x)
    estimate_residual_bits(model, x, x_tilde, 1, InstrumentMode.IDEAL)
    assert next(model.parameters()).dtype == torch.float32


# ---------------------------------------------------------------- verify


def test_verify_examples():
    x = Image(np.full((2, 2, 3), 100, dtype=np.uint8))
    data = x.data.copy()
    data[1, 0, 2] = 103
    x_hat = Image(data)
    assert verify(x, x_hat, 3).passed
    report = verify(x, x_hat, 2)
    assert not report.passed
    assert report.linf == 3
    assert verify(x, x, 0).psnr == np.inf
