"""
Embedded property suites

Each check returns (passed, detail). Everything is seeded, so two runs print
the same table.
"""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from ..coding import RangeDecoder, RangeEncoder, build_freq_table
from ..coding.range_coder import BitSource, decode_symbol, encode_symbol
from ..entropy import (
    LossSelection,
    ResidualEntropyModel,
    TrainingInputs,
    copy_as_float64,
    discrete_pmf,
    image_tensor,
)
from ..imaging import Image
from ..orchestration import NearLosslessCodec
from ..quantization import (
    MAX_TAU,
    RESIDUAL_SUPPORT,
    entropy_bits,
    quantize_pmf,
    quantize_residual,
    quantized_alphabet,
)

logger = logging.getLogger(__name__)

CheckResult = Tuple[bool, str]

SEED = 1234


def check_quantizer_exhaustive() -> CheckResult:
    for tau in range(MAX_TAU + 1):
        q = quantize_residual(RESIDUAL_SUPPORT, tau)
        if np.max(np.abs(RESIDUAL_SUPPORT - q)) > tau:
            return False, f"error bound violated at tau={tau}"
        if not np.array_equal(quantize_residual(q, tau), q):
            return False, f"not idempotent at tau={tau}"
        if not np.all(np.isin(q, quantized_alphabet(tau))):
            return False, f"value outside alphabet at tau={tau}"
    return True, f"{RESIDUAL_SUPPORT.size} residuals x {MAX_TAU + 1} taus"


def _random_pmfs(rng: np.random.Generator, count: int):
    for _ in range(count):
        k = int(rng.integers(1, 6))
        means = rng.uniform(-40, 40, k)
        scales = np.exp(rng.uniform(np.log(1e-3), np.log(60.0), k))
        weights = rng.dirichlet(np.ones(k))
        yield discrete_pmf(means, scales, weights)


def check_entropy_reduction() -> CheckResult:
    rng = np.random.default_rng(SEED)
    worst = -np.inf
    for p in _random_pmfs(rng, 200):
        for tau in range(1, MAX_TAU + 1):
            q = quantize_pmf(p, tau)
            gap = entropy_bits(q) - entropy_bits(p)
            worst = max(worst, gap)
            if gap > 1e-9:
                return False, f"H(q) exceeds H(p) by {gap:.3e} at tau={tau}"
            if abs(q.total - p.total) > 1e-12:
                return False, f"mass not conserved at tau={tau}"
    return True, f"200 PMFs, max H(q)-H(p) = {worst:.3f} bits"


def check_pmf_normalization() -> CheckResult:
    rng = np.random.default_rng(SEED + 1)
    worst = 0.0
    for p in _random_pmfs(rng, 100):
        worst = max(worst, abs(p.total - 1.0))
    extreme = discrete_pmf(np.array([300.0, -300.0]), np.array([1e-3, 1e-3]), np.array([0.5, 0.5]))
    worst = max(worst, abs(extreme.total - 1.0))
    if worst > 1e-9:
        return False, f"mass off by {worst:.3e}"
    return True, f"max |sum - 1| = {worst:.1e}"


def check_coder_roundtrip() -> CheckResult:
    rng = np.random.default_rng(SEED + 2)
    for trial in range(5):
        n = int(rng.integers(2, 512))
        tables = []
        symbols = []
        for _ in range(400):
            mass = rng.dirichlet(np.full(n, 0.3))
            table = build_freq_table(mass)
            tables.append(table)
            symbols.append(int(rng.choice(n, p=mass)))
        encoder = RangeEncoder()
        for table, s in zip(tables, symbols):
            encode_symbol(encoder, table, s)
        data = encoder.finish()
        source = BitSource(data)
        decoder = RangeDecoder(source)
        decoded = [decode_symbol(decoder, table) for table in tables]
        if decoded != symbols:
            return False, f"trial {trial}: decoded symbols differ"
        if source.remaining:
            return False, f"trial {trial}: {source.remaining} unread bytes"
    return True, "5 messages x 400 symbols with per-symbol tables"


def check_causality(model: ResidualEntropyModel) -> CheckResult:
    rng = np.random.default_rng(SEED + 3)
    size = 6
    base = rng.integers(-20, 21, size=(1, 3, size, size)).astype(np.float64)
    row, col = 2, 3
    with torch.no_grad():
        ctx = model.extract_context(torch.from_numpy(base).to(torch.float64))
        for c in range(3):
            perturbed = base.copy()
            perturbed[0, c, row, col] += 17.0
            ctx2 = model.extract_context(torch.from_numpy(perturbed))
            changed = (ctx2 - ctx).abs().amax(dim=1)[0]
            for i in range(size):
                for j in range(size):
                    if (i, j) <= (row, col) and float(changed[i, j]) > 0.0:
                        return False, f"context at {(i, j)} sees channel {c} of {(row, col)}"
    return True, "no context depends on the current or later pixels"


GRADIENT_CASES = 20
GRADIENT_STEP = 1e-3
GRADIENT_TOLERANCE = 1e-4


def _trained_by(selection: LossSelection, name: str) -> bool:
    conditional = name.startswith("conditional_estimator.")
    return conditional if selection is LossSelection.BIAS else not conditional


def gradient_case(model: ResidualEntropyModel, seed: int) -> Tuple[ResidualEntropyModel, TrainingInputs]:
    """Float64 copy of `model` with seeded weight noise, and a random small batch"""
    rng = np.random.default_rng(SEED + 100 + seed)
    case = copy_as_float64(model)
    with torch.no_grad():
        for p in case.parameters():
            p.add_(torch.from_numpy(rng.normal(0.0, 0.05, size=tuple(p.shape))))
    case.apply_mask_()

    batch = 2
    size = int(rng.integers(3, 6))
    x_tilde = rng.integers(0, 256, size=(batch, size, size, 3))
    r = rng.integers(-8, 9, size=(batch, size, size, 3))
    taus = rng.integers(1, MAX_TAU + 1, size=batch)
    quantized = np.stack([quantize_residual(r[b], int(taus[b])) for b in range(batch)])
    inputs = TrainingInputs(
        x_tilde=image_tensor(x_tilde),
        residuals=image_tensor(r),
        quantized=image_tensor(quantized),
        tau=torch.as_tensor(taus, dtype=torch.long),
    )
    return case, inputs


def gradient_errors(model: ResidualEntropyModel, selection: LossSelection,
                    inputs: TrainingInputs, h: float = GRADIENT_STEP) -> Dict[str, float]:
    """Relative error of backward() against central differences, per tensor

    Trained tensors are compared at their largest-magnitude gradient entry.
    Tensors the selected loss must not train score 0.0 when their gradient
    is exactly zero and inf otherwise.
    """
    grads = model.backward(selection, inputs)
    loss_fn = model.main_loss if selection is LossSelection.MAIN else model.bias_loss
    errors: Dict[str, float] = {}
    for name, p in model.named_parameters():
        g = grads[name].reshape(-1)
        if not _trained_by(selection, name):
            errors[name] = 0.0 if bool((g == 0).all()) else float("inf")
            continue
        idx = int(torch.argmax(g.abs()))
        flat = p.data.view(-1)
        original = float(flat[idx])
        with torch.no_grad():
            flat[idx] = original + h
            up = float(loss_fn(inputs))
            flat[idx] = original - h
            down = float(loss_fn(inputs))
            flat[idx] = original
        numeric = (up - down) / (2 * h)
        analytic = float(g[idx])
        errors[name] = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-2)
    return errors


def check_gradients(model: ResidualEntropyModel) -> CheckResult:
    worst, worst_name = 0.0, ""
    for seed in range(GRADIENT_CASES):
        case, inputs = gradient_case(model, seed)
        for selection in LossSelection:
            for name, err in gradient_errors(case, selection, inputs).items():
                if err > worst:
                    worst, worst_name = err, f"{selection.value}:{name}"
    if worst >= GRADIENT_TOLERANCE:
        return False, f"max relative error {worst:.2e} at {worst_name}"
    return True, f"{GRADIENT_CASES} cases, max relative error {worst:.1e}"


def check_pipeline_bound(model: ResidualEntropyModel) -> CheckResult:
    rng = np.random.default_rng(SEED + 5)
    image = Image(rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8))
    codec = NearLosslessCodec(model)
    for tau in (0, 2):
        container, _ = codec.encode(image, tau)
        decoded = codec.decode(container)
        err = int(np.max(np.abs(decoded.data.astype(int) - image.data.astype(int))))
        if err > tau:
            return False, f"linf {err} > tau {tau}"
    return True, "8x8 noise image at tau 0 and 2"


def default_model() -> ResidualEntropyModel:
    torch.manual_seed(SEED)
    return ResidualEntropyModel().to(torch.float64)


def run_selftest(model: Optional[ResidualEntropyModel] = None,
                 out: Callable[[str], None] = print) -> bool:
    """Run every suite and print a pass/fail table

    Args:
        model: Model for the model-dependent suites (seeded fresh model by default)
        out: Line printer

    Returns:
        True if every suite passed
    """
    model = model if model is not None else default_model()
    model = model.to(torch.float64)
    checks: List[Tuple[str, Callable[[], CheckResult]]] = [
        ("quantizer exhaustive", check_quantizer_exhaustive),
        ("entropy reduction", check_entropy_reduction),
        ("pmf normalization", check_pmf_normalization),
        ("coder roundtrip", check_coder_roundtrip),
        ("context causality", lambda: check_causality(model)),
        ("gradient check", lambda: check_gradients(model)),
        ("pipeline error bound", lambda: check_pipeline_bound(model)),
    ]

    out("=" * 72)
    out("  NLLC SELF-TEST")
    out("=" * 72)
    passed = 0
    for name, check in checks:
        try:
            ok, detail = check()
        except Exception as e:
            ok, detail = False, f"{type(e).__name__}: {e}"
        passed += ok
        out(f"   {'PASS' if ok else 'FAIL'}: {name:<22} {detail}")
    out(f"\n   Total: {passed}/{len(checks)} suites passed")
    out("=" * 72)
    if passed != len(checks):
        logger.warning(f"[SELFTEST] {len(checks) - passed} suites failed")
    return passed == len(checks)
