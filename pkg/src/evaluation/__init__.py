"""
Evaluation tooling for NLLC

- run_rate_curve / RateCurveRow: rate and distortion over tau and inference mode
- run_selftest: embedded property suites with a pass/fail table
"""

from .rate_curve import (
    RATE_CSV_HEADER,
    RateCurveRow,
    rate_rows_for_image,
    run_rate_curve,
    load_corpus,
    write_rate_csv,
)
from .selftest import default_model, gradient_case, gradient_errors, run_selftest

__all__ = [
    "RATE_CSV_HEADER",
    "RateCurveRow",
    "rate_rows_for_image",
    "run_rate_curve",
    "load_corpus",
    "write_rate_csv",
    "run_selftest",
    "default_model",
    "gradient_case",
    "gradient_errors",
]
