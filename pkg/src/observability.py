"""
Optional Weave tracing

Tracing is only switched on when weave is installed and WANDB_API_KEY is set.
Without it, `traced` returns the function unchanged.
"""

import logging
import os
from typing import Callable, TypeVar

logger = logging.getLogger(__name__)

try:
    import weave
    WEAVE_AVAILABLE = True
except ImportError:
    weave = None
    WEAVE_AVAILABLE = False

F = TypeVar("F", bound=Callable)

_tracing_enabled = False


def init_tracing(project_name: str = "nllc") -> bool:
    """Initialize weave tracing if possible

    Args:
        project_name: Weave project to log into

    Returns:
        True when tracing is active
    """
    global _tracing_enabled
    if _tracing_enabled:
        return True
    if not WEAVE_AVAILABLE:
        logger.info("[WEAVE] Weave not available - running without tracing")
        return False
    if not os.getenv("WANDB_API_KEY"):
        logger.info("[WEAVE] WANDB_API_KEY not set - tracing disabled")
        return False
    try:
        weave.init(project_name=project_name)
    except Exception as e:
        logger.warning(f"[WEAVE] Failed to initialize: {e}")
        return False
    _tracing_enabled = True
    logger.info("[WEAVE] Tracing initialized")
    return True


def traced(func: F) -> F:
    """Wrap `func` in weave.op() when weave is importable"""
    if not WEAVE_AVAILABLE:
        return func
    return weave.op()(func)
