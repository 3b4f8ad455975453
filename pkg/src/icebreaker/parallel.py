"""Thread-count policy from the ICEBREAKER_THREADS environment variable."""

from __future__ import annotations

import os

from .errors import ConfigError

ENV_VAR = "ICEBREAKER_THREADS"


def max_workers() -> int:
    """Worker cap: the env value if positive, else the CPU count (0 or unset = auto)."""
    raw = os.environ.get(ENV_VAR, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    if n <= 0:
        n = os.cpu_count() or 1
    return n
