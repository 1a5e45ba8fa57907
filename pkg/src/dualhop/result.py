from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

METHODS = ("exact_foxh", "oracle_integral", "asymptotic", "monte_carlo")


class NumericalError(RuntimeError):
    """A numerical evaluation failed to reach its tolerance or broke down."""


@dataclass
class MetricResult:
    """A computed quantity together with how it was obtained.

    ``err_estimate`` is an absolute error estimate for ``value``.
    """

    value: float
    err_estimate: float
    method: str
    series_terms_used: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if not math.isfinite(self.err_estimate) or self.err_estimate < 0:
            raise ValueError(f"err_estimate must be finite and >= 0, got {self.err_estimate}")

    def __float__(self) -> float:
        return float(self.value)
