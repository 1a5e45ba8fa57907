"""Outage, BER and capacity analysis of dual-hop mixed FSO/mmWave relay links."""

from dualhop.result import MetricResult, NumericalError

__all__ = ["MetricResult", "NumericalError"]
__version__ = "0.1.0"
