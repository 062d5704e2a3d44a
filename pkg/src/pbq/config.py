"""Quantization configuration shared by the assembly and compensation paths."""

from __future__ import annotations

from dataclasses import dataclass

CRITERIA = ("magnitude", "hessian")
GRANULARITIES = ("element", "column")


@dataclass(frozen=True)
class QuantConfig:
    salient_fraction: float = 0.1
    criterion: str = "magnitude"
    granularity: str = "element"
    group_size: int = 0  # columns per calibration group; 0 = one group per row
    salient_bits: int = 8
    damping_fraction: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.salient_fraction <= 1.0:
            raise ValueError(
                f"salient_fraction must be in [0, 1], got {self.salient_fraction}"
            )
        if self.criterion not in CRITERIA:
            raise ValueError(
                f"criterion must be one of {CRITERIA}, got {self.criterion!r}"
            )
        if self.granularity not in GRANULARITIES:
            raise ValueError(
                f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}"
            )
        if self.criterion == "hessian" and self.granularity == "column":
            raise ValueError(
                "the hessian criterion is element-wise; its denominator is "
                "constant along a column, so column ranking degenerates"
            )
        if self.group_size < 0:
            raise ValueError(f"group_size must be >= 0, got {self.group_size}")
        if not 1 <= self.salient_bits <= 8:
            raise ValueError(
                f"salient_bits must be in [1, 8] (u8 storage lane), "
                f"got {self.salient_bits}"
            )
        if self.damping_fraction < 0:
            raise ValueError(
                f"damping_fraction must be >= 0, got {self.damping_fraction}"
            )
