"""Numerical tolerances shared by every module."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    unitarity: float = 1e-10
    normalization: float = 1e-12
    distribution_sum: float = 1e-10
    pdc_solve: float = 1e-9
    leakage: float = 1e-12


TOL = Tolerances()
