"""Bell-state classification, HOM delay scans, projection tests and their analyses."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .devices import (
    DEFAULT_PORT_MAP,
    IN1,
    IN2,
    PERFECT_DETECTOR,
    AnalyzerModel,
    ClickPattern,
    DetectorParams,
    analyzer_unitary,
    click_distribution,
    independent_click_distribution,
    input_modes,
    mode_efficiencies,
)
from .optics import ModeUnitary, PhotonPairInput, Wavepacket, single_photon_distribution, two_photon_distribution

PAIR_NAMES = ("c12", "c13", "c14", "c23", "c24", "c34")
PAIR_PORTS = ((1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4))
PAIR_MASKS = tuple((1 << (p - 1)) | (1 << (q - 1)) for p, q in PAIR_PORTS)

POLARIZATIONS: Dict[str, np.ndarray] = {
    "H": np.array([1.0, 0.0]),
    "V": np.array([0.0, 1.0]),
    "D": np.array([1.0, 1.0]) / math.sqrt(2),
    "A": np.array([1.0, -1.0]) / math.sqrt(2),
}


class BellOutcome(enum.Enum):
    PSI_PLUS = "PsiPlus"
    PSI_MINUS = "PsiMinus"
    INCONCLUSIVE = "Inconclusive"


_PSI_PLUS_MASKS = {PAIR_MASKS[0], PAIR_MASKS[5]}  # {1,2}, {3,4}
_PSI_MINUS_MASKS = {PAIR_MASKS[1], PAIR_MASKS[4]}  # {1,3}, {2,4}

# outcome code per click bitmask: 1 = psi+, 2 = psi-, 0 = inconclusive
OUTCOME_CODE = np.zeros(16, dtype=np.int8)
for _m in _PSI_PLUS_MASKS:
    OUTCOME_CODE[_m] = 1
for _m in _PSI_MINUS_MASKS:
    OUTCOME_CODE[_m] = 2
OUTCOME_FROM_CODE = (BellOutcome.INCONCLUSIVE, BellOutcome.PSI_PLUS, BellOutcome.PSI_MINUS)


def classify(p: ClickPattern | int) -> BellOutcome:
    """Bell outcome announced for a click pattern (or its bitmask)."""
    mask = p if isinstance(p, int) else p.mask
    return OUTCOME_FROM_CODE[OUTCOME_CODE[mask]]


# --------------------------------------------------------------------------
# HOM scans
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HomSource:
    """Photon pair fed to the analyzer during a HOM scan.

    Both photons are D polarized.  ``multi_pair_fraction`` of the trials carry
    two pairs (four mutually distinguishable photons).  ``phase_mismatch`` is a
    residual H/V phase on photon b left by imperfect polarization compensation.
    """

    width_a: float = 1.0
    width_b: float = 1.0
    multi_pair_fraction: float = 0.0
    phase_mismatch: float = 0.0

    def __post_init__(self):
        if not (self.width_a > 0 and self.width_b > 0):
            raise ValueError("photon widths must be positive")
        if not 0.0 <= self.multi_pair_fraction <= 1.0:
            raise ValueError(f"multi_pair_fraction {self.multi_pair_fraction} outside [0, 1]")

    def polarizations(self):
        pol_b = np.array([1.0, np.exp(1j * self.phase_mismatch)]) / math.sqrt(2)
        return POLARIZATIONS["D"], pol_b


@dataclass(frozen=True)
class HomCurve:
    delays: np.ndarray
    counts: np.ndarray  # shape (n_points, 6), columns in PAIR_NAMES order
    trials_per_point: int

    def __post_init__(self):
        d = np.asarray(self.delays, dtype=float)
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (d.size, len(PAIR_NAMES)):
            raise ValueError(f"counts must have shape ({d.size}, 6), got {c.shape}")
        if d.size > 1 and np.any(np.diff(d) <= 0):
            raise ValueError("delays must be strictly increasing")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "counts", c)

    def pair(self, name: str) -> np.ndarray:
        return self.counts[:, PAIR_NAMES.index(name)]


def hom_point_distribution(U: ModeUnitary, source: HomSource, delay: float,
                           detectors: Sequence[DetectorParams],
                           pol_transmission=(1.0, 1.0)) -> np.ndarray:
    """Click-subset distribution of one HOM trial at relative delay ``delay``."""
    pol_a, pol_b = source.polarizations()
    a = Wavepacket(input_modes(pol_a, IN1), 0.0, source.width_a)
    b = Wavepacket(input_modes(pol_b, IN2), delay, source.width_b)
    single = click_distribution(two_photon_distribution(U, PhotonPairInput(a, b)), detectors, pol_transmission)
    q = source.multi_pair_fraction
    if q == 0:
        return single
    pa = single_photon_distribution(U, a.amplitudes)
    pb = single_photon_distribution(U, b.amplitudes)
    multi = independent_click_distribution([pa, pa, pb, pb], detectors, pol_transmission)
    return (1.0 - q) * single + q * multi


def point_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible stream for scan point ``index``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _scan_point(args):
    U, source, delay, trials, detectors, pol_transmission, seed, index = args
    probs = hom_point_distribution(U, source, delay, detectors, pol_transmission)
    counts = point_rng(seed, index).multinomial(trials, probs / probs.sum())
    return counts[list(PAIR_MASKS)]


def hom_scan(analyzer: AnalyzerModel, source: HomSource, delays: Sequence[float], trials: int, seed: int,
             detectors: Optional[Sequence[DetectorParams]] = None, jobs: int = 1) -> HomCurve:
    """Coincidence counts per detector pair versus relative delay of photon b.

    Every delay point draws from its own RNG stream (stream id = point index),
    so results do not depend on ``jobs``.
    """
    delays = list(delays)
    if not delays:
        raise ValueError("no delay points given")
    if trials <= 0:
        raise ValueError(f"trials must be positive, got {trials}")
    detectors = list(detectors) if detectors is not None else [PERFECT_DETECTOR] * 4
    U = analyzer_unitary(analyzer)
    work = [(U, source, float(d), int(trials), detectors, analyzer.pol_transmission, seed, i)
            for i, d in enumerate(delays)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_scan_point, work))
    else:
        rows = [_scan_point(w) for w in work]
    return HomCurve(np.array(delays, dtype=float), np.array(rows), int(trials))


@dataclass(frozen=True)
class Visibility:
    value: float
    peaked: bool
    plateau: float
    extreme: float


def visibility(curve: HomCurve, pair: str, plateau_fraction: float = 0.2) -> Visibility:
    """Plateau-referenced visibility of one detector pair.

    The plateau is the mean of the outermost ``plateau_fraction`` of the scan
    points (split between both ends).  Dipped pairs report
    ``(plateau - min) / plateau``; bunching-enhanced pairs report
    ``(max - plateau) / plateau`` with ``peaked=True``.
    """
    c = curve.pair(pair).astype(float)
    n = c.size
    if n < 3:
        raise ValueError(f"need at least 3 scan points, got {n}")
    k = max(1, int(round(plateau_fraction * n / 2)))
    plateau = float(np.mean(np.concatenate([c[:k], c[-k:]])))
    if plateau <= 0:
        raise ValueError(f"pair {pair} has zero plateau")
    dip, peak = float(c.min()), float(c.max())
    if peak - plateau > plateau - dip:
        return Visibility((peak - plateau) / plateau, True, plateau, peak)
    return Visibility((plateau - dip) / plateau, False, plateau, dip)


# --------------------------------------------------------------------------
# projection test and extinction
# --------------------------------------------------------------------------

STATE_ORDER = ("H", "V", "D", "A")


@dataclass
class ProjectionTable:
    counts: Dict[str, np.ndarray]

    def __post_init__(self):
        for state, row in self.counts.items():
            if state not in POLARIZATIONS:
                raise ValueError(f"unknown input state {state!r}")
            row = np.asarray(row, dtype=np.int64)
            if row.shape != (4,) or np.any(row < 0):
                raise ValueError(f"row for {state} must be 4 non-negative counts")
            self.counts[state] = row

    def fractions(self, state: str) -> np.ndarray:
        row = self.counts[state]
        return row / row.sum()


def projection_probabilities(analyzer: AnalyzerModel, state: str, input_port: int = 1,
                             detectors: Optional[Sequence[DetectorParams]] = None) -> np.ndarray:
    """Relative detection probability at ports 1..4 for one photon in ``state``."""
    if input_port not in (1, 2):
        raise ValueError(f"input port must be 1 or 2, got {input_port}")
    U = analyzer_unitary(analyzer)
    amps = input_modes(POLARIZATIONS[state], IN1 if input_port == 1 else IN2)
    detectors = list(detectors) if detectors is not None else [PERFECT_DETECTOR] * 4
    eta = mode_efficiencies(detectors, analyzer.pol_transmission)
    return (single_photon_distribution(U, amps) * eta).reshape(4, 2).sum(axis=1)


def projection_test(analyzer: AnalyzerModel, state: str, trials: int, rng: np.random.Generator,
                    input_port: int = 1, detectors: Optional[Sequence[DetectorParams]] = None) -> np.ndarray:
    """Detected counts per port for ``trials`` single photons in ``state``."""
    if trials <= 0:
        raise ValueError(f"trials must be positive, got {trials}")
    probs = projection_probabilities(analyzer, state, input_port, detectors)
    full = np.append(probs, max(0.0, 1.0 - probs.sum()))
    return rng.multinomial(trials, full / full.sum())[:4]


def correct_ports(port_map: Mapping[Tuple[str, str], int] = DEFAULT_PORT_MAP) -> Dict[str, Tuple[int, int]]:
    return {pol: tuple(sorted(port_map[(arm, pol)] for arm in "AB")) for pol in ("H", "V")}


def extinction_ratio(t: ProjectionTable, port_map: Mapping[Tuple[str, str], int] = DEFAULT_PORT_MAP) -> float:
    """Mean over the H and V rows of correct-port / wrong-port counts.

    Returns ``math.inf`` if any rectilinear row has no wrong-port counts.
    """
    good = correct_ports(port_map)
    ratios = []
    for pol in ("H", "V"):
        if pol not in t.counts:
            continue
        row = t.counts[pol]
        right = sum(int(row[p - 1]) for p in good[pol])
        wrong = int(row.sum()) - right
        if wrong == 0:
            return math.inf
        ratios.append(right / wrong)
    if not ratios:
        raise ValueError("projection table has no H or V rows")
    return float(np.mean(ratios))
