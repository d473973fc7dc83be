"""Physical component models for the integrated Bell-state analyzer and its links.

Coupler conventions
-------------------
A directional coupler acts on two waveguides (``port 0``, ``port 1``) and both
polarizations.  For polarization ``r`` with phase ``theta_r = kappa_r * (CL + arc_extra)``
the through amplitude is ``cos(theta_r)`` and the cross amplitude ``i sin(theta_r)``.

Analyzer layout
---------------
Internally the chip has four waveguides.  ``In1`` enters waveguide 0 and ``In2``
waveguide 2.  The PIC couples waveguides 0 and 2 (arm A = waveguide 0, arm B =
waveguide 2).  PDC_A couples waveguides 0/1 and PDC_B waveguides 2/3; the
through guide of each PDC carries the polarization that stays, the cross guide
the one that transfers.  A final spatial permutation places every guide on its
detector port (1..4) according to ``port_map``.  In the 8-mode output basis,
detector port ``k`` occupies modes ``2 (k - 1)`` and ``2 (k - 1) + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .config import TOL
from .optics import (
    H,
    V,
    ModeUnitary,
    TwoPhotonDistribution,
    Wavepacket,
    compose_all,
    embed,
    permutation,
)

IN1 = 0  # input waveguide of Alice's photon
IN2 = 2  # input waveguide of Bob's photon
N_PORTS = 4
N_MODES = 8

POL_NAMES = ("H", "V")


class FitError(ValueError):
    """Coupler-curve fitting failed (bad samples or no convergence)."""


# --------------------------------------------------------------------------
# couplers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplerParams:
    kappa_h: float  # rad/mm
    kappa_v: float  # rad/mm
    coupling_length: float  # mm
    arc_extra: float = 0.0  # mm
    coupling_width: float = 8.0  # um, metadata only
    arc_radius: Optional[float] = None  # mm, metadata only

    def __post_init__(self):
        if not (self.kappa_h > 0 and self.kappa_v > 0):
            raise ValueError(f"coupling coefficients must be positive, got {self.kappa_h}, {self.kappa_v}")
        if self.coupling_length < 0:
            raise ValueError(f"coupling_length must be >= 0, got {self.coupling_length}")
        if self.arc_extra < 0:
            raise ValueError(f"arc_extra must be >= 0, got {self.arc_extra}")

    @property
    def effective_length(self) -> float:
        return self.coupling_length + self.arc_extra

    def theta(self, pol: int) -> float:
        kappa = self.kappa_h if pol == H else self.kappa_v
        return kappa * self.effective_length

    def cross_power(self, pol: int) -> float:
        return math.sin(self.theta(pol)) ** 2


def _coupler_from_amplitudes(through: Sequence[complex], cross: Sequence[complex]) -> ModeUnitary:
    # 4-mode order: (port0,H), (port0,V), (port1,H), (port1,V)
    m = np.zeros((4, 4), dtype=complex)
    for pol in (H, V):
        a, b = pol, 2 + pol
        m[a, a] = m[b, b] = through[pol]
        m[a, b] = m[b, a] = cross[pol]
    return ModeUnitary(m)


def coupler_from_cross_powers(cross_h: float, cross_v: float) -> ModeUnitary:
    """Lossless coupler with the given per-polarization cross-port powers."""
    for name, r in (("H", cross_h), ("V", cross_v)):
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"{name} cross power {r} outside [0, 1]")
    through = [math.sqrt(1.0 - cross_h), math.sqrt(1.0 - cross_v)]
    cross = [1j * math.sqrt(cross_h), 1j * math.sqrt(cross_v)]
    return _coupler_from_amplitudes(through, cross)


def coupler_unitary(p: CouplerParams) -> ModeUnitary:
    th = [p.theta(H), p.theta(V)]
    return _coupler_from_amplitudes([math.cos(t) for t in th], [1j * math.sin(t) for t in th])


# --------------------------------------------------------------------------
# PIC
# --------------------------------------------------------------------------

# Output splitting ratios (%) of the fabricated 50/50 PIC:
# columns In1-OutA, In1-OutB, In2-OutA, In2-OutB.  OutA is In1's through port.
PIC_MEASURED: Dict[str, Tuple[float, float, float, float]] = {
    "H": (50.4, 49.6, 48.6, 51.4),
    "V": (48.2, 51.8, 50.7, 49.3),
    "A": (49.4, 50.6, 50.4, 49.6),
    "D": (48.7, 51.3, 50.1, 49.9),
}


@dataclass(frozen=True)
class PICModel:
    """Cross-port power ratio per ``(input port, polarization)``.

    Input ports are 1 and 2, polarizations ``"H"`` / ``"V"``.  Missing entries
    are allowed; per polarization the available entries are averaged.
    """

    splitting: Mapping[Tuple[int, str], float] = field(
        default_factory=lambda: {(1, "H"): 0.5, (2, "H"): 0.5, (1, "V"): 0.5, (2, "V"): 0.5}
    )

    def __post_init__(self):
        for (port, pol), r in self.splitting.items():
            if port not in (1, 2) or pol not in POL_NAMES:
                raise ValueError(f"bad PIC entry key {(port, pol)!r}")
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"PIC ratio for {(port, pol)} is {r}, outside [0, 1]")
        for pol in POL_NAMES:
            if not any(k[1] == pol for k in self.splitting):
                raise ValueError(f"PIC model has no entry for polarization {pol}")

    def cross_power(self, pol: str) -> float:
        vals = [r for (port, p), r in self.splitting.items() if p == pol]
        return sum(vals) / len(vals)

    def model_error(self) -> Dict[Tuple[int, str], float]:
        """Configured minus modelled cross power for every entry."""
        return {k: r - self.cross_power(k[1]) for k, r in self.splitting.items()}

    @classmethod
    def from_table(cls, table: Mapping[str, Sequence[float]] = PIC_MEASURED) -> "PICModel":
        """Build from percentage rows ``(In1-OutA, In1-OutB, In2-OutA, In2-OutB)``; H/V rows only."""
        splitting = {}
        for pol in POL_NAMES:
            _, in1_outb, in2_outa, _ = table[pol]
            splitting[(1, pol)] = in1_outb / 100.0
            splitting[(2, pol)] = in2_outa / 100.0
        return cls(splitting)


def pic_unitary(m: PICModel) -> ModeUnitary:
    return coupler_from_cross_powers(m.cross_power("H"), m.cross_power("V"))


def pic_table_residuals(m: PICModel, table: Mapping[str, Sequence[float]] = PIC_MEASURED):
    """Predicted vs measured splitting (percent) for every row of a PIC table.

    Diagonal inputs carry equal H and V weight, so their predicted cross power
    is the mean of the two polarization blocks.
    """
    rh, rv = m.cross_power("H"), m.cross_power("V")
    out = {}
    for state, row in table.items():
        if state == "H":
            r = rh
        elif state == "V":
            r = rv
        else:
            r = 0.5 * (rh + rv)
        predicted = (100 * (1 - r), 100 * r, 100 * r, 100 * (1 - r))
        out[state] = [(meas, pred, meas - pred) for meas, pred in zip(row, predicted)]
    return out


# --------------------------------------------------------------------------
# PDC solving
# --------------------------------------------------------------------------


def pdc_residual(kappa_h: float, kappa_v: float, length: float) -> float:
    """Distance from ideal PDC behaviour; the polarization with the larger kappa crosses."""
    sh = math.sin(kappa_h * length) ** 2
    sv = math.sin(kappa_v * length) ** 2
    if kappa_h < kappa_v:
        return sh + (1.0 - sv)
    return sv + (1.0 - sh)


def solve_pdc(kappa_h: float, kappa_v: float, length_range: Tuple[float, float],
              points_per_period: int = 400) -> Tuple[CouplerParams, float]:
    """Coupling length in ``length_range`` that best separates H and V.

    Dense grid search followed by bounded Brent refinement around every grid
    local minimum.  Returns the coupler and its residual.
    """
    lo, hi = length_range
    if not hi > lo:
        raise ValueError(f"empty length range {length_range}")
    if kappa_h == kappa_v:
        raise ValueError("equal coupling coefficients: no PDC length exists")
    kmax = max(kappa_h, kappa_v)
    n = max(1000, int(math.ceil((hi - lo) * kmax / math.pi * points_per_period)) + 1)
    grid = np.linspace(lo, hi, n)
    res = (np.sin(kappa_h * grid) ** 2, np.sin(kappa_v * grid) ** 2)
    vals = res[0] + 1 - res[1] if kappa_h < kappa_v else res[1] + 1 - res[0]
    step = grid[1] - grid[0]
    interior = np.flatnonzero((vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])) + 1
    candidates = set(interior.tolist()) | {0, n - 1, int(np.argmin(vals))}

    best_len, best_res = float(grid[int(np.argmin(vals))]), float(np.min(vals))
    for i in sorted(candidates):
        a, b = max(lo, grid[i] - step), min(hi, grid[i] + step)
        r = optimize.minimize_scalar(
            lambda L: pdc_residual(kappa_h, kappa_v, L),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-13},
        )
        if r.fun < best_res:
            best_len, best_res = float(r.x), float(r.fun)
    return CouplerParams(kappa_h, kappa_v, best_len), best_res


# --------------------------------------------------------------------------
# coupling-curve fitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingFit:
    kappa: float
    arc_extra: float
    rms_residual: float
    n_samples: int


def fit_coupling_curve(lengths, cross_powers, kappa_grid: int = 600) -> CouplingFit:
    """Least-squares fit of ``cross = sin^2(kappa (CL + L0))``.

    ``L0`` is reported as the smallest non-negative offset, i.e. modulo the
    oscillation period ``pi / kappa``.
    """
    L = np.asarray(lengths, dtype=float)
    y = np.asarray(cross_powers, dtype=float)
    if L.shape != y.shape or L.ndim != 1:
        raise FitError("lengths and powers must be 1-D arrays of equal length")
    if L.size < 4:
        raise FitError(f"need at least 4 samples, got {L.size}")
    uniq = np.unique(L)
    if uniq.size < 2:
        raise FitError("all samples share one coupling length")
    span = float(uniq[-1] - uniq[0])
    spacing = float(np.median(np.diff(uniq)))

    # sin^2 has angular frequency 2 kappa; stay below the sampling Nyquist limit
    k_hi = math.pi / (2.0 * spacing)
    k_lo = math.pi / (8.0 * span)
    kappas = np.linspace(k_lo, k_hi, kappa_grid)
    phases = np.linspace(0.0, math.pi, 90, endpoint=False)
    model = np.sin(kappas[:, None, None] * L[None, None, :] + phases[None, :, None]) ** 2
    sse = np.sum((model - y) ** 2, axis=2)
    ik, ip = np.unravel_index(np.argmin(sse), sse.shape)

    def resid(p):
        return np.sin(p[0] * L + p[1]) ** 2 - y

    sol = optimize.least_squares(resid, x0=[kappas[ik], phases[ip]], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    kappa, phase = float(sol.x[0]), float(sol.x[1])
    if not sol.success or kappa <= 0:
        raise FitError(f"fit did not converge: {sol.message}")
    if kappa * span < math.pi / 2:
        raise FitError("samples span less than half an oscillation period")
    offset = (phase % math.pi) / kappa
    rms = float(np.sqrt(np.mean(resid(sol.x) ** 2)))
    return CouplingFit(kappa, offset, rms, int(L.size))


# --------------------------------------------------------------------------
# analyzer
# --------------------------------------------------------------------------

IDEAL_PDC = CouplerParams(kappa_h=0.8, kappa_v=1.0, coupling_length=2.5 * math.pi)
IDEAL_PIC = PICModel()

DEFAULT_PORT_MAP: Dict[Tuple[str, str], int] = {
    ("A", "H"): 1,
    ("A", "V"): 2,
    ("B", "V"): 3,
    ("B", "H"): 4,
}


@dataclass(frozen=True)
class Extinction:
    """Explicit PDC extinction override.

    ``through`` is the correct-to-wrong power ratio of the polarization that
    should stay in its guide and ``cross`` that of the polarization that should
    transfer.  Leakage into the wrong guide is ``1 / (ratio + 1)``;
    ``math.inf`` means no leakage.
    """

    through: float = math.inf
    cross: float = math.inf

    def __post_init__(self):
        for name, r in (("through", self.through), ("cross", self.cross)):
            if not r > 0:
                raise ValueError(f"extinction ratio {name} must be positive, got {r}")

    @staticmethod
    def leakage(ratio: float) -> float:
        return 0.0 if math.isinf(ratio) else 1.0 / (ratio + 1.0)


def crossing_polarization(p: CouplerParams) -> int:
    return H if p.cross_power(H) > p.cross_power(V) else V


def pdc_unitary(p: CouplerParams, extinction: Optional[Extinction] = None) -> ModeUnitary:
    if extinction is None:
        return coupler_unitary(p)
    crossing = crossing_polarization(p)
    cross = {crossing: 1.0 - Extinction.leakage(extinction.cross),
             1 - crossing: Extinction.leakage(extinction.through)}
    return coupler_from_cross_powers(cross[H], cross[V])


def polarization_rotation(angle: float) -> ModeUnitary:
    """2x2 polarization rotation of one waveguide: H -> cos H + sin V."""
    c, s = math.cos(angle), math.sin(angle)
    return ModeUnitary([[c, -s], [s, c]], check=False)


@dataclass(frozen=True)
class AnalyzerModel:
    """One PIC plus two PDCs, wired to four detector ports.

    ``birefringence_a``/``_b`` rotate the polarization in each arm between PIC
    and PDC (residual birefringence).  ``pol_transmission`` is a per-polarization
    power transmission on the outputs (polarization-dependent loss); it is
    applied at detection, keeping the unitary lossless.
    """

    pic: PICModel | CouplerParams = IDEAL_PIC
    pdc_a: CouplerParams = IDEAL_PDC
    pdc_b: CouplerParams = IDEAL_PDC
    extinction_a: Optional[Extinction] = None
    extinction_b: Optional[Extinction] = None
    birefringence_a: float = 0.0
    birefringence_b: float = 0.0
    pol_transmission: Tuple[float, float] = (1.0, 1.0)
    port_map: Mapping[Tuple[str, str], int] = field(default_factory=lambda: dict(DEFAULT_PORT_MAP))

    def __post_init__(self):
        keys = {(arm, pol) for arm in "AB" for pol in POL_NAMES}
        if set(self.port_map) != keys:
            raise ValueError(f"port_map must cover {sorted(keys)}")
        if sorted(self.port_map.values()) != [1, 2, 3, 4]:
            raise ValueError(f"port_map must be a bijection onto ports 1..4, got {dict(self.port_map)}")
        for t in self.pol_transmission:
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"polarization transmission {t} outside [0, 1]")

    def guide_to_port(self) -> List[int]:
        """Detector port (1..4) of each internal waveguide."""
        out = []
        for arm, pdc in (("A", self.pdc_a), ("B", self.pdc_b)):
            crossing = POL_NAMES[crossing_polarization(pdc)]
            staying = POL_NAMES[1 - POL_NAMES.index(crossing)]
            out.append(self.port_map[(arm, staying)])
            out.append(self.port_map[(arm, crossing)])
        return out


def analyzer_unitary(m: AnalyzerModel) -> ModeUnitary:
    """8-mode transfer matrix from input waveguides to detector-port modes."""
    pic = pic_unitary(m.pic) if isinstance(m.pic, PICModel) else coupler_unitary(m.pic)
    stages = [embed(pic, [0, 1, 4, 5], N_MODES)]
    if m.birefringence_a:
        stages.append(embed(polarization_rotation(m.birefringence_a), [0, 1], N_MODES))
    if m.birefringence_b:
        stages.append(embed(polarization_rotation(m.birefringence_b), [4, 5], N_MODES))
    stages.append(embed(pdc_unitary(m.pdc_a, m.extinction_a), [0, 1, 2, 3], N_MODES))
    stages.append(embed(pdc_unitary(m.pdc_b, m.extinction_b), [4, 5, 6, 7], N_MODES))
    guide_port = m.guide_to_port()
    mode_map = [2 * (guide_port[g] - 1) + pol for g in range(N_PORTS) for pol in (H, V)]
    stages.append(permutation(mode_map))
    return compose_all(stages)


def input_modes(pol_vector, guide: int) -> np.ndarray:
    """8-mode amplitude vector for a photon in ``guide`` with polarization ``(a_H, a_V)``."""
    amps = np.zeros(N_MODES, dtype=complex)
    amps[2 * guide] = pol_vector[0]
    amps[2 * guide + 1] = pol_vector[1]
    return amps


# --------------------------------------------------------------------------
# channel
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelParams:
    loss_db: float = 0.0
    misalignment: float = 0.0  # rad
    delay: float = 0.0  # ps

    def __post_init__(self):
        if self.loss_db < 0:
            raise ValueError(f"loss_db must be >= 0, got {self.loss_db}")

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.loss_db / 10.0)


def rotate_polarization(amplitudes, angle: float) -> np.ndarray:
    """Rotate the (H, V) amplitudes of every spatial port by ``angle``."""
    a = np.asarray(amplitudes, dtype=complex).reshape(-1, 2)
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return (a @ rot.T).reshape(-1)


def apply_channel(c: ChannelParams, w: Wavepacket, rng: np.random.Generator) -> Optional[Wavepacket]:
    if rng.random() >= c.transmission:
        return None
    return Wavepacket(rotate_polarization(w.amplitudes, c.misalignment), w.delay + c.delay, w.width)


# --------------------------------------------------------------------------
# sources
# --------------------------------------------------------------------------

SPDC = "HeraldedSPDC"
WCP = "WeakCoherent"


@dataclass(frozen=True)
class Emission:
    photons: int
    heralded: bool
    setting: int
    multi_pair: bool = False


@dataclass(frozen=True)
class SourceModel:
    """Photon source of one client.

    ``HeraldedSPDC``: per pulse, exactly one pair with ``pair_prob`` and two
    pairs with ``double_pair_prob``.  ``WeakCoherent``: Poisson photon number at
    the selected mean ``intensities[k]``, chosen with ``selection_probs[k]``,
    with all weight above ``truncation`` folded onto ``truncation``.
    ``width`` is the temporal envelope width of emitted photons.
    """

    kind: str = SPDC
    pair_prob: float = 0.0
    double_pair_prob: float = 0.0
    heralding_eff: float = 1.0
    intensities: Tuple[float, ...] = (0.1,)
    selection_probs: Tuple[float, ...] = (1.0,)
    truncation: int = 2
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in (SPDC, WCP):
            raise ValueError(f"unknown source kind {self.kind!r}")
        for name in ("pair_prob", "double_pair_prob", "heralding_eff"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} outside [0, 1]")
        if self.kind == SPDC:
            if self.pair_prob + self.double_pair_prob > 1.0:
                raise ValueError("pair_prob + double_pair_prob exceeds 1")
            if self.double_pair_prob > 2.0 * self.pair_prob**2 + 1e-15:
                raise ValueError(
                    f"double_pair_prob {self.double_pair_prob} exceeds 2 * pair_prob^2 = {2 * self.pair_prob**2}"
                )
        if len(self.intensities) != len(self.selection_probs) or not self.intensities:
            raise ValueError("intensities and selection_probs must be non-empty and of equal length")
        if any(mu < 0 for mu in self.intensities):
            raise ValueError("intensities must be >= 0")
        if any(not 0 <= p <= 1 for p in self.selection_probs) or abs(sum(self.selection_probs) - 1) > 1e-9:
            raise ValueError(f"selection_probs must be probabilities summing to 1, got {self.selection_probs}")
        if self.truncation < 1:
            raise ValueError("truncation must be >= 1")
        if not self.width > 0:
            raise ValueError("width must be positive")

    @property
    def n_settings(self) -> int:
        return 1 if self.kind == SPDC else len(self.intensities)

    @property
    def setting_probs(self) -> Tuple[float, ...]:
        return (1.0,) if self.kind == SPDC else self.selection_probs

    def photon_number_probs(self, setting: int = 0) -> np.ndarray:
        """``P(n)`` for ``n = 0 .. truncation`` (SPDC: ``n`` counts pairs, capped at 2)."""
        if self.kind == SPDC:
            p = np.zeros(3)
            p[1], p[2] = self.pair_prob, self.double_pair_prob
            p[0] = 1.0 - p[1] - p[2]
            return p
        mu = self.intensities[setting]
        n = np.arange(self.truncation + 1)
        p = np.exp(-mu) * mu**n / np.array([math.factorial(k) for k in n])
        p[-1] = max(0.0, 1.0 - p[:-1].sum())
        return p


def sample_emission(s: SourceModel, rng: np.random.Generator) -> Emission:
    setting = 0 if s.n_settings == 1 else int(rng.choice(s.n_settings, p=s.setting_probs))
    probs = s.photon_number_probs(setting)
    n = int(rng.choice(probs.size, p=probs))
    if s.kind == SPDC:
        heralded = n >= 1 and rng.random() < s.heralding_eff
        return Emission(n, heralded, setting, multi_pair=n >= 2)
    return Emission(n, False, setting, multi_pair=n >= 2)


# --------------------------------------------------------------------------
# detection
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.5
    dark_prob: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency {self.efficiency} outside [0, 1]")
        if not 0.0 <= self.dark_prob <= 1.0:
            raise ValueError(f"dark_prob {self.dark_prob} outside [0, 1]")


PERFECT_DETECTOR = DetectorParams(1.0, 0.0)


@dataclass(frozen=True)
class ClickPattern:
    clicked: frozenset

    def __post_init__(self):
        if not set(self.clicked) <= {1, 2, 3, 4}:
            raise ValueError(f"click ports must be within 1..4, got {sorted(self.clicked)}")

    @property
    def mask(self) -> int:
        return sum(1 << (p - 1) for p in self.clicked)

    @classmethod
    def from_mask(cls, mask: int) -> "ClickPattern":
        return cls(frozenset(p for p in range(1, 5) if mask >> (p - 1) & 1))


def mode_efficiencies(detectors: Sequence[DetectorParams],
                      pol_transmission: Tuple[float, float] = (1.0, 1.0)) -> np.ndarray:
    """Detection probability of a photon in each of the 8 output modes."""
    return np.array([detectors[m // 2].efficiency * pol_transmission[m % 2] for m in range(N_MODES)])


def _with_darks(photon_clicks: np.ndarray, dark: Sequence[float]) -> np.ndarray:
    """Combine a click-subset distribution with independent dark clicks (OR)."""
    out = photon_clicks
    for port, d in enumerate(dark):
        if d == 0:
            continue
        bit = 1 << port
        nxt = out * (1.0 - d)
        idx = np.arange(16)
        np.add.at(nxt, idx | bit, out * d)
        out = nxt
    return out


def click_distribution(dist: TwoPhotonDistribution, detectors: Sequence[DetectorParams],
                       pol_transmission: Tuple[float, float] = (1.0, 1.0)) -> np.ndarray:
    """Probability of each click subset (bitmask, port k -> bit k-1) for a two-photon outcome."""
    eta = mode_efficiencies(detectors, pol_transmission)
    out = np.zeros(16)
    m = dist.matrix
    for p in range(N_MODES):
        for q in range(p, N_MODES):
            w = m[p, q]
            if w == 0:
                continue
            bp, bq = 1 << (p // 2), 1 << (q // 2)
            ep, eq = eta[p], eta[q]
            out[bp | bq] += w * ep * eq
            out[bp] += w * ep * (1 - eq)
            out[bq] += w * (1 - ep) * eq
            out[0] += w * (1 - ep) * (1 - eq)
    return _with_darks(out, [d.dark_prob for d in detectors])


def independent_click_distribution(mode_probs: Sequence[np.ndarray], detectors: Sequence[DetectorParams],
                                   pol_transmission: Tuple[float, float] = (1.0, 1.0)) -> np.ndarray:
    """Click-subset distribution for mutually distinguishable photons.

    ``mode_probs`` holds one output-mode probability vector per photon.
    """
    eta = mode_efficiencies(detectors, pol_transmission)
    out = np.zeros(16)
    out[0] = 1.0
    idx = np.arange(16)
    for probs in mode_probs:
        det = np.asarray(probs) * eta
        port_hit = det.reshape(N_PORTS, 2).sum(axis=1)
        nxt = out * (1.0 - port_hit.sum())
        for port in range(N_PORTS):
            if port_hit[port]:
                np.add.at(nxt, idx | (1 << port), out * port_hit[port])
        out = nxt
    return _with_darks(out, [d.dark_prob for d in detectors])


def detect(dist: TwoPhotonDistribution, detectors: Sequence[DetectorParams], rng: np.random.Generator,
           pol_transmission: Tuple[float, float] = (1.0, 1.0)) -> ClickPattern:
    """Sample one click pattern: outcome mode pair, per-photon efficiency, dark clicks."""
    total = dist.total()
    if abs(total - 1.0) > TOL.distribution_sum:
        raise ValueError(f"distribution not normalized (sum = {total!r})")
    eta = mode_efficiencies(detectors, pol_transmission)
    pairs = list(dist.probabilities.items())
    probs = np.array([w for _, w in pairs])
    k = int(rng.choice(len(pairs), p=probs / probs.sum()))
    (p, q), _ = pairs[k]
    clicked = set()
    for mode in (p, q):
        if rng.random() < eta[mode]:
            clicked.add(mode // 2 + 1)
    for port, d in enumerate(detectors, start=1):
        if d.dark_prob and rng.random() < d.dark_prob:
            clicked.add(port)
    return ClickPattern(frozenset(clicked))
