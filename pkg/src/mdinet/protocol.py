"""MDI-QKD session logic: BB84 encoding, coincidence tables, gain/QBER estimators, sifting.

Bit convention: 0 -> H (rectilinear) or D (diagonal), 1 -> V or A.

Bob's flip rule follows directly from which coincidences the QBER estimators
count as errors:

* rectilinear: HH and VV are the error rows, so any conclusive outcome means
  Alice and Bob sent orthogonal states and Bob flips for both psi+ and psi-;
* diagonal: psi- (C13, C24) is an error for equal inputs (++, --) while psi+
  (C12, C34) is an error for opposite inputs (+-, -+), so Bob flips only on psi-.

With these rules the mismatch fraction of the sifted key equals the estimated
QBER exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bsa import PAIR_NAMES, BellOutcome

RECT = "rectilinear"
DIAG = "diagonal"
STATES = ("H", "V", "D", "A")
_ENCODING = {(0, RECT): "H", (1, RECT): "V", (0, DIAG): "D", (1, DIAG): "A"}
_DECODING = {v: k for k, v in _ENCODING.items()}

RECT_ROWS = (("H", "H"), ("V", "V"), ("H", "V"), ("V", "H"))
DIAG_ROWS = (("D", "D"), ("A", "A"), ("D", "A"), ("A", "D"))

_I = {name: i for i, name in enumerate(PAIR_NAMES)}


class UndefinedEstimate(ZeroDivisionError):
    """Estimator denominator is zero (no successful events in that basis)."""


def encode(bit: int, basis: str) -> str:
    try:
        return _ENCODING[(bit, basis)]
    except KeyError:
        raise ValueError(f"invalid bit/basis {(bit, basis)!r}") from None


def decode(state: str) -> Tuple[int, str]:
    return _DECODING[state]


@dataclass(frozen=True)
class EncodedPulse:
    bit: int
    basis: str
    setting: int = 0

    def __post_init__(self):
        encode(self.bit, self.basis)

    @property
    def polarization(self) -> str:
        return encode(self.bit, self.basis)


@dataclass
class CoincidenceTable:
    """Per-pair coincidence counts for every (Alice input, Bob input) row."""

    counts: Dict[Tuple[str, str], np.ndarray] = field(default_factory=dict)
    pulses: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self):
        for key in list(self.counts):
            row = np.asarray(self.counts[key], dtype=np.int64)
            if row.shape != (6,) or np.any(row < 0):
                raise ValueError(f"row {key} must hold 6 non-negative counts")
            self.counts[key] = row
        for key in self.counts:
            self.pulses.setdefault(key, 0)
        for key in self.pulses:
            self.counts.setdefault(key, np.zeros(6, dtype=np.int64))

    def add(self, alice: str, bob: str, row: Sequence[int], pulses: int) -> None:
        key = (alice, bob)
        self.counts[key] = self.counts.get(key, np.zeros(6, dtype=np.int64)) + np.asarray(row, dtype=np.int64)
        self.pulses[key] = self.pulses.get(key, 0) + int(pulses)

    def merge(self, other: "CoincidenceTable") -> "CoincidenceTable":
        out = CoincidenceTable()
        for t in (self, other):
            for key, row in t.counts.items():
                out.add(key[0], key[1], row, t.pulses[key])
        return out

    def __eq__(self, other):
        if not isinstance(other, CoincidenceTable):
            return NotImplemented
        return (self.pulses == other.pulses and set(self.counts) == set(other.counts)
                and all(np.array_equal(self.counts[k], other.counts[k]) for k in self.counts))

    def row(self, alice: str, bob: str) -> np.ndarray:
        try:
            return self.counts[(alice, bob)]
        except KeyError:
            raise KeyError(f"coincidence table lacks row {alice}{bob}") from None

    def total_pulses(self) -> int:
        return sum(self.pulses.values())


def c_sum(row: Sequence[int]) -> int:
    """Successful events of one row: C12 + C34 + C13 + C24."""
    r = row
    return r[_I["c12"]] + r[_I["c34"]] + r[_I["c13"]] + r[_I["c24"]]


def _per_pulse_sum(t: CoincidenceTable, key) -> float:
    pulses = t.pulses.get(key, 0)
    if key not in t.counts:
        raise KeyError(f"coincidence table lacks row {key[0]}{key[1]}")
    if pulses <= 0:
        raise ValueError(f"row {key[0]}{key[1]} has no pulse normalization")
    return float(c_sum(t.counts[key])) / pulses


def gain_rect(t: CoincidenceTable) -> float:
    return sum(_per_pulse_sum(t, k) for k in RECT_ROWS) / 4.0


def gain_diag(t: CoincidenceTable) -> float:
    return sum(_per_pulse_sum(t, k) for k in DIAG_ROWS) / 4.0


def qber_rect(t: CoincidenceTable) -> float:
    s = {k: int(c_sum(t.row(*k))) for k in RECT_ROWS}
    den = sum(s.values())
    if den == 0:
        raise UndefinedEstimate("no successful rectilinear events")
    return (s[("H", "H")] + s[("V", "V")]) / den


def qber_diag(t: CoincidenceTable) -> float:
    den = sum(int(c_sum(t.row(*k))) for k in DIAG_ROWS)
    if den == 0:
        raise UndefinedEstimate("no successful diagonal events")
    err = 0
    for k in (("D", "D"), ("A", "A")):
        r = t.row(*k)
        err += int(r[_I["c13"]] + r[_I["c24"]])
    for k in (("D", "A"), ("A", "D")):
        r = t.row(*k)
        err += int(r[_I["c12"]] + r[_I["c34"]])
    return err / den


def estimates(t: CoincidenceTable) -> Dict[str, float]:
    """All four estimators; any that cannot be evaluated (missing rows, no events) is NaN."""
    out = {}
    for name, fn in (("Q_rect", gain_rect), ("Q_diag", gain_diag), ("E_rect", qber_rect), ("E_diag", qber_diag)):
        try:
            out[name] = fn(t)
        except (UndefinedEstimate, KeyError, ValueError):
            out[name] = math.nan
    return out


# --------------------------------------------------------------------------
# sifting
# --------------------------------------------------------------------------


@dataclass
class SiftedKeyPair:
    basis: str
    alice_bits: np.ndarray
    bob_bits: np.ndarray
    announcements: List[BellOutcome]
    settings: np.ndarray  # (n, 2) intensity setting indices of Alice and Bob

    def __post_init__(self):
        self.alice_bits = np.asarray(self.alice_bits, dtype=np.int8)
        self.bob_bits = np.asarray(self.bob_bits, dtype=np.int8)
        self.settings = np.asarray(self.settings, dtype=np.int64).reshape(-1, 2)
        n = len(self.alice_bits)
        if len(self.bob_bits) != n or len(self.announcements) != n or len(self.settings) != n:
            raise ValueError("sifted key fields have unequal lengths")
        if any(a is BellOutcome.INCONCLUSIVE for a in self.announcements):
            raise ValueError("sifted key may only hold conclusive announcements")

    def __len__(self):
        return len(self.alice_bits)

    def select(self, setting: Optional[Tuple[int, int]] = None) -> "SiftedKeyPair":
        if setting is None:
            return self
        keep = np.all(self.settings == np.asarray(setting), axis=1)
        return SiftedKeyPair(self.basis, self.alice_bits[keep], self.bob_bits[keep],
                             [a for a, k in zip(self.announcements, keep) if k], self.settings[keep])

    def mismatch_fraction(self, setting: Optional[Tuple[int, int]] = None) -> float:
        k = self.select(setting)
        if len(k) == 0:
            raise UndefinedEstimate(f"no sifted {self.basis} bits")
        return float(np.mean(k.alice_bits != k.bob_bits))


def bob_flips(basis: str, outcome: BellOutcome) -> bool:
    if outcome is BellOutcome.INCONCLUSIVE:
        raise ValueError("inconclusive outcomes are discarded before sifting")
    if basis == RECT:
        return True
    return outcome is BellOutcome.PSI_MINUS


def sift(alice: Sequence[EncodedPulse], bob: Sequence[EncodedPulse],
         announcements: Sequence[BellOutcome]) -> Tuple[SiftedKeyPair, SiftedKeyPair]:
    """Keep matched-basis conclusive rounds; Bob applies the basis-dependent flip."""
    if not (len(alice) == len(bob) == len(announcements)):
        raise ValueError(
            f"stream lengths differ: alice {len(alice)}, bob {len(bob)}, announcements {len(announcements)}"
        )
    keys = {RECT: ([], [], [], []), DIAG: ([], [], [], [])}
    for a, b, out in zip(alice, bob, announcements):
        if out is BellOutcome.INCONCLUSIVE or a.basis != b.basis:
            continue
        ab, bb, anns, sets = keys[a.basis]
        ab.append(a.bit)
        bb.append(b.bit ^ int(bob_flips(a.basis, out)))
        anns.append(out)
        sets.append((a.setting, b.setting))
    return tuple(
        SiftedKeyPair(basis, *(np.array(x) for x in keys[basis][:2]), keys[basis][2],
                      np.array(keys[basis][3], dtype=np.int64).reshape(-1, 2))
        for basis in (RECT, DIAG)
    )
