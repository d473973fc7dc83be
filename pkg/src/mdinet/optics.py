"""Linear-optics engine: mode unitaries and exact two-photon output statistics.

Modes are flattened as ``2 * port + pol`` with ``pol = 0`` for H and ``pol = 1``
for V.  Every module in the package shares this ordering.

Two photons are described by their mode-amplitude vectors and their temporal
wavepackets.  The temporal overlap ``x`` interpolates between the fully quantum
(``x = 1``) and the classical, distinguishable (``x = 0``) output statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from .config import TOL

H = 0
V = 1
POLS = {"H": H, "V": V}


@dataclass(frozen=True)
class ModeIndex:
    port: int
    pol: int

    def __post_init__(self):
        if self.port < 0:
            raise ValueError(f"negative port index {self.port}")
        if self.pol not in (H, V):
            raise ValueError(f"polarization must be 0 (H) or 1 (V), got {self.pol}")

    @property
    def flat(self) -> int:
        return 2 * self.port + self.pol

    @classmethod
    def from_flat(cls, index: int) -> "ModeIndex":
        return cls(index // 2, index % 2)


def mode_index(port: int, pol: int | str) -> int:
    """Flattened index of ``(port, pol)``; ``pol`` may be ``"H"``/``"V"``."""
    if isinstance(pol, str):
        pol = POLS[pol]
    return ModeIndex(port, pol).flat


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


class ModeUnitary:
    """Immutable lossless transfer matrix; ``out = matrix @ in``."""

    __slots__ = ("matrix",)

    def __init__(self, matrix, check: bool = True):
        m = _frozen(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"unitary must be square, got shape {m.shape}")
        if check:
            err = unitarity_error(m)
            if err > TOL.unitarity:
                raise ValueError(f"matrix is not unitary (max |U^H U - I| = {err:.3e})")
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "ModeUnitary":
        return cls(np.eye(dim), check=False)

    def dagger(self) -> "ModeUnitary":
        return ModeUnitary(self.matrix.conj().T, check=False)

    def apply(self, amplitudes) -> np.ndarray:
        return self.matrix @ np.asarray(amplitudes, dtype=complex)

    def unitarity_error(self) -> float:
        return unitarity_error(self.matrix)

    def __matmul__(self, other: "ModeUnitary") -> "ModeUnitary":
        return ModeUnitary(self.matrix @ other.matrix, check=False)

    def __repr__(self):
        return f"ModeUnitary(dim={self.dim})"


def unitarity_error(matrix) -> float:
    m = np.asarray(matrix)
    return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def compose(first: ModeUnitary, second: ModeUnitary) -> ModeUnitary:
    """Apply ``first`` then ``second``."""
    if first.dim != second.dim:
        raise ValueError(f"dimension mismatch: {first.dim} vs {second.dim}")
    return ModeUnitary(second.matrix @ first.matrix)


def compose_all(unitaries: Iterable[ModeUnitary]) -> ModeUnitary:
    it = iter(unitaries)
    result = next(it)
    for u in it:
        result = compose(result, u)
    return result


def embed(device: ModeUnitary, target_modes: Sequence[int], total_dim: int) -> ModeUnitary:
    """Place ``device`` on ``target_modes`` of a ``total_dim``-mode circuit."""
    target = list(target_modes)
    if len(target) != device.dim:
        raise ValueError(f"need {device.dim} target modes, got {len(target)}")
    if len(set(target)) != len(target):
        raise ValueError(f"repeated target mode in {target}")
    for m in target:
        if not 0 <= m < total_dim:
            raise ValueError(f"mode {m} out of range for dimension {total_dim}")
    full = np.eye(total_dim, dtype=complex)
    idx = np.array(target)
    full[np.ix_(idx, idx)] = device.matrix
    return ModeUnitary(full, check=False)


def permutation(mapping: Sequence[int]) -> ModeUnitary:
    """Unitary sending input mode ``i`` to output mode ``mapping[i]``."""
    n = len(mapping)
    if sorted(mapping) != list(range(n)):
        raise ValueError(f"not a permutation: {list(mapping)}")
    p = np.zeros((n, n), dtype=complex)
    p[list(mapping), list(range(n))] = 1.0
    return ModeUnitary(p, check=False)


def beam_splitter(theta: float) -> ModeUnitary:
    """Single-polarization 2-mode coupler: through ``cos``, cross ``i sin``."""
    c, s = math.cos(theta), math.sin(theta)
    return ModeUnitary([[c, 1j * s], [1j * s, c]], check=False)


@dataclass(frozen=True)
class Wavepacket:
    """A single photon: mode amplitudes plus a Gaussian temporal envelope.

    ``delay`` and ``width`` share one time unit (ps by convention).
    """

    amplitudes: np.ndarray
    delay: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.ndim != 1:
            raise ValueError("amplitudes must be a vector")
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > TOL.normalization:
            raise ValueError(f"wavepacket not normalized (sum |a|^2 = {norm!r})")
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @classmethod
    def in_mode(cls, mode: int, dim: int, delay: float = 0.0, width: float = 1.0) -> "Wavepacket":
        amps = np.zeros(dim, dtype=complex)
        amps[mode] = 1.0
        return cls(amps, delay, width)

    def delayed(self, extra: float) -> "Wavepacket":
        return Wavepacket(self.amplitudes, self.delay + extra, self.width)


@dataclass(frozen=True)
class PhotonPairInput:
    photon_a: Wavepacket
    photon_b: Wavepacket

    def __post_init__(self):
        if self.photon_a.dim != self.photon_b.dim:
            raise ValueError(
                f"photons defined over different mode counts: {self.photon_a.dim} vs {self.photon_b.dim}"
            )

    @property
    def dim(self) -> int:
        return self.photon_a.dim


def overlap(a: Wavepacket, b: Wavepacket) -> float:
    """Temporal overlap of two Gaussian envelopes.

    ``x = sqrt(2 s_a s_b / (s_a^2 + s_b^2)) * exp(-dt^2 / (2 (s_a^2 + s_b^2)))``.
    The prefactor is 1 for equal widths, so ``x = 1`` exactly when both delay
    and width agree.
    """
    sa2, sb2 = a.width**2, b.width**2
    dt = a.delay - b.delay
    shape = math.sqrt(2.0 * a.width * b.width / (sa2 + sb2))
    return shape * math.exp(-dt * dt / (2.0 * (sa2 + sb2)))


class TwoPhotonDistribution:
    """Probabilities of finding the two photons in the unordered mode pair ``{p, q}``."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        # upper-triangular (p <= q) storage
        m = np.array(matrix, dtype=float)
        m.setflags(write=False)
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __getitem__(self, pair: Tuple[int, int]) -> float:
        p, q = sorted(pair)
        return float(self.matrix[p, q])

    @property
    def probabilities(self) -> Dict[Tuple[int, int], float]:
        n = self.dim
        return {(p, q): float(self.matrix[p, q]) for p in range(n) for q in range(p, n)}

    def total(self) -> float:
        return float(np.sum(self.matrix))

    def port_pairs(self) -> np.ndarray:
        """Collapse polarization: probabilities over unordered spatial-port pairs."""
        n = self.dim // 2
        out = np.zeros((n, n))
        for p in range(self.dim):
            for q in range(p, self.dim):
                a, b = sorted((p // 2, q // 2))
                out[a, b] += self.matrix[p, q]
        return out


def _distribution_from_output(c: np.ndarray, x: float) -> TwoPhotonDistribution:
    """Pair probabilities from output amplitudes ``c[p, q]`` (photon a in p, b in q)."""
    x2 = x * x
    direct = np.abs(c) ** 2
    cross = np.real(c * np.conj(c.T))
    full = direct + direct.T + 2.0 * x2 * cross
    probs = np.triu(full, k=1)
    diag = (1.0 + x2) * np.abs(np.diag(c)) ** 2
    probs[np.diag_indices_from(probs)] = diag
    probs = np.clip(probs, 0.0, None)
    total = probs.sum()
    if total <= 0:
        raise ValueError("two-photon state has zero norm")
    return TwoPhotonDistribution(probs / total)


def two_photon_distribution(U: ModeUnitary, pair: PhotonPairInput) -> TwoPhotonDistribution:
    """Exact output statistics of a product two-photon input with partial distinguishability."""
    if pair.dim != U.dim:
        raise ValueError(f"input over {pair.dim} modes, device has {U.dim}")
    x = overlap(pair.photon_a, pair.photon_b)
    c = U.apply(pair.photon_a.amplitudes)
    d = U.apply(pair.photon_b.amplitudes)
    return _distribution_from_output(np.outer(c, d), x)


def two_photon_state_distribution(U: ModeUnitary, coefficients, x: float) -> TwoPhotonDistribution:
    """Output statistics for an arbitrary (possibly entangled) two-photon input.

    ``coefficients[m, n]`` is the amplitude for photon a in input mode ``m`` and
    photon b in input mode ``n``; photons a and b carry envelopes of overlap ``x``.
    """
    a = np.asarray(coefficients, dtype=complex)
    if a.shape != (U.dim, U.dim):
        raise ValueError(f"coefficient matrix must be {U.dim}x{U.dim}, got {a.shape}")
    norm = float(np.sum(np.abs(a) ** 2))
    if abs(norm - 1.0) > TOL.normalization:
        raise ValueError(f"two-photon state not normalized (sum |a|^2 = {norm!r})")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"overlap must lie in [0, 1], got {x}")
    m = U.matrix
    return _distribution_from_output(m @ a @ m.T, x)


def single_photon_distribution(U: ModeUnitary, amplitudes) -> np.ndarray:
    """Output-mode probabilities of one photon."""
    return np.abs(U.apply(amplitudes)) ** 2


def random_unitary(dim: int, rng: np.random.Generator) -> ModeUnitary:
    """Haar-random unitary via QR of a complex Gaussian matrix."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return ModeUnitary(q * (d / np.abs(d)), check=False)
