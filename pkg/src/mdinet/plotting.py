"""Static report figures (PNG, Agg backend).

Figures are written without timestamps or software tags so that a fixed seed
gives byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bsa import PAIR_NAMES, STATE_ORDER, HomCurve, ProjectionTable  # noqa: E402
from .devices import CouplingFit  # noqa: E402

_META = {"Software": None}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_hom(curve: HomCurve, path: str | Path, visibilities: Optional[Dict[str, float]] = None) -> None:
    fig, axes = plt.subplots(2, 3, figsize=(10, 5.5), sharex=True)
    for ax, name in zip(axes.flat, PAIR_NAMES):
        ax.plot(curve.delays, curve.pair(name), "o-", ms=3, lw=1)
        title = name.upper()
        if visibilities and name in visibilities:
            title += f"  V = {100 * visibilities[name]:.1f}%"
        ax.set_title(title, fontsize=9)
        ax.grid(alpha=0.3)
    for ax in axes[1]:
        ax.set_xlabel("relative delay (photon widths)")
    for ax in axes[:, 0]:
        ax.set_ylabel("coincidences")
    fig.tight_layout()
    _save(fig, path)


def plot_projection(table: ProjectionTable, path: str | Path) -> None:
    states = [s for s in STATE_ORDER if s in table.counts]
    fig, axes = plt.subplots(1, len(states), figsize=(2.6 * len(states), 2.8), sharey=True, squeeze=False)
    for ax, s in zip(axes[0], states):
        ax.bar([1, 2, 3, 4], table.fractions(s), color="tab:blue")
        ax.set_xticks([1, 2, 3, 4])
        ax.set_title(f"input {s}", fontsize=9)
        ax.set_xlabel("port")
    axes[0][0].set_ylabel("fraction")
    fig.tight_layout()
    _save(fig, path)


def plot_coupler_fit(samples: Dict[str, Tuple[np.ndarray, np.ndarray]], fits: Dict[str, CouplingFit],
                     path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for pol, color in (("H", "tab:blue"), ("V", "tab:red")):
        if pol not in samples:
            continue
        lengths, powers = samples[pol]
        ax.plot(lengths, powers, "o", color=color, ms=4, label=f"{pol} samples")
        if pol in fits:
            f = fits[pol]
            grid = np.linspace(0.0, float(np.max(lengths)) * 1.05, 400)
            ax.plot(grid, np.sin(f.kappa * (grid + f.arc_extra)) ** 2, "-", color=color, lw=1,
                    label=f"{pol} fit, kappa = {f.kappa:.4g}")
    ax.set_xlabel("coupling length (mm)")
    ax.set_ylabel("cross power")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_estimates(labels: Sequence[str], gains: Sequence[Tuple[float, float]],
                   qbers: Sequence[Tuple[float, float]], path: str | Path) -> None:
    x = np.arange(len(labels))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
    g = np.array(gains, dtype=float).reshape(-1, 2)
    e = np.array(qbers, dtype=float).reshape(-1, 2)
    for ax, data, ylabel in ((a1, g, "gain per pulse pair"), (a2, e, "QBER")):
        ax.bar(x - 0.18, data[:, 0], 0.36, label="rectilinear")
        ax.bar(x + 0.18, data[:, 1], 0.36, label="diagonal")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=8)
        ax.set_ylabel(ylabel)
    a1.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
