"""Text formats: comma-separated tables and key-value reports.

Everything is written as UTF-8 with LF line endings and ``repr`` floats, so
output is locale-independent and every CSV reads back to the identical object.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .bsa import PAIR_NAMES, STATE_ORDER, HomCurve, ProjectionTable
from .protocol import CoincidenceTable

HOM_HEADER = ["delay_ps", *PAIR_NAMES]
PROJECTION_HEADER = ["input_state", "p1", "p2", "p3", "p4"]
COINCIDENCE_HEADER = ["alice", "bob", *PAIR_NAMES, "pulses"]
COUPLER_HEADER = ["coupling_length_mm", "cross_power", "polarization"]


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based (0 when the whole file is at fault)."""

    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def _write(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) for x in r])
    return buf.getvalue()


def _read(text: str, header: Sequence[str]) -> List[Tuple[int, List[str]]]:
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("file is empty")
    rows = list(csv.reader(lines))
    if [h.strip() for h in rows[0]] != list(header):
        raise ParseError(f"expected header {','.join(header)}, got {lines[0]!r}", 1)
    out = []
    for i, r in enumerate(rows[1:], start=2):
        if not r or all(not x.strip() for x in r):
            continue
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", i)
        out.append((i, [x.strip() for x in r]))
    return out


def _float(s: str, line: int, name: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ParseError(f"{name}: not a number: {s!r}", line) from None


def _count(s: str, line: int, name: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise ParseError(f"{name}: not an integer: {s!r}", line) from None
    if v < 0:
        raise ParseError(f"{name}: negative count {v}", line)
    return v


def write_text(path: str | Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def read_text(path: str | Path) -> str:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return f.read()


# --- HOM curves ------------------------------------------------------------


def hom_to_csv(curve: HomCurve) -> str:
    return _write(([d, *row] for d, row in zip(curve.delays, curve.counts)), HOM_HEADER)


def hom_from_csv(text: str, trials_per_point: int = 0) -> HomCurve:
    rows = _read(text, HOM_HEADER)
    if not rows:
        raise ParseError("no data rows")
    delays = [_float(r[0], i, "delay_ps") for i, r in rows]
    counts = [[_count(x, i, n) for x, n in zip(r[1:], PAIR_NAMES)] for i, r in rows]
    try:
        return HomCurve(np.array(delays), np.array(counts, dtype=np.int64), trials_per_point)
    except ValueError as e:
        raise ParseError(str(e)) from None


# --- projection tables -----------------------------------------------------


def projection_to_csv(t: ProjectionTable) -> str:
    order = [s for s in STATE_ORDER if s in t.counts]
    return _write(([s, *t.counts[s]] for s in order), PROJECTION_HEADER)


def projection_from_csv(text: str) -> ProjectionTable:
    counts = {}
    for i, r in _read(text, PROJECTION_HEADER):
        if r[0] not in STATE_ORDER:
            raise ParseError(f"input_state: unknown state {r[0]!r}", i)
        if r[0] in counts:
            raise ParseError(f"input_state: duplicate row {r[0]}", i)
        counts[r[0]] = np.array([_count(x, i, f"p{k}") for k, x in enumerate(r[1:], start=1)])
    if not counts:
        raise ParseError("no data rows")
    return ProjectionTable(counts)


# --- coincidence tables ----------------------------------------------------


def coincidence_to_csv(t: CoincidenceTable) -> str:
    def order(k):
        return STATE_ORDER.index(k[0]), STATE_ORDER.index(k[1])

    return _write(([a, b, *t.counts[(a, b)], t.pulses[(a, b)]] for a, b in sorted(t.counts, key=order)),
                  COINCIDENCE_HEADER)


def coincidence_from_csv(text: str) -> CoincidenceTable:
    t = CoincidenceTable()
    seen = set()
    for i, r in _read(text, COINCIDENCE_HEADER):
        a, b = r[0], r[1]
        for name, s in (("alice", a), ("bob", b)):
            if s not in STATE_ORDER:
                raise ParseError(f"{name}: unknown state {s!r}", i)
        if (a, b) in seen:
            raise ParseError(f"duplicate row {a},{b}", i)
        seen.add((a, b))
        row = [_count(x, i, n) for x, n in zip(r[2:8], PAIR_NAMES)]
        t.add(a, b, row, _count(r[8], i, "pulses"))
    return t


# --- coupler curves --------------------------------------------------------


def coupler_to_csv(samples: Dict[str, Tuple[Sequence[float], Sequence[float]]]) -> str:
    rows = []
    for pol in ("H", "V"):
        if pol in samples:
            rows += [(length, power, pol) for length, power in zip(*samples[pol])]
    return _write(rows, COUPLER_HEADER)


def coupler_from_csv(text: str) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Samples per polarization: ``{"H": (lengths, powers), ...}``."""
    data: Dict[str, Tuple[List[float], List[float]]] = {}
    for i, r in _read(text, COUPLER_HEADER):
        length = _float(r[0], i, "coupling_length_mm")
        power = _float(r[1], i, "cross_power")
        if not length >= 0:
            raise ParseError(f"coupling_length_mm: must be >= 0, got {length}", i)
        if not 0.0 <= power <= 1.0:
            raise ParseError(f"cross_power: must lie in [0, 1], got {power}", i)
        if r[2] not in ("H", "V"):
            raise ParseError(f"polarization: expected H or V, got {r[2]!r}", i)
        ls, ps = data.setdefault(r[2], ([], []))
        ls.append(length)
        ps.append(power)
    if not data:
        raise ParseError("no data rows")
    return {pol: (np.array(ls), np.array(ps)) for pol, (ls, ps) in data.items()}


# --- key-value reports -----------------------------------------------------


def kv_to_text(pairs: Iterable[Tuple[str, object]]) -> str:
    out = []
    for k, v in pairs:
        if "=" in k or "\n" in k:
            raise ValueError(f"bad report key {k!r}")
        out.append(f"{k} = {fmt(v)}\n")
    return "".join(out)


def kv_from_text(text: str) -> Dict[str, str]:
    out = {}
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if " = " not in line:
            raise ParseError("expected 'key = value'", i)
        k, v = line.split(" = ", 1)
        out[k.strip()] = v.strip()
    return out
