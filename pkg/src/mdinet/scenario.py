"""Scenario files: TOML documents describing clients, server, requests and scans.

Schema (every key optional unless marked required)::

    seed = 1                       # u64
    method = "exact"               # or "pulse"

    [server]
    analyzers = 1                  # number M of identical analyzers
    switch_loss_db = 0.0
    [server.analyzer]
    pic = "ideal"                  # "ideal" | "measured" | {h = 0.5, v = 0.5} | {kappa_h=, kappa_v=, length=}
    pdc = {kappa_h = 0.8, kappa_v = 1.0}      # length solved when absent
    extinction_through = inf       # PDC extinction overrides, both arms
    extinction_cross = inf
    birefringence_a = 0.0          # rad
    birefringence_b = 0.0
    pol_transmission = [1.0, 1.0]
    [[server.detectors]]           # exactly 4 entries, ports 1..4 (default: 4 x defaults)
    efficiency = 0.5
    dark_prob = 1e-5

    [[clients]]                    # required, >= 2
    id = "alice"                   # required
    pulse_rate = 1e6
    rect_prob = 0.5
    [clients.source]               # kind = "HeraldedSPDC" | "WeakCoherent"
    [clients.channel]              # loss_db, misalignment (rad), delay (ps)

    [[requests]]                   # default: one session between the first two clients
    clients = ["alice", "bob"]
    pulse_pairs = 1000000

    [hom]                          # HOM scan on analyzer 0 with the first two clients' photons
    delays = {start = -6.0, stop = 6.0, points = 41}     # or an explicit list
    trials = 1000000
    multi_pair_fraction = 0.0
    phase_mismatch = 0.0

    [projection]
    trials = 100000
    input_port = 1
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bsa import HomSource
from .devices import (
    PIC_MEASURED,
    SPDC,
    AnalyzerModel,
    ChannelParams,
    CouplerParams,
    DetectorParams,
    Extinction,
    PICModel,
    SourceModel,
    solve_pdc,
)
from .netsim import ClientNode, ServerNode, SessionRequest

BUILTIN_DIR = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    """Scenario validation failure; the message names the offending field."""


@dataclass
class HomSettings:
    delays: np.ndarray
    trials: int
    source: HomSource
    delay_offset: float  # channel-delay mismatch of photon b relative to a


@dataclass
class ProjectionSettings:
    trials: int = 100_000
    input_port: int = 1


@dataclass
class ScenarioConfig:
    seed: int
    method: str
    clients: List[ClientNode]
    analyzers: List[AnalyzerModel]
    detectors: List[DetectorParams]
    switch_loss_db: float
    requests: List[SessionRequest]
    hom: HomSettings
    projection: ProjectionSettings
    pdc_residual: float = 0.0
    source_path: Optional[str] = None

    def server(self) -> ServerNode:
        return ServerNode(self.analyzers, self.detectors, self.switch_loss_db)

    def client(self, cid: str) -> ClientNode:
        for c in self.clients:
            if c.id == cid:
                return c
        raise KeyError(cid)


# --------------------------------------------------------------------------
# field helpers
# --------------------------------------------------------------------------


def _table(d: Dict[str, Any], key: str, where: str) -> Dict[str, Any]:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"{where}{key}: expected a table")
    return v


def _num(d: Dict[str, Any], key: str, where: str, default: float, lo: float = -math.inf, hi: float = math.inf,
         lo_open: bool = False) -> float:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}{key}: expected a number, got {v!r}")
    v = float(v)
    if math.isnan(v) or v < lo or v > hi or (lo_open and v == lo):
        bound = "(" if lo_open else "["
        raise ConfigError(f"{where}{key}: value {v!r} outside {bound}{lo}, {hi}]")
    return v


def _int(d: Dict[str, Any], key: str, where: str, default: int, lo: int = 0) -> int:
    v = d.get(key, default)
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}{key}: expected an integer, got {v!r}")
    if v < lo:
        raise ConfigError(f"{where}{key}: value {v} below minimum {lo}")
    return v


def _check_keys(d: Dict[str, Any], allowed, where: str) -> None:
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


# --------------------------------------------------------------------------
# sections
# --------------------------------------------------------------------------


def _parse_pic(v, where: str):
    if v == "ideal":
        return PICModel()
    if v == "measured":
        return PICModel.from_table(PIC_MEASURED)
    if isinstance(v, dict):
        if "kappa_h" in v:
            _check_keys(v, ("kappa_h", "kappa_v", "length"), where)
            return CouplerParams(_num(v, "kappa_h", where + ".", 1.0, 0, lo_open=True),
                                 _num(v, "kappa_v", where + ".", 1.0, 0, lo_open=True),
                                 _num(v, "length", where + ".", math.pi / 4, 0))
        _check_keys(v, ("h", "v"), where)
        return PICModel({(1, "H"): _num(v, "h", where + ".", 0.5, 0, 1), (1, "V"): _num(v, "v", where + ".", 0.5, 0, 1)})
    raise ConfigError(f"{where}: expected \"ideal\", \"measured\" or a table, got {v!r}")


def _parse_analyzer(d: Dict[str, Any]) -> Tuple[AnalyzerModel, float]:
    w = "server.analyzer."
    _check_keys(d, ("pic", "pdc", "extinction_through", "extinction_cross", "birefringence_a", "birefringence_b",
                    "pol_transmission"), w[:-1])
    pic = _parse_pic(d.get("pic", "ideal"), w + "pic")
    pdc_d = _table(d, "pdc", w)
    _check_keys(pdc_d, ("kappa_h", "kappa_v", "length", "search_max"), w + "pdc")
    kh = _num(pdc_d, "kappa_h", w + "pdc.", 0.8, 0, lo_open=True)
    kv = _num(pdc_d, "kappa_v", w + "pdc.", 1.0, 0, lo_open=True)
    residual = 0.0
    if "length" in pdc_d:
        pdc = CouplerParams(kh, kv, _num(pdc_d, "length", w + "pdc.", 0.0, 0))
    else:
        if kh == kv:
            raise ConfigError(f"{w}pdc: kappa_h equals kappa_v, no PDC length exists")
        hi = _num(pdc_d, "search_max", w + "pdc.", 10.0, 0, lo_open=True)
        pdc, residual = solve_pdc(kh, kv, (0.0, hi))
    ext_t = _num(d, "extinction_through", w, math.inf, 0, lo_open=True)
    ext_c = _num(d, "extinction_cross", w, math.inf, 0, lo_open=True)
    ext = None if math.isinf(ext_t) and math.isinf(ext_c) else Extinction(ext_t, ext_c)
    pt = d.get("pol_transmission", [1.0, 1.0])
    if not isinstance(pt, list) or len(pt) != 2:
        raise ConfigError(f"{w}pol_transmission: expected a list of two numbers")
    pol_t = tuple(_num({"v": x}, "v", f"{w}pol_transmission[{i}] ", 1.0, 0, 1) for i, x in enumerate(pt))
    model = AnalyzerModel(pic=pic, pdc_a=pdc, pdc_b=pdc, extinction_a=ext, extinction_b=ext,
                          birefringence_a=_num(d, "birefringence_a", w, 0.0),
                          birefringence_b=_num(d, "birefringence_b", w, 0.0), pol_transmission=pol_t)
    return model, residual


def _parse_detectors(raw) -> List[DetectorParams]:
    if raw is None:
        return [DetectorParams() for _ in range(4)]
    if not isinstance(raw, list) or len(raw) != 4:
        raise ConfigError("server.detectors: expected exactly 4 entries (ports 1..4)")
    out = []
    for i, d in enumerate(raw):
        w = f"server.detectors[{i}]."
        _check_keys(d, ("efficiency", "dark_prob"), w[:-1])
        out.append(DetectorParams(_num(d, "efficiency", w, 0.5, 0, 1), _num(d, "dark_prob", w, 1e-5, 0, 1)))
    return out


def _parse_source(d: Dict[str, Any], where: str) -> SourceModel:
    _check_keys(d, ("kind", "pair_prob", "double_pair_prob", "heralding_eff", "intensities", "selection_probs",
                    "truncation", "width"), where[:-1])
    kind = d.get("kind", SPDC)
    if kind not in ("HeraldedSPDC", "WeakCoherent"):
        raise ConfigError(f"{where}kind: expected \"HeraldedSPDC\" or \"WeakCoherent\", got {kind!r}")
    mus = d.get("intensities", [0.1])
    sel = d.get("selection_probs", [1.0 / len(mus)] * len(mus) if isinstance(mus, list) and mus else [1.0])
    for name, v in (("intensities", mus), ("selection_probs", sel)):
        if not isinstance(v, list) or not v or not all(isinstance(x, (int, float)) for x in v):
            raise ConfigError(f"{where}{name}: expected a non-empty list of numbers")
    try:
        return SourceModel(kind=kind, pair_prob=_num(d, "pair_prob", where, 0.0, 0, 1),
                           double_pair_prob=_num(d, "double_pair_prob", where, 0.0, 0, 1),
                           heralding_eff=_num(d, "heralding_eff", where, 1.0, 0, 1),
                           intensities=tuple(float(x) for x in mus), selection_probs=tuple(float(x) for x in sel),
                           truncation=_int(d, "truncation", where, 2, 1),
                           width=_num(d, "width", where, 1.0, 0, lo_open=True))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{where[:-1]}: {e}") from None


def _parse_clients(raw) -> List[ClientNode]:
    if not isinstance(raw, list) or len(raw) < 2:
        raise ConfigError("clients: at least two [[clients]] entries are required")
    out, seen = [], set()
    for i, c in enumerate(raw):
        w = f"clients[{i}]."
        _check_keys(c, ("id", "pulse_rate", "rect_prob", "source", "channel"), w[:-1])
        cid = c.get("id")
        if not isinstance(cid, str) or not cid:
            raise ConfigError(f"{w}id: required non-empty string")
        if cid in seen:
            raise ConfigError(f"{w}id: duplicate client id {cid!r}")
        seen.add(cid)
        ch = _table(c, "channel", w)
        _check_keys(ch, ("loss_db", "misalignment", "delay"), w + "channel")
        channel = ChannelParams(_num(ch, "loss_db", w + "channel.", 0.0, 0), _num(ch, "misalignment", w + "channel.", 0.0),
                                _num(ch, "delay", w + "channel.", 0.0))
        out.append(ClientNode(cid, _parse_source(_table(c, "source", w), w + "source."), channel,
                              _num(c, "pulse_rate", w, 1e6, 0, lo_open=True), _num(c, "rect_prob", w, 0.5, 0, 1)))
    return out


def _parse_requests(raw, clients: List[ClientNode]) -> List[SessionRequest]:
    ids = {c.id for c in clients}
    if raw is None:
        return [SessionRequest(clients[0].id, clients[1].id, 1_000_000)]
    if not isinstance(raw, list):
        raise ConfigError("requests: expected an array of tables")
    out = []
    for i, r in enumerate(raw):
        w = f"requests[{i}]."
        _check_keys(r, ("clients", "pulse_pairs"), w[:-1])
        pair = r.get("clients")
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"{w}clients: expected two client ids")
        for cid in pair:
            if cid not in ids:
                raise ConfigError(f"{w}clients: unknown client {cid!r}")
        if pair[0] == pair[1]:
            raise ConfigError(f"{w}clients: a session needs two distinct clients")
        out.append(SessionRequest(pair[0], pair[1], _int(r, "pulse_pairs", w, 1_000_000, 1)))
    return out


def _parse_hom(d: Dict[str, Any], clients: List[ClientNode]) -> HomSettings:
    w = "hom."
    _check_keys(d, ("delays", "trials", "multi_pair_fraction", "phase_mismatch"), "hom")
    raw = d.get("delays", {"start": -6.0, "stop": 6.0, "points": 41})
    if isinstance(raw, dict):
        _check_keys(raw, ("start", "stop", "points"), "hom.delays")
        start = _num(raw, "start", w + "delays.", -6.0)
        stop = _num(raw, "stop", w + "delays.", 6.0)
        points = _int(raw, "points", w + "delays.", 41, 3)
        if stop <= start:
            raise ConfigError("hom.delays: stop must exceed start")
        delays = np.linspace(start, stop, points)
    elif isinstance(raw, list) and raw and all(isinstance(x, (int, float)) for x in raw):
        delays = np.array(raw, dtype=float)
        if delays.size > 1 and np.any(np.diff(delays) <= 0):
            raise ConfigError("hom.delays: values must be strictly increasing")
    else:
        raise ConfigError("hom.delays: expected {start, stop, points} or a list of numbers")
    a, b = clients[0], clients[1]
    src = HomSource(a.source.width, b.source.width, _num(d, "multi_pair_fraction", w, 0.0, 0, 1),
                    _num(d, "phase_mismatch", w, 0.0))
    return HomSettings(delays, _int(d, "trials", w, 1_000_000, 1), src, b.channel.delay - a.channel.delay)


def scenario_from_dict(doc: Dict[str, Any], source_path: Optional[str] = None) -> ScenarioConfig:
    _check_keys(doc, ("seed", "method", "server", "clients", "requests", "hom", "projection"), "scenario")
    seed = _int(doc, "seed", "", 0, 0)
    if seed >= 2**64:
        raise ConfigError("seed: must fit in an unsigned 64-bit integer")
    method = doc.get("method", "exact")
    if method not in ("exact", "pulse"):
        raise ConfigError(f"method: expected \"exact\" or \"pulse\", got {method!r}")
    server = _table(doc, "server", "")
    _check_keys(server, ("analyzers", "switch_loss_db", "analyzer", "detectors"), "server")
    m = _int(server, "analyzers", "server.", 1, 1)
    analyzer, residual = _parse_analyzer(_table(server, "analyzer", "server."))
    detectors = _parse_detectors(server.get("detectors"))
    clients = _parse_clients(doc.get("clients"))
    requests = _parse_requests(doc.get("requests"), clients)
    hom = _parse_hom(_table(doc, "hom", ""), clients)
    proj = _table(doc, "projection", "")
    _check_keys(proj, ("trials", "input_port"), "projection")
    port = _int(proj, "input_port", "projection.", 1, 1)
    if port not in (1, 2):
        raise ConfigError("projection.input_port: must be 1 or 2")
    return ScenarioConfig(seed, method, clients, [analyzer] * m, detectors,
                          _num(server, "switch_loss_db", "server.", 0.0, 0), requests, hom,
                          ProjectionSettings(_int(proj, "trials", "projection.", 100_000, 1), port),
                          residual, source_path)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario file.  Bare names resolve to the built-in scenarios."""
    p = Path(path)
    if not p.exists() and p.parent == Path("."):
        for name in (p.name, p.name + ".scn"):
            if (BUILTIN_DIR / name).exists():
                p = BUILTIN_DIR / name
                break
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read scenario {str(path)!r}: {e.strerror}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{p}: {e}") from None
    return scenario_from_dict(doc, str(p))


def builtin(name: str) -> Path:
    return BUILTIN_DIR / name
