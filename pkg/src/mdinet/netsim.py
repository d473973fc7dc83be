"""Star-topology network: clients, a server with an analyzer array, scheduling and sessions.

Each session runs one MDI-QKD exchange between two clients on one analyzer.
Two interchangeable engines produce its coincidence tables:

``method="exact"``
    For every input condition (Alice state, Bob state, intensity pair) the
    probability of each of the 16 click subsets is computed analytically by
    enumerating emitted and surviving photon numbers.  Per-condition pulse
    counts and click counts are then multinomial draws.  The cost does not
    depend on ``pulse_pairs``, so runs of 10^10 pulse pairs are cheap.
``method="pulse"``
    A direct Monte Carlo of every round: sample bits, bases and emissions,
    push each photon through its channel, sample detectors, classify, and sift
    with :func:`mdinet.protocol.sift`.  Slow, but independent of the exact path
    and used to cross-check it.

Photon-number rules shared by both engines: a round where exactly one photon
of each client reaches the analyzer interferes with the delay-dependent
overlap, unless either SPDC source emitted a double pair (then the round is
treated as classical).  Every other round is treated as independent,
distinguishable photons.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import stats

from .bsa import OUTCOME_CODE, OUTCOME_FROM_CODE, PAIR_MASKS, POLARIZATIONS, BellOutcome
from .devices import (
    IN1,
    IN2,
    SPDC,
    AnalyzerModel,
    ChannelParams,
    DetectorParams,
    SourceModel,
    analyzer_unitary,
    apply_channel,
    click_distribution,
    detect,
    independent_click_distribution,
    input_modes,
    mode_efficiencies,
    rotate_polarization,
    sample_emission,
)
from .optics import ModeUnitary, PhotonPairInput, Wavepacket, single_photon_distribution, two_photon_distribution
from .protocol import (
    DIAG,
    RECT,
    CoincidenceTable,
    EncodedPulse,
    SiftedKeyPair,
    DIAG_ROWS,
    RECT_ROWS,
    bob_flips,
    c_sum,
    decode,
    encode,
    estimates,
    sift,
)

STATES = ("H", "V", "D", "A")


class ScheduleError(ValueError):
    """Invalid request or switch-state violation."""


# --------------------------------------------------------------------------
# topology
# --------------------------------------------------------------------------


def channels_required(topology: str, n_clients: int) -> int:
    """Quantum channels to connect any two of ``n_clients``: star N, mesh N(N-1)/2."""
    if n_clients < 2:
        raise ValueError(f"need at least 2 clients, got {n_clients}")
    if topology == "star":
        return n_clients
    if topology == "mesh":
        return n_clients * (n_clients - 1) // 2
    raise ValueError(f"unknown topology {topology!r}")


@dataclass(frozen=True)
class ClientNode:
    id: str
    source: SourceModel = field(default_factory=SourceModel)
    channel: ChannelParams = field(default_factory=ChannelParams)
    pulse_rate: float = 1e6  # pulses/s, bookkeeping only
    rect_prob: float = 0.5  # probability of choosing the rectilinear basis

    def __post_init__(self):
        if not self.id:
            raise ValueError("client id must be non-empty")
        if not self.pulse_rate > 0:
            raise ValueError(f"pulse_rate must be positive, got {self.pulse_rate}")
        if not 0.0 <= self.rect_prob <= 1.0:
            raise ValueError(f"rect_prob {self.rect_prob} outside [0, 1]")


@dataclass(frozen=True)
class SessionRequest:
    client_a: str
    client_b: str
    pulse_pairs: int

    def __post_init__(self):
        if self.client_a == self.client_b:
            raise ValueError(f"session needs two distinct clients, got {self.client_a!r} twice")
        if self.pulse_pairs <= 0:
            raise ValueError(f"pulse_pairs must be positive, got {self.pulse_pairs}")


class ServerNode:
    """Analyzer array behind an all-optical router.

    ``switch_state`` maps a client id to ``(analyzer index, input port)``.
    """

    def __init__(self, analyzers: Sequence[AnalyzerModel], detectors: Sequence[DetectorParams],
                 switch_loss_db: float = 0.0):
        if not analyzers:
            raise ValueError("server needs at least one analyzer")
        if len(detectors) != 4:
            raise ValueError(f"need 4 detectors per analyzer, got {len(detectors)}")
        if switch_loss_db < 0:
            raise ValueError("switch_loss_db must be >= 0")
        self.analyzers = list(analyzers)
        self.detectors = list(detectors)
        self.switch_loss_db = float(switch_loss_db)
        self.switch_state: Dict[str, Tuple[int, int]] = {}

    @property
    def size(self) -> int:
        return len(self.analyzers)

    def free_analyzers(self) -> List[int]:
        busy = {a for a, _ in self.switch_state.values()}
        return [i for i in range(self.size) if i not in busy]

    def connect(self, client_a: str, client_b: str, analyzer: int) -> None:
        for c in (client_a, client_b):
            if c in self.switch_state:
                raise ScheduleError(f"client {c!r} already switched to analyzer {self.switch_state[c][0]}")
        if analyzer not in self.free_analyzers():
            raise ScheduleError(f"analyzer {analyzer} is not free")
        self.switch_state[client_a] = (analyzer, 1)
        self.switch_state[client_b] = (analyzer, 2)
        self.check_invariant()

    def release(self, analyzer: int) -> None:
        for c in [c for c, (a, _) in self.switch_state.items() if a == analyzer]:
            del self.switch_state[c]
        self.check_invariant()

    def check_invariant(self) -> None:
        """Every analyzer serves 0 or 2 clients, one per input port."""
        ports: Dict[int, List[int]] = {}
        for a, port in self.switch_state.values():
            if not 0 <= a < self.size:
                raise ScheduleError(f"switch state references analyzer {a}")
            ports.setdefault(a, []).append(port)
        for a, p in ports.items():
            if sorted(p) != [1, 2]:
                raise ScheduleError(f"analyzer {a} has input ports {sorted(p)} assigned")


@dataclass(frozen=True)
class ScheduledSession:
    index: int  # position in the request list
    request: SessionRequest
    analyzer: int
    start: float
    end: float


@dataclass
class SchedulePlan:
    sessions: List[ScheduledSession]
    max_concurrent: int
    max_queue: int
    clock: List[float]  # event times in processing order

    @property
    def makespan(self) -> float:
        return max((s.end for s in self.sessions), default=0.0)


def session_duration(request: SessionRequest, clients: Dict[str, ClientNode]) -> float:
    rate = min(clients[request.client_a].pulse_rate, clients[request.client_b].pulse_rate)
    return request.pulse_pairs / rate


def schedule(requests: Sequence[SessionRequest], server: ServerNode,
             clients: Dict[str, ClientNode]) -> SchedulePlan:
    """Greedy FIFO assignment on a virtual event clock.

    At every event time the queue is scanned in request order and each request
    whose two clients are idle starts on the lowest-index free analyzer.  A
    client has a single channel, so requests sharing a client serialize.
    The switch-state invariant is checked after every change.
    """
    for r in requests:
        for c in (r.client_a, r.client_b):
            if c not in clients:
                raise ScheduleError(f"request names unknown client {c!r}")
    server.switch_state.clear()
    queue = list(range(len(requests)))
    running: List[Tuple[float, int, int]] = []  # (end, request index, analyzer)
    out: List[ScheduledSession] = []
    clock: List[float] = []
    now = 0.0
    max_conc = max_queue = 0
    while queue or running:
        clock.append(now)
        while running and running[0][0] <= now:
            _, _, a = heapq.heappop(running)
            server.release(a)
        for i in list(queue):
            r = requests[i]
            free = server.free_analyzers()
            if not free:
                break
            if r.client_a in server.switch_state or r.client_b in server.switch_state:
                continue
            a = free[0]
            server.connect(r.client_a, r.client_b, a)
            end = now + session_duration(r, clients)
            heapq.heappush(running, (end, i, a))
            out.append(ScheduledSession(i, r, a, now, end))
            queue.remove(i)
        max_conc = max(max_conc, len(running))
        max_queue = max(max_queue, len(queue))
        if running:
            nxt = running[0][0]
            if nxt < now:
                raise ScheduleError("event clock moved backwards")
            now = nxt
        elif queue:
            raise ScheduleError("queued requests can never start")
    server.switch_state.clear()
    return SchedulePlan(out, max_conc, max_queue, clock)


# --------------------------------------------------------------------------
# sessions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Link:
    """Everything about one client's path into the analyzer."""

    source: SourceModel
    channel: ChannelParams
    guide: int
    extra_loss_db: float = 0.0
    rect_prob: float = 0.5

    @property
    def transmission(self) -> float:
        return self.channel.transmission * 10.0 ** (-self.extra_loss_db / 10.0)

    def photon(self, state: str) -> Wavepacket:
        amps = rotate_polarization(input_modes(POLARIZATIONS[state], self.guide), self.channel.misalignment)
        return Wavepacket(amps, self.channel.delay, self.source.width)

    def state_probs(self) -> Dict[str, float]:
        r = self.rect_prob
        return {"H": r / 2, "V": r / 2, "D": (1 - r) / 2, "A": (1 - r) / 2}


@dataclass
class SessionContext:
    unitary: ModeUnitary
    detectors: List[DetectorParams]
    pol_transmission: Tuple[float, float]
    link_a: Link
    link_b: Link


def make_context(a: ClientNode, b: ClientNode, analyzer: AnalyzerModel, detectors: Sequence[DetectorParams],
                 switch_loss_db: float = 0.0) -> SessionContext:
    return SessionContext(
        analyzer_unitary(analyzer), list(detectors), analyzer.pol_transmission,
        Link(a.source, a.channel, IN1, switch_loss_db, a.rect_prob),
        Link(b.source, b.channel, IN2, switch_loss_db, b.rect_prob),
    )


def _arrival_terms(link: Link, setting: int):
    """``[(probability, arrived photons, multi-pair flag)]`` for one client and setting."""
    src = link.source
    t = link.transmission
    terms: Dict[Tuple[int, bool], float] = {}
    for n, pn in enumerate(src.photon_number_probs(setting)):
        if pn == 0:
            continue
        multi = src.kind == SPDC and n >= 2
        for k in range(n + 1):
            w = pn * stats.binom.pmf(k, n, t)
            if w > 0:
                terms[(k, multi)] = terms.get((k, multi), 0.0) + w
    return [(w, k, m) for (k, m), w in sorted(terms.items())]


def condition_distribution(ctx: SessionContext, alice: str, bob: str, setting_a: int = 0,
                           setting_b: int = 0) -> np.ndarray:
    """Exact probability of each click subset for one input condition."""
    pa, pb = ctx.link_a.photon(alice), ctx.link_b.photon(bob)
    ma = single_photon_distribution(ctx.unitary, pa.amplitudes)
    mb = single_photon_distribution(ctx.unitary, pb.amplitudes)
    out = np.zeros(16)
    cache = {}
    for wa, ka, multi_a in _arrival_terms(ctx.link_a, setting_a):
        for wb, kb, multi_b in _arrival_terms(ctx.link_b, setting_b):
            coherent = ka == 1 and kb == 1 and not (multi_a or multi_b)
            key = (ka, kb, coherent)
            if key not in cache:
                if coherent:
                    dist = two_photon_distribution(ctx.unitary, PhotonPairInput(pa, pb))
                    cache[key] = click_distribution(dist, ctx.detectors, ctx.pol_transmission)
                else:
                    cache[key] = independent_click_distribution(
                        [ma] * ka + [mb] * kb, ctx.detectors, ctx.pol_transmission)
            out += wa * wb * cache[key]
    return out / out.sum()


def expected_rows(ctx: SessionContext, setting: Tuple[int, int] = (0, 0)) -> Dict[Tuple[str, str], np.ndarray]:
    """Per-pulse probability of each detector-pair coincidence for every input condition."""
    return {(a, b): condition_distribution(ctx, a, b, *setting)[list(PAIR_MASKS)] for a in STATES for b in STATES}


def expected_estimates(ctx: SessionContext, setting: Tuple[int, int] = (0, 0)) -> Dict[str, float]:
    """Noise-free gains and QBERs (the infinite-pulse limit of a session)."""
    rows = expected_rows(ctx, setting)
    cs = {k: float(c_sum(r)) for k, r in rows.items()}
    diag_err = sum(rows[k][1] + rows[k][4] for k in (("D", "D"), ("A", "A")))
    diag_err += sum(rows[k][0] + rows[k][5] for k in (("D", "A"), ("A", "D")))
    rect_den = sum(cs[k] for k in RECT_ROWS)
    diag_den = sum(cs[k] for k in DIAG_ROWS)
    return {
        "Q_rect": rect_den / 4.0,
        "Q_diag": diag_den / 4.0,
        "E_rect": (cs[("H", "H")] + cs[("V", "V")]) / rect_den if rect_den else math.nan,
        "E_diag": float(diag_err) / diag_den if diag_den else math.nan,
    }


@dataclass
class SessionResult:
    """Coincidence tables per intensity pair plus the two sifted keys."""

    tables: Dict[Tuple[int, int], CoincidenceTable]
    rect_key: SiftedKeyPair
    diag_key: SiftedKeyPair
    pulse_pairs: int
    conclusive: int

    def merged_table(self) -> CoincidenceTable:
        out = CoincidenceTable()
        for k in sorted(self.tables):
            out = out.merge(self.tables[k])
        return out


def _conditions(ctx: SessionContext):
    pa, pb = ctx.link_a.state_probs(), ctx.link_b.state_probs()
    sa_probs, sb_probs = ctx.link_a.source.setting_probs, ctx.link_b.source.setting_probs
    conds, probs = [], []
    for sa, psa in enumerate(sa_probs):
        for sb, psb in enumerate(sb_probs):
            for a in STATES:
                for b in STATES:
                    conds.append((a, b, sa, sb))
                    probs.append(psa * psb * pa[a] * pb[b])
    return conds, np.array(probs)


def _empty_tables(ctx: SessionContext) -> Dict[Tuple[int, int], CoincidenceTable]:
    return {(sa, sb): CoincidenceTable()
            for sa in range(ctx.link_a.source.n_settings) for sb in range(ctx.link_b.source.n_settings)}


def _run_exact(ctx: SessionContext, pulse_pairs: int, rng: np.random.Generator) -> SessionResult:
    conds, probs = _conditions(ctx)
    n_cond = rng.multinomial(pulse_pairs, probs / probs.sum())
    tables = _empty_tables(ctx)
    key_parts = {RECT: [], DIAG: []}
    conclusive = 0
    for (a, b, sa, sb), p, n in zip(conds, probs, n_cond):
        if p == 0:
            continue
        dist = condition_distribution(ctx, a, b, sa, sb)
        clicks = rng.multinomial(int(n), dist / dist.sum())
        tables[(sa, sb)].add(a, b, clicks[list(PAIR_MASKS)], int(n))
        bit_a, basis_a = decode(a)
        bit_b, basis_b = decode(b)
        for mask in np.flatnonzero(OUTCOME_CODE):
            c = int(clicks[mask])
            if c == 0:
                continue
            conclusive += c
            if basis_a != basis_b:
                continue
            outcome = OUTCOME_FROM_CODE[OUTCOME_CODE[mask]]
            key_parts[basis_a].append((c, bit_a, bit_b ^ int(bob_flips(basis_a, outcome)), outcome, sa, sb))
    keys = []
    for basis in (RECT, DIAG):
        parts = key_parts[basis]
        ab = np.concatenate([np.full(c, x, dtype=np.int8) for c, x, *_ in parts]) if parts else np.zeros(0, np.int8)
        bb = np.concatenate([np.full(c, y, dtype=np.int8) for c, _, y, *_ in parts]) if parts else np.zeros(0, np.int8)
        ann = [o for c, _, _, o, _, _ in parts for _ in range(c)]
        sets = np.array([(sa, sb) for c, *_, sa, sb in parts for _ in range(c)], dtype=np.int64).reshape(-1, 2)
        order = rng.permutation(len(ab))  # interleave events as they would arrive
        keys.append(SiftedKeyPair(basis, ab[order], bb[order], [ann[i] for i in order], sets[order]))
    return SessionResult(tables, keys[0], keys[1], pulse_pairs, conclusive)


def _sample_state(link: Link, rng: np.random.Generator) -> Tuple[int, str]:
    basis = RECT if rng.random() < link.rect_prob else DIAG
    return int(rng.integers(2)), basis


def _pulse_clicks(ctx: SessionContext, photons_a: List[Wavepacket], photons_b: List[Wavepacket],
                  coherent_ok: bool, rng: np.random.Generator) -> int:
    """Click mask of one round, sampled photon by photon."""
    if coherent_ok and len(photons_a) == 1 and len(photons_b) == 1:
        dist = two_photon_distribution(ctx.unitary, PhotonPairInput(photons_a[0], photons_b[0]))
        return detect(dist, ctx.detectors, rng, ctx.pol_transmission).mask
    eta = mode_efficiencies(ctx.detectors, ctx.pol_transmission)
    mask = 0
    for w in photons_a + photons_b:
        probs = single_photon_distribution(ctx.unitary, w.amplitudes)
        mode = int(rng.choice(probs.size, p=probs / probs.sum()))
        if rng.random() < eta[mode]:
            mask |= 1 << (mode // 2)
    for port, d in enumerate(ctx.detectors):
        if d.dark_prob and rng.random() < d.dark_prob:
            mask |= 1 << port
    return mask


def _emit(link: Link, state: str, rng: np.random.Generator):
    em = sample_emission(link.source, rng)
    channel = ChannelParams(link.channel.loss_db + link.extra_loss_db, link.channel.misalignment,
                            link.channel.delay)
    base = Wavepacket(input_modes(POLARIZATIONS[state], link.guide), 0.0, link.source.width)
    photons = [w for w in (apply_channel(channel, base, rng) for _ in range(em.photons)) if w is not None]
    multi = link.source.kind == SPDC and em.multi_pair
    return em, photons, multi


def _run_pulse(ctx: SessionContext, pulse_pairs: int, rng: np.random.Generator) -> SessionResult:
    tables = _empty_tables(ctx)
    alice_stream, bob_stream, announcements = [], [], []
    conclusive = 0
    for _ in range(pulse_pairs):
        bit_a, basis_a = _sample_state(ctx.link_a, rng)
        bit_b, basis_b = _sample_state(ctx.link_b, rng)
        sa_state, sb_state = encode(bit_a, basis_a), encode(bit_b, basis_b)
        em_a, ph_a, multi_a = _emit(ctx.link_a, sa_state, rng)
        em_b, ph_b, multi_b = _emit(ctx.link_b, sb_state, rng)
        mask = _pulse_clicks(ctx, ph_a, ph_b, not (multi_a or multi_b), rng)
        row = np.array([int(mask == m) for m in PAIR_MASKS])
        tables[(em_a.setting, em_b.setting)].add(sa_state, sb_state, row, 1)
        outcome = OUTCOME_FROM_CODE[OUTCOME_CODE[mask]]
        conclusive += outcome is not BellOutcome.INCONCLUSIVE
        alice_stream.append(EncodedPulse(bit_a, basis_a, em_a.setting))
        bob_stream.append(EncodedPulse(bit_b, basis_b, em_b.setting))
        announcements.append(outcome)
    rect, diag = sift(alice_stream, bob_stream, announcements)
    return SessionResult(tables, rect, diag, pulse_pairs, conclusive)


def run_session(ctx: SessionContext, pulse_pairs: int, rng: np.random.Generator,
                method: str = "exact") -> SessionResult:
    if pulse_pairs <= 0:
        raise ValueError(f"pulse_pairs must be positive, got {pulse_pairs}")
    if method == "exact":
        return _run_exact(ctx, pulse_pairs, rng)
    if method == "pulse":
        return _run_pulse(ctx, pulse_pairs, rng)
    raise ValueError(f"unknown session method {method!r}")


def session_rng(seed: int, index: int) -> np.random.Generator:
    """Isolated stream of session ``index``; independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


# --------------------------------------------------------------------------
# simulation driver
# --------------------------------------------------------------------------


@dataclass
class SessionReport:
    index: int
    client_a: str
    client_b: str
    analyzer: int
    start: float
    end: float
    result: SessionResult

    @property
    def table(self) -> CoincidenceTable:
        return self.result.merged_table()

    def estimates(self) -> Dict[str, float]:
        return estimates(self.table)

    @property
    def throughput(self) -> float:
        """Conclusive events per second of session time."""
        return self.result.conclusive / (self.end - self.start)


@dataclass
class SimulationReport:
    sessions: List[SessionReport]
    seed: int
    n_clients: int
    n_analyzers: int
    makespan: float
    max_concurrent: int

    @property
    def channels_used(self) -> int:
        return channels_required("star", self.n_clients)

    @property
    def mesh_channels(self) -> int:
        return channels_required("mesh", self.n_clients)

    @property
    def utilization(self) -> float:
        busy = sum(s.end - s.start for s in self.sessions)
        return busy / (self.n_analyzers * self.makespan) if self.makespan > 0 else 0.0

    def summary(self) -> List[Tuple[str, object]]:
        """Ordered key-value pairs of the report."""
        rows: List[Tuple[str, object]] = [
            ("seed", self.seed), ("clients", self.n_clients), ("analyzers", self.n_analyzers),
            ("sessions", len(self.sessions)), ("channels_star", self.channels_used),
            ("channels_mesh", self.mesh_channels), ("makespan_s", self.makespan),
            ("max_concurrent", self.max_concurrent), ("analyzer_utilization", self.utilization),
        ]
        for s in self.sessions:
            p = f"session.{s.index}."
            rows += [(p + "clients", f"{s.client_a}-{s.client_b}"), (p + "analyzer", s.analyzer),
                     (p + "start_s", s.start), (p + "end_s", s.end),
                     (p + "pulse_pairs", s.result.pulse_pairs), (p + "conclusive", s.result.conclusive),
                     (p + "throughput_per_s", s.throughput),
                     (p + "sifted_rect", len(s.result.rect_key)), (p + "sifted_diag", len(s.result.diag_key))]
            rows += [(p + k, v) for k, v in s.estimates().items()]
            if len(s.result.tables) > 1:
                for (sa, sb), t in sorted(s.result.tables.items()):
                    rows += [(f"{p}setting.{sa}_{sb}.{k}", v) for k, v in estimates(t).items()]
        return rows


def _session_job(args):
    ctx, pulse_pairs, seed, index, method = args
    return run_session(ctx, pulse_pairs, session_rng(seed, index), method)


def run_simulation(clients: Sequence[ClientNode], server: ServerNode, requests: Sequence[SessionRequest],
                   seed: int, jobs: int = 1, method: str = "exact") -> SimulationReport:
    """Schedule all requests, run every session on its own RNG stream, collect the report.

    Session ``i`` of the request list always uses stream ``i``, so serial and
    parallel runs give identical reports.
    """
    by_id: Dict[str, ClientNode] = {}
    for c in clients:
        if c.id in by_id:
            raise ValueError(f"duplicate client id {c.id!r}")
        by_id[c.id] = c
    plan = schedule(requests, server, by_id)
    work = []
    for s in plan.sessions:
        ctx = make_context(by_id[s.request.client_a], by_id[s.request.client_b], server.analyzers[s.analyzer],
                           server.detectors, server.switch_loss_db)
        work.append((ctx, s.request.pulse_pairs, seed, s.index, method))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_session_job, work))
    else:
        results = [_session_job(w) for w in work]
    sessions = [SessionReport(s.index, s.request.client_a, s.request.client_b, s.analyzer, s.start, s.end, r)
                for s, r in zip(plan.sessions, results)]
    sessions.sort(key=lambda s: s.index)
    return SimulationReport(sessions, seed, len(by_id), server.size, plan.makespan, plan.max_concurrent)
