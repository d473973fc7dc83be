import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdinet.bsa import (
    OUTCOME_CODE,
    PAIR_MASKS,
    PAIR_NAMES,
    BellOutcome,
    HomCurve,
    HomSource,
    ProjectionTable,
    classify,
    extinction_ratio,
    hom_point_distribution,
    hom_scan,
    projection_probabilities,
    projection_test,
    visibility,
)
from mdinet.devices import (
    IN1,
    IN2,
    PERFECT_DETECTOR,
    AnalyzerModel,
    ClickPattern,
    DetectorParams,
    Extinction,
    analyzer_unitary,
    click_distribution,
    input_modes,
)
from mdinet.optics import two_photon_state_distribution

from . import oracles

S = 1 / math.sqrt(2)


def bell_coefficients(name):
    """Bell state of Alice's photon (In1) and Bob's photon (In2) as a coefficient matrix."""
    c = np.zeros((8, 8), dtype=complex)
    h1, v1, h2, v2 = 2 * IN1, 2 * IN1 + 1, 2 * IN2, 2 * IN2 + 1
    sign = -1 if name.endswith("-") else 1
    if name.startswith("psi"):
        c[h1, v2], c[v1, h2] = S, sign * S
    else:
        c[h1, h2], c[v1, v2] = S, sign * S
    return c


def bell_clicks(name):
    U = analyzer_unitary(AnalyzerModel())
    return click_distribution(two_photon_state_distribution(U, bell_coefficients(name), 1.0),
                              [PERFECT_DETECTOR] * 4)


def oracle_bell_clicks(name):
    """Same quantity from permanents: linear superposition of Fock amplitudes."""
    U = analyzer_unitary(AnalyzerModel()).matrix
    c = bell_coefficients(name)
    amp = {}
    for m, n in zip(*np.nonzero(c)):
        for k in range(8):
            for l in range(k, 8):
                sub = U[np.ix_([k, l], [m, n])]
                a = oracles.permanent(sub) * c[m, n]
                if k == l:
                    a *= 1 / math.sqrt(2)
                amp[(k, l)] = amp.get((k, l), 0) + a
    out = np.zeros(16)
    for (k, l), a in amp.items():
        out[(1 << (k // 2)) | (1 << (l // 2))] += abs(a) ** 2
    return out / out.sum()


# --- classification --------------------------------------------------------------


def test_classify_examples():
    assert classify(ClickPattern(frozenset({1, 2}))) is BellOutcome.PSI_PLUS
    assert classify(ClickPattern(frozenset({3, 4}))) is BellOutcome.PSI_PLUS
    assert classify(ClickPattern(frozenset({1, 3}))) is BellOutcome.PSI_MINUS
    assert classify(ClickPattern(frozenset({2, 4}))) is BellOutcome.PSI_MINUS
    assert classify(ClickPattern(frozenset({1, 4}))) is BellOutcome.INCONCLUSIVE


def test_classify_all_masks():
    conclusive = {PAIR_MASKS[0]: BellOutcome.PSI_PLUS, PAIR_MASKS[5]: BellOutcome.PSI_PLUS,
                  PAIR_MASKS[1]: BellOutcome.PSI_MINUS, PAIR_MASKS[4]: BellOutcome.PSI_MINUS}
    for mask in range(16):
        assert classify(mask) is conclusive.get(mask, BellOutcome.INCONCLUSIVE)
        assert classify(ClickPattern.from_mask(mask)) is classify(mask)
    assert int(np.count_nonzero(OUTCOME_CODE)) == 4


@pytest.mark.parametrize("name", ["psi+", "psi-", "phi+", "phi-"])
def test_bell_states_match_permanent_oracle(name):
    assert np.allclose(bell_clicks(name), oracle_bell_clicks(name), atol=1e-12)


def test_bell_discrimination():
    pp, pm = bell_clicks("psi+"), bell_clicks("psi-")
    m12, m13, m14, m23, m24, m34 = PAIR_MASKS
    assert pp[m12] == pytest.approx(0.5, abs=1e-10) and pp[m34] == pytest.approx(0.5, abs=1e-10)
    assert pm[m13] == pytest.approx(0.5, abs=1e-10) and pm[m24] == pytest.approx(0.5, abs=1e-10)
    for name in ("phi+", "phi-"):
        d = bell_clicks(name)
        assert sum(d[m] for m in np.flatnonzero(OUTCOME_CODE)) < 1e-10
    assert np.allclose(bell_clicks("phi+"), bell_clicks("phi-"), atol=1e-10)


# --- HOM ------------------------------------------------------------------------


def ideal_point(delay, source=HomSource()):
    return hom_point_distribution(analyzer_unitary(AnalyzerModel()), source, delay, [PERFECT_DETECTOR] * 4)


def test_classical_plateau_c13_is_one_eighth():
    d = ideal_point(1e3)
    assert d[PAIR_MASKS[PAIR_NAMES.index("c13")]] == pytest.approx(1 / 8, abs=1e-12)
    # oracle: independent photons enumerated mode by mode
    U = analyzer_unitary(AnalyzerModel()).matrix
    pa = np.abs(U @ input_modes((S, S), IN1)) ** 2
    pb = np.abs(U @ input_modes((S, S), IN2)) ** 2
    want = oracles.enumerate_clicks([pa, pb], [1.0] * 8, [0.0] * 4)
    assert np.allclose(d, want, atol=1e-12)


def test_zero_delay_suppresses_c14_c23():
    d = ideal_point(0.0)
    assert d[PAIR_MASKS[PAIR_NAMES.index("c14")]] < 1e-12
    assert d[PAIR_MASKS[PAIR_NAMES.index("c23")]] < 1e-12


def test_width_mismatch_sets_dip_visibility():
    # x^2 = 2 r / (1 + r^2) = 0.92 for width ratio r
    r = (1 + math.sqrt(1 - 0.92**2)) / 0.92
    src = HomSource(1.0, r)
    curve = hom_scan(AnalyzerModel(), src, np.linspace(-8 * r, 8 * r, 41), 1_000_000, seed=4)
    for pair in ("c14", "c23"):
        v = visibility(curve, pair)
        assert not v.peaked
        assert v.value == pytest.approx(0.92, abs=0.02)


def test_hom_scan_jobs_independent():
    delays = np.linspace(-3, 3, 7)
    a = hom_scan(AnalyzerModel(), HomSource(), delays, 10_000, seed=12, jobs=1)
    b = hom_scan(AnalyzerModel(), HomSource(), delays, 10_000, seed=12, jobs=2)
    assert np.array_equal(a.counts, b.counts)
    c = hom_scan(AnalyzerModel(), HomSource(), delays, 10_000, seed=13)
    assert not np.array_equal(a.counts, c.counts)


def test_hom_scan_rejects_bad_arguments():
    with pytest.raises(ValueError):
        hom_scan(AnalyzerModel(), HomSource(), [], 10, seed=0)
    with pytest.raises(ValueError):
        hom_scan(AnalyzerModel(), HomSource(), [0.0], 0, seed=0)


def test_multi_pair_background_lowers_visibility():
    U = analyzer_unitary(AnalyzerModel())
    dets = [DetectorParams(0.5, 0.0)] * 4
    i = PAIR_MASKS[PAIR_NAMES.index("c14")]

    def vis(q):
        src = HomSource(multi_pair_fraction=q)
        far, near = hom_point_distribution(U, src, 1e3, dets), hom_point_distribution(U, src, 0.0, dets)
        return (far[i] - near[i]) / far[i]

    assert vis(0.0) == pytest.approx(1.0, abs=1e-12)
    assert vis(0.05) < vis(0.01) < 1.0


# --- visibility ---------------------------------------------------------------------


def curve_from_pair(values, name="c14"):
    counts = np.zeros((len(values), 6), dtype=np.int64)
    counts[:, PAIR_NAMES.index(name)] = values
    return HomCurve(np.arange(len(values), dtype=float), counts, 0)


def test_visibility_examples():
    v = visibility(curve_from_pair([1000] * 5 + [80] + [1000] * 5), "c14")
    assert v.value == pytest.approx(0.92) and not v.peaked
    assert visibility(curve_from_pair([500] * 11), "c14").value == 0.0
    peak = visibility(curve_from_pair([1000] * 5 + [2000] + [1000] * 5), "c14")
    assert peak.peaked and peak.value == pytest.approx(1.0)


def test_visibility_zero_plateau_errors():
    with pytest.raises(ValueError):
        visibility(curve_from_pair([0] * 11), "c14")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 10**6), min_size=5, max_size=40))
def test_visibility_bounds(values):
    v = visibility(curve_from_pair(values), "c14")
    assert v.value >= 0
    if not v.peaked:
        assert v.value <= 1


# --- projection and extinction -------------------------------------------------


def test_extinction_ratio_examples():
    t = ProjectionTable({"H": np.array([2950, 50, 50, 2950])})
    assert extinction_ratio(t) == pytest.approx(59.0)
    assert extinction_ratio(ProjectionTable({"H": np.array([10, 0, 0, 10])})) == math.inf
    with pytest.raises(ValueError):
        extinction_ratio(ProjectionTable({"D": np.array([1, 1, 1, 1])}))


def test_ideal_projection_probabilities():
    a = AnalyzerModel()
    assert np.allclose(projection_probabilities(a, "H"), [0.5, 0, 0, 0.5], atol=1e-12)
    assert np.allclose(projection_probabilities(a, "V"), [0, 0.5, 0.5, 0], atol=1e-12)
    assert np.allclose(projection_probabilities(a, "D"), [0.25] * 4, atol=1e-12)
    assert np.allclose(projection_probabilities(a, "A", input_port=2), [0.25] * 4, atol=1e-12)


def test_projection_sampling():
    rng = np.random.default_rng(0)
    row = projection_test(AnalyzerModel(), "D", 100_000, rng)
    assert row.sum() == 100_000
    assert np.allclose(row / 1e5, 0.25, atol=0.006)
    with pytest.raises(ValueError):
        projection_test(AnalyzerModel(), "H", 0, rng)


def test_projection_extinction_from_pdc_leakage():
    ext = Extinction(59.0, 59.0)
    a = AnalyzerModel(extinction_a=ext, extinction_b=ext)
    p = projection_probabilities(a, "H")
    assert (p[0] + p[3]) / (p[1] + p[2]) == pytest.approx(59.0, rel=1e-9)
