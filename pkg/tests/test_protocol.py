import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdinet.bsa import STATE_ORDER, BellOutcome
from mdinet.protocol import (
    DIAG,
    DIAG_ROWS,
    RECT,
    RECT_ROWS,
    CoincidenceTable,
    EncodedPulse,
    UndefinedEstimate,
    bob_flips,
    c_sum,
    decode,
    encode,
    estimates,
    gain_diag,
    gain_rect,
    qber_diag,
    qber_rect,
    sift,
)

from . import oracles

ROWS = [(a, b) for a in STATE_ORDER for b in STATE_ORDER]
PSI_P, PSI_M, INC = BellOutcome.PSI_PLUS, BellOutcome.PSI_MINUS, BellOutcome.INCONCLUSIVE


def table_with_csums(values, rows, pulses=1_000_000):
    """Rows whose c12 entry carries the given per-pulse C_Sum."""
    t = CoincidenceTable()
    for key, v in zip(rows, values):
        t.add(*key, [round(v * pulses), 0, 0, 0, 0, 0], pulses)
    return t


def full_table(rows):
    t = CoincidenceTable()
    for key in ROWS:
        t.add(*key, rows.get(key, [0] * 6), 100)
    return t


tables = st.builds(
    lambda counts, pulses: _make(counts, pulses),
    st.lists(st.lists(st.integers(0, 10**6), min_size=6, max_size=6), min_size=16, max_size=16),
    st.lists(st.integers(1, 10**9), min_size=16, max_size=16),
)


def _make(counts, pulses):
    t = CoincidenceTable()
    for key, row, n in zip(ROWS, counts, pulses):
        t.add(*key, row, n)
    return t


# --- encoding ------------------------------------------------------------------


def test_encoding_convention():
    assert encode(0, RECT) == "H"
    assert encode(1, RECT) == "V"
    assert encode(0, DIAG) == "D"
    assert encode(1, DIAG) == "A"
    for s in STATE_ORDER:
        assert encode(*decode(s)) == s
    with pytest.raises(ValueError):
        encode(2, RECT)
    with pytest.raises(ValueError):
        EncodedPulse(0, "circular")


# --- estimators -------------------------------------------------------------------


def test_c_sum_examples():
    assert c_sum([1, 2, 3, 4, 5, 6]) == 14
    assert c_sum([0] * 6) == 0


def test_gain_examples():
    assert gain_rect(table_with_csums([2e-6, 2e-6, 1e-6, 1e-6], RECT_ROWS)) == pytest.approx(1.5e-6)
    assert gain_diag(table_with_csums([1e-6, 1e-6, 3e-6, 3e-6], DIAG_ROWS)) == pytest.approx(2e-6)
    zero = full_table({})
    assert gain_rect(zero) == 0.0 and gain_diag(zero) == 0.0


def test_gain_missing_row_and_zero_pulses():
    t = table_with_csums([1e-6] * 3, RECT_ROWS[:3])
    with pytest.raises(KeyError):
        gain_rect(t)
    t = CoincidenceTable()
    for k in RECT_ROWS:
        t.add(*k, [0] * 6, 0)
    with pytest.raises(ValueError):
        gain_rect(t)


def test_qber_rect_examples():
    t = full_table({("H", "V"): [5, 3, 0, 0, 2, 1], ("V", "H"): [1, 1, 0, 0, 1, 1]})
    assert qber_rect(t) == 0.0
    t = full_table({k: [1, 0, 0, 0, 0, 0] for k in RECT_ROWS})
    assert qber_rect(t) == 0.5
    with pytest.raises(UndefinedEstimate):
        qber_rect(full_table({}))


def test_qber_diag_examples():
    ok = full_table({("D", "D"): [4, 0, 0, 0, 0, 4], ("A", "A"): [1, 0, 0, 0, 0, 2],
                     ("D", "A"): [0, 3, 0, 0, 3, 0], ("A", "D"): [0, 1, 0, 0, 0, 0]})
    assert qber_diag(ok) == 0.0
    bad = full_table({("D", "D"): [0, 5, 0, 0, 5, 0]})
    assert qber_diag(bad) == 1.0
    # inconclusive pairs never count
    assert qber_diag(full_table({("D", "D"): [0, 5, 7, 7, 5, 0]})) == 1.0
    with pytest.raises(UndefinedEstimate):
        qber_diag(full_table({}))


def test_estimates_map_failures_to_nan():
    e = estimates(full_table({}))
    assert e["Q_rect"] == 0.0 and math.isnan(e["E_rect"]) and math.isnan(e["E_diag"])


@settings(max_examples=1000, deadline=None)
@given(tables)
def test_estimators_match_brute_force(t):
    got = estimates(t)
    want = oracles.oracle_estimates(t)
    for k in got:
        if math.isnan(want[k]):
            assert math.isnan(got[k])
        else:
            assert got[k] == pytest.approx(want[k], rel=1e-12, abs=1e-300)
            if k.startswith("E"):
                assert 0.0 <= got[k] <= 1.0


@settings(max_examples=200, deadline=None)
@given(tables, tables)
def test_merge_adds_counts(a, b):
    m = a.merge(b)
    for k in ROWS:
        assert np.array_equal(m.row(*k), a.row(*k) + b.row(*k))
        assert m.pulses[k] == a.pulses[k] + b.pulses[k]
    assert m == b.merge(a)
    assert m.total_pulses() == a.total_pulses() + b.total_pulses()


@settings(max_examples=200, deadline=None)
@given(tables)
def test_qber_depends_only_on_conclusive_pairs(t):
    # scaling pulses leaves QBER unchanged and scales gains inversely
    s = CoincidenceTable()
    for k in ROWS:
        s.add(*k, t.row(*k), 2 * t.pulses[k])
    if sum(int(c_sum(t.row(*k))) for k in RECT_ROWS):
        assert qber_rect(s) == qber_rect(t)
    assert gain_rect(s) == pytest.approx(gain_rect(t) / 2)


def test_table_validation():
    with pytest.raises(ValueError):
        CoincidenceTable({("H", "H"): np.array([1, 2, 3])})
    with pytest.raises(ValueError):
        CoincidenceTable({("H", "H"): np.array([1, 2, 3, 4, 5, -1])})


# --- sifting ------------------------------------------------------------------------


def pulse(state, setting=0):
    bit, basis = decode(state)
    return EncodedPulse(bit, basis, setting)


def test_sift_rect_psi_plus_flips():
    rect, diag = sift([pulse("H")], [pulse("V")], [PSI_P])
    assert list(rect.alice_bits) == [0] and list(rect.bob_bits) == [0]
    assert len(diag) == 0


def test_sift_diag_psi_plus_no_flip():
    rect, diag = sift([pulse("D")], [pulse("D")], [PSI_P])
    assert list(diag.alice_bits) == [0] and list(diag.bob_bits) == [0]


def test_sift_diag_psi_minus_flips():
    rect, diag = sift([pulse("D")], [pulse("A")], [PSI_M])
    assert list(diag.bob_bits) == [0]


def test_sift_drops_mismatched_and_inconclusive():
    rect, diag = sift([pulse("H"), pulse("H")], [pulse("D"), pulse("V")], [PSI_P, INC])
    assert len(rect) == 0 and len(diag) == 0


def test_sift_length_mismatch():
    with pytest.raises(ValueError):
        sift([pulse("H")], [], [])


def test_bob_flips_rules():
    assert bob_flips(RECT, PSI_P) and bob_flips(RECT, PSI_M)
    assert not bob_flips(DIAG, PSI_P) and bob_flips(DIAG, PSI_M)
    with pytest.raises(ValueError):
        bob_flips(RECT, INC)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(STATE_ORDER), st.sampled_from(STATE_ORDER),
                          st.sampled_from([PSI_P, PSI_M, INC]), st.integers(0, 1), st.integers(0, 1)),
                max_size=60))
def test_sift_mismatch_equals_table_qber(rounds):
    alice = [pulse(a, sa) for a, _, _, sa, _ in rounds]
    bob = [pulse(b, sb) for _, b, _, _, sb in rounds]
    ann = [o for _, _, o, _, _ in rounds]
    rect, diag = sift(alice, bob, ann)
    # build the table with a consistent pair for each announcement
    t = CoincidenceTable()
    for k in ROWS:
        t.add(*k, [0] * 6, 1)
    for a, b, o, _, _ in rounds:
        row = [0] * 6
        if o is PSI_P:
            row[0] = 1
        elif o is PSI_M:
            row[1] = 1
        t.add(a, b, row, 0)
    if len(rect):
        assert rect.mismatch_fraction() == qber_rect(t)
    else:
        with pytest.raises(UndefinedEstimate):
            rect.mismatch_fraction()
    if len(diag):
        assert diag.mismatch_fraction() == qber_diag(t)
    for s in ((0, 0), (0, 1), (1, 0), (1, 1)):
        sel = rect.select(s)
        assert np.all(sel.settings == s)
