import math

import numpy as np
import pytest

from mdinet import io as mio
from mdinet.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def synthetic_csv(path, kappa_h=0.8, kappa_v=1.0, l0=0.25):
    L = np.linspace(0.5, 8.0, 16)
    data = {"H": (L, np.sin(kappa_h * (L + l0)) ** 2), "V": (L, np.sin(kappa_v * (L + l0)) ** 2)}
    mio.write_text(path, mio.coupler_to_csv(data))
    return path


# --- channels ------------------------------------------------------------------------


def test_channels(capsys):
    assert run(capsys, "channels", 5)[:2] == (0, "star = 5\nmesh = 10\n")
    assert run(capsys, "channels", 2)[1] == "star = 2\nmesh = 1\n"
    assert run(capsys, "channels", 100, "--topology", "mesh")[1] == "mesh = 4950\n"
    code, _, err = run(capsys, "channels", 1)
    assert code == 2 and "at least 2" in err


def test_usage_errors_exit_two(capsys):
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "channels", "x")[0] == 2
    assert run(capsys, "hom", "ideal", "--seed", "-1")[0] == 2
    assert run(capsys, "hom", "ideal", "--delays", "3:1:5")[0] == 2
    assert run(capsys)[0] == 2


# --- fit -------------------------------------------------------------------------------


def test_fit_recovers_generator(tmp_path, capsys):
    src = synthetic_csv(tmp_path / "curve.csv")
    code, out, _ = run(capsys, "fit", src, "--out", tmp_path / "o")
    assert code == 0
    kv = mio.kv_from_text(out)
    assert float(kv["kappa_h"]) == pytest.approx(0.8, rel=1e-3)
    assert float(kv["kappa_v"]) == pytest.approx(1.0, rel=1e-3)
    assert float(kv["arc_extra_h"]) == pytest.approx(0.25, abs=1e-3)
    assert "pdc_length_mm" in kv
    assert (tmp_path / "o" / "fit.txt").read_text() == out
    assert (tmp_path / "o" / "fit.png").exists()


def test_fit_malformed_row_names_line(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("coupling_length_mm,cross_power,polarization\n1.0,0.5,H\n2.0,oops,H\n")
    code, _, err = run(capsys, "fit", p, "--out", tmp_path / "o")
    assert code == 2 and "line 3" in err


def test_fit_empty_and_missing_file(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("")
    assert run(capsys, "fit", p, "--out", tmp_path / "o")[0] == 2
    assert run(capsys, "fit", tmp_path / "missing.csv", "--out", tmp_path / "o")[0] == 2


def test_fit_unfittable_data_exits_three(tmp_path, capsys):
    p = tmp_path / "short.csv"
    p.write_text("coupling_length_mm,cross_power,polarization\n1.0,0.5,H\n2.0,0.6,H\n")
    code, _, err = run(capsys, "fit", p, "--out", tmp_path / "o")
    assert code == 3 and "numeric failure" in err


# --- hom / projection / run -------------------------------------------------------------


def test_hom_ideal(tmp_path, capsys):
    code, out, _ = run(capsys, "hom", "ideal", "--trials", 200_000, "--out", tmp_path, "--no-plot")
    assert code == 0
    kv = mio.kv_from_text(out)
    for p in ("c13", "c14", "c23", "c24"):
        assert float(kv[f"visibility_{p}"]) == pytest.approx(1.0, abs=0.02)
    curve = mio.hom_from_csv((tmp_path / "hom.csv").read_text())
    assert len(curve.delays) == 41
    assert not (tmp_path / "hom.png").exists()


def test_hom_custom_delays(tmp_path, capsys):
    code, out, _ = run(capsys, "hom", "ideal", "--delays=-5:5:11", "--trials", 1000, "--out", tmp_path)
    assert code == 0 and mio.kv_from_text(out)["points"] == "11"
    code, out, _ = run(capsys, "hom", "ideal", "--delays=-5,0,5", "--trials", 1000, "--out", tmp_path)
    assert code == 0 and mio.kv_from_text(out)["points"] == "3"


def test_projection_ideal(tmp_path, capsys):
    code, out, _ = run(capsys, "projection", "ideal", "--out", tmp_path)
    assert code == 0
    kv = mio.kv_from_text(out)
    assert kv["extinction_ratio_hv"] == "inf"
    assert float(kv["fraction_H_p2"]) == 0.0 and float(kv["fraction_H_p3"]) == 0.0
    assert float(kv["fraction_H_p1"]) + float(kv["fraction_H_p4"]) == 1.0


def test_projection_bad_path(tmp_path, capsys):
    code, _, err = run(capsys, "projection", tmp_path / "nothing.scn", "--out", tmp_path)
    assert code == 2 and "cannot read" in err


def test_bad_scenario_exits_two(tmp_path, capsys):
    p = tmp_path / "s.scn"
    p.write_text('[[clients]]\nid = "a"\n[[clients]]\nid = "b"\nrect_prob = 2.0\n')
    code, _, err = run(capsys, "run", p, "--out", tmp_path)
    assert code == 2 and "clients[1].rect_prob" in err


def test_run_ideal_has_zero_qber(tmp_path, capsys):
    code, out, _ = run(capsys, "run", "ideal", "--trials", 100_000, "--out", tmp_path)
    assert code == 0
    kv = mio.kv_from_text(out)
    assert float(kv["session.0.E_rect"]) == 0.0 and float(kv["session.0.E_diag"]) == 0.0
    report = mio.kv_from_text((tmp_path / "report.txt").read_text())
    assert report["sessions"] == "1" and report["session.0.pulse_pairs"] == "100000"
    t = mio.coincidence_from_csv((tmp_path / "coincidences_0.csv").read_text())
    assert t.total_pulses() == 100_000


def test_run_pulse_method(tmp_path, capsys):
    code, out, _ = run(capsys, "run", "ideal", "--method", "pulse", "--trials", 2000, "--out", tmp_path,
                       "--no-plot")
    assert code == 0 and float(mio.kv_from_text(out)["session.0.E_rect"]) == 0.0


def test_run_undefined_estimates_report_nan(tmp_path, capsys):
    p = tmp_path / "dark.scn"
    p.write_text('[[clients]]\nid = "a"\n[[clients]]\nid = "b"\n'
                 '[[requests]]\nclients = ["a", "b"]\npulse_pairs = 10\n')
    code, out, _ = run(capsys, "run", p, "--out", tmp_path / "o")
    assert code == 0 and math.isnan(float(mio.kv_from_text(out)["session.0.E_rect"]))


# --- reproducibility ---------------------------------------------------------------------


@pytest.mark.parametrize("argv", [
    ["hom", "ideal", "--trials", "20000"],
    ["projection", "paper_calibrated", "--trials", "20000"],
    ["run", "star4", "--trials", "200000"],
])
def test_byte_reproducible(tmp_path, capsys, argv):
    run(capsys, *argv, "--out", tmp_path / "a")
    run(capsys, *argv, "--out", tmp_path / "b")
    a, b = files(tmp_path / "a"), files(tmp_path / "b")
    assert a == b and any(n.endswith(".png") for n in a)
    run(capsys, *argv, "--seed", "12345", "--out", tmp_path / "c")
    assert files(tmp_path / "c") != a


@pytest.mark.parametrize("argv", [["hom", "ideal", "--trials", "20000"], ["run", "star4", "--trials", "200000"]])
def test_jobs_do_not_change_output(tmp_path, capsys, argv):
    run(capsys, *argv, "--out", tmp_path / "serial", "--jobs", "1")
    run(capsys, *argv, "--out", tmp_path / "parallel", "--jobs", "2")
    assert files(tmp_path / "serial") == files(tmp_path / "parallel")
