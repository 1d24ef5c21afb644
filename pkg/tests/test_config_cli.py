import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kslab.cli import main, plot_csv, run_experiment
from kslab.config import parse_config, serialize
from kslab.errors import (CompatibilityError, ConfigError, ConfigTypeError, EmptySeries,
                          MissingKey, UnknownKey)
from kslab.harness import exponential_envelope, fit_rate
from kslab.io import csv_text, load_operator, read_csv, save_operator, write_csv
from kslab.phase_space import PhaseGrid
from kslab.plot import emit_plot, envelope_plot, rate_plot
from kslab.quantum import wick_quantize

from conftest import product_gaussian

L1_CFG = """\
kind = l1_stability
seed = 3

[grid]
n_x = 32
n_v = 32
length = 12.566370614359172
v_max = 6.0

[kernel]
type = regularized_coulomb
eps = 0.5

[initial]
family = maxwellian

[run]
T = 0.2
dt = 0.05
"""

RATE_CFG = """\
kind = rate_study
[grid]
n_x = 8
length = 16.0
[quantum]
hbars = 0.4, 0.2, 0.1, 0.05
[kernel]
type = regularized_coulomb
eps = 2.0
[initial]
family = gaussian_bump
[run]
T = 0.04
dt = 0.02
every = 1
"""

WH_CFG = """\
kind = wh_stability
[grid]
n_x = 32
length = 16.0
[quantum]
hbar = 0.2
[kernel]
type = regularized_coulomb
eps = 0.5
[initial]
family = gaussian_bump
widths = 1.0, 0.7
[run]
T = 0.1
dt = 0.05
every = 1
"""


def _issues(text):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    return exc.value.issues


# parsing --------------------------------------------------------------------------

def test_empty_file_lists_missing_kind():
    issues = _issues("")
    assert [type(i) for i in issues] == [MissingKey]


def test_missing_required_keys_all_listed():
    issues = _issues("kind = l1_stability\n")
    missing = {i.message for i in issues if isinstance(i, MissingKey)}
    assert missing == {"grid.n_x", "grid.length", "kernel.type", "initial.family", "grid.n_v",
                       "grid.v_max", "run.T", "run.dt"}


def test_every_error_carries_its_line():
    text = L1_CFG.replace("eps = 0.5", "eps = 0.5\nepsilon = 1").replace("T = 0.2", "T = fast")
    issues = _issues(text)
    lines = text.splitlines()
    kinds = {type(i): i for i in issues}
    assert UnknownKey in kinds and ConfigTypeError in kinds
    assert lines[kinds[UnknownKey].line - 1].startswith("epsilon")
    assert lines[kinds[ConfigTypeError].line - 1].startswith("T = fast")
    assert "line" in str(issues[0])


def test_eps_below_dx_is_incompatible():
    issues = _issues(L1_CFG.replace("eps = 0.5", "eps = 0.1"))
    assert any(isinstance(i, CompatibilityError) and "dx" in i.message for i in issues)


def test_quantum_velocity_pairing():
    text = WH_CFG.replace("[quantum]", "v_max = 3.0\n[quantum]")
    issues = _issues(text)
    msg = [i.message for i in issues if isinstance(i, CompatibilityError)]
    assert any("v_max = pi hbar n_x / L" in m for m in msg)
    ok = WH_CFG.replace("[quantum]", f"v_max = {np.pi * 0.2 * 32 / 16!r}\n[quantum]")
    parse_config(ok)


def test_sweep_needs_power_of_two_grids():
    issues = _issues(RATE_CFG.replace("0.4, 0.2, 0.1, 0.05", "0.4, 0.3, 0.1, 0.05"))
    assert any("power of two" in i.message for i in issues)
    issues = _issues(RATE_CFG.replace("0.4, 0.2, 0.1, 0.05", "0.4, 0.2, 0.1"))
    assert any("at least 4" in i.message for i in issues)


def test_hypothesis_exponents_validated():
    ok = L1_CFG + "\n[hypotheses]\nm = 4\nsigma = 11\nn1 = 7\n"
    parse_config(ok)
    issues = _issues(L1_CFG + "\n[hypotheses]\nm = 4\nsigma = 9\n")
    assert len(issues) == 1 and "m + 6" in issues[0].message


def test_round_trip_is_byte_identical():
    cfg = parse_config(L1_CFG)
    text = serialize(cfg)
    assert text == L1_CFG
    assert serialize(parse_config(text)) == text


@given(st.floats(0.4, 3.0), st.floats(0.01, 1.0), st.integers(1, 4), st.booleans())
def test_round_trip_property(eps, dt, mode, rev):
    text = (L1_CFG.replace("eps = 0.5", f"eps = {eps!r}").replace("dt = 0.05", f"dt = {dt!r}")
            + f"\n[pair]\nmode = {mode}\nreverse = {'true' if rev else 'false'}\n")
    a = parse_config(text)
    b = parse_config(serialize(a))
    assert a == b and serialize(b) == serialize(a)


# io -------------------------------------------------------------------------------

def test_csv_header_units_and_version(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, [("t", "time"), ("m", "1")], [(0.1, 1 / 3), (0.2, True)])
    text = p.read_text()
    assert text.splitlines()[0] == "# format_version = 1"
    assert "t [time],m [1]" in text and "0.33333333333333331" in text
    cols, rows, meta = read_csv(p)
    assert cols == [("t", "time"), ("m", "1")] and rows[0] == [0.1, 1 / 3]
    assert meta["format_version"] == "1"
    with pytest.raises(ValueError):
        csv_text([("a", "1")], [(1, 2)])


def test_operator_snapshot_round_trip(tmp_path):
    g = PhaseGrid.for_hbar(32, 16.0, 0.2)
    op = wick_quantize(product_gaussian(g), 0.2)
    save_operator(tmp_path / "op.bin", op)
    back = load_operator(tmp_path / "op.bin")
    assert np.array_equal(back.matrix, op.matrix)
    assert back.hbar == op.hbar and back.grid.v_max == g.v_max


# plots ----------------------------------------------------------------------------

def test_single_point_plot():
    svg = emit_plot([{"x": [1.0], "y": [2.0]}])
    root = ET.fromstring(svg)
    circles = [e for e in root.iter() if e.tag.endswith("circle")]
    assert len(circles) == 1
    assert "href" not in svg


def test_slope_annotation():
    h = np.array([0.4, 0.2, 0.1, 0.05])
    svg = rate_plot(fit_rate(h, 3 * h))
    assert "slope=1.00" in svg
    ET.fromstring(svg)


def test_empty_series():
    with pytest.raises(EmptySeries):
        emit_plot([{"x": [], "y": []}])
    with pytest.raises(EmptySeries):
        emit_plot([{"x": [1.0], "y": [-1.0]}], "loglog")


def test_envelope_plot_bound_above_metric():
    t = np.linspace(0, 1, 11)
    env = exponential_envelope("e", t, 0.1 * np.exp(t), np.ones(11), 2.0)
    assert env.verdict
    svg = envelope_plot(env)
    lines = [e for e in ET.fromstring(svg).iter() if e.tag.endswith("polyline")]
    ys = [np.array([float(p.split(",")[1]) for p in e.get("points").split()]) for e in lines]
    # svg y grows downwards: the bound sits strictly above the metric after t = 0
    assert np.all(ys[1][1:] < ys[0][1:])


# runs -----------------------------------------------------------------------------

def test_l1_run_is_deterministic(tmp_path):
    cfg = parse_config(L1_CFG)
    assert run_experiment(cfg, tmp_path / "a") == 0
    assert run_experiment(cfg, tmp_path / "b") == 0
    a = (tmp_path / "a" / "result.csv").read_bytes()
    assert a == (tmp_path / "b" / "result.csv").read_bytes()
    assert (tmp_path / "a" / "summary.txt").read_text().startswith("PASS")
    meta = (tmp_path / "a" / "meta.txt").read_text()
    assert "wall_time_s" in meta and "kernels_backend" in meta and L1_CFG in meta
    assert not (tmp_path / "a" / "FAILED").exists()


def test_rate_study_rows(tmp_path):
    out = tmp_path / "rate"
    run_experiment(parse_config(RATE_CFG), out)
    cols, rows, _ = read_csv(out / "result.csv")
    assert len(rows) == 4 and cols[0] == ("hbar", "action")
    svg = plot_csv(out / "result.csv")
    assert "slope=" in svg


def test_wh_summary_has_bracket_line(tmp_path):
    out = tmp_path / "wh"
    run_experiment(parse_config(WH_CFG), out)
    summary = (out / "summary.txt").read_text()
    assert "lower<=upper: PASS" in summary


def test_cli_commands(tmp_path, capsys):
    p = tmp_path / "c.cfg"
    p.write_text(L1_CFG)
    assert main(["validate", "--config", str(p)]) == 0
    assert "OK l1_stability" in capsys.readouterr().out
    assert main(["l2_stability", "--config", str(p)]) == 2
    out = tmp_path / "run"
    assert main(["l1_stability", "--config", str(p), "--out", str(out)]) == 0
    assert main(["plot", "--csv", str(out / "result.csv"), "--out", str(tmp_path / "e.svg")]) == 0
    ET.fromstring((tmp_path / "e.svg").read_text())
    bad = tmp_path / "bad.cfg"
    bad.write_text("kind = l1_stability\ncolour = red\n")
    assert main(["validate", "--config", str(bad)]) == 2
    assert "UnknownKey (line 2)" in capsys.readouterr().err


def test_solver_error_leaves_failed_marker(tmp_path, monkeypatch):
    import kslab.cli as cli

    def boom(cfg, mapper):
        raise FloatingPointError("synthetic")

    monkeypatch.setitem(cli.RUNNERS, "l1_stability", boom)
    out = tmp_path / "x"
    assert run_experiment(parse_config(L1_CFG), out) == 2
    assert "synthetic" in (out / "FAILED").read_text()
    assert (out / "meta.txt").exists()
