"""Tests for the figure package: parsing, rendering, determinism, CLI."""

import json
import math

import numpy as np
import pytest

from gwlab_figures import cli, io, render
from gwlab_figures.errors import EmptySeries, SchemaError

# Envelope constants for offspring mean 2, cross-checked against the
# simulation package: extinction probability of the dying-out measure
# and the two rate constants of the stretched-exponential bounds.
LAMBDA_EXTINCT = 0.40637573995996
F_MINUS = 1.3068528194400546
F_PLUS = 0.3068528194400546


def write_curve(path, times, estimates, n_trees=1000, time_column="t"):
    lines = [f"{time_column},estimate,stderr,n_trees"]
    for t, p in zip(times, estimates):
        lines.append(f"{t},{p},0.001,{n_trees}")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def write_measure(path, edges, masses, atom, tail):
    lines = ["E_lo,E_hi,mass,stderr", f"0,0,{atom},0.001"]
    for lo, hi, m in zip(edges[:-1], edges[1:], masses):
        lines.append(f"{lo},{hi},{m},0.001")
    lines.append(f"{edges[-1]},inf,{tail},0.001")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def write_bounds(path):
    payload = {
        "lambda": 2.0,
        "bounds": {
            "lambda_extinct": LAMBDA_EXTINCT,
            "f_minus": F_MINUS,
            "f_plus": F_PLUS,
        },
    }
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture
def decay_csv(tmp_path):
    times = [2 ** k for k in range(1, 11)]
    probs = [math.exp(-2.0 * t ** (1.0 / 3.0)) for t in times]
    return write_curve(tmp_path / "curve.csv", times, probs)


@pytest.fixture
def measure_csv(tmp_path):
    edges = np.round(np.arange(0.0, 8.01, 0.5), 10)
    masses = 0.04 * np.exp(-0.3 * edges[1:])
    atom = 0.162
    tail = 1.0 - atom - masses.sum()
    return write_measure(tmp_path / "measure.csv", edges, masses, atom, tail)


# ---------------------------------------------------------------- parsing


def test_read_curve_roundtrip(decay_csv):
    curve = io.read_curve(decay_csv)
    assert curve.time_column == "t"
    assert curve.times[0] == 2.0
    assert curve.estimates.shape == (10,)
    assert curve.n_trees == 1000


def test_read_curve_accepts_s_column(tmp_path):
    path = write_curve(tmp_path / "c.csv", [0.5, 1.0], [0.6, 0.5],
                       time_column="s")
    assert io.read_curve(path).time_column == "s"


def test_read_curve_missing_column_named(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,estimate,n_trees\n2,0.5,10\n")
    with pytest.raises(SchemaError, match="stderr"):
        io.read_curve(str(p))


def test_read_curve_bad_float_names_row_and_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,estimate,stderr,n_trees\n2,0.5,0.01,10\n4,oops,0.01,10\n")
    with pytest.raises(SchemaError, match=r"row 2.*estimate"):
        io.read_curve(str(p))


def test_read_curve_no_rows_is_empty_series(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("t,estimate,stderr,n_trees\n")
    with pytest.raises(EmptySeries):
        io.read_curve(str(p))


def test_read_curve_unreadable_file(tmp_path):
    with pytest.raises(SchemaError, match="cannot read"):
        io.read_curve(str(tmp_path / "absent.csv"))


def test_read_measure_roundtrip(measure_csv):
    m = io.read_measure(measure_csv)
    assert m.atom == pytest.approx(0.162)
    assert m.edges_lo[0] == 0.0
    assert m.edges_hi[-1] == 8.0
    assert m.tail > 0.0
    total = m.atom + m.masses.sum() + m.tail
    assert total == pytest.approx(1.0, abs=1e-9)


def test_read_measure_requires_atom_row_first(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("E_lo,E_hi,mass,stderr\n0,0.5,0.1,0.01\n0.5,inf,0.9,0.01\n")
    with pytest.raises(SchemaError, match="atom"):
        io.read_measure(str(p))


def test_read_measure_rejects_gap_in_edges(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("E_lo,E_hi,mass,stderr\n0,0,0.1,0\n"
                 "0,0.5,0.2,0\n0.7,1.0,0.2,0\n1.0,inf,0.5,0\n")
    with pytest.raises(SchemaError, match="contiguous"):
        io.read_measure(str(p))


def test_read_envelope_frozen_value(tmp_path):
    env = io.read_envelope(write_bounds(tmp_path / "b.json"))
    # hand-computed from the closed forms at E = 1
    assert env.lower(1.0) == pytest.approx(0.003600819274759592, rel=1e-12)
    assert env.upper(np.array([1e6]))[0] == 1.0  # clipped
    assert 0.0 < env.lower(0.5) < env.upper(0.5) <= 1.0


def test_read_envelope_missing_field(tmp_path):
    p = tmp_path / "b.json"
    p.write_text(json.dumps({"bounds": {"lambda_extinct": 0.4,
                                        "f_minus": 1.3}}))
    with pytest.raises(SchemaError, match="f_plus"):
        io.read_envelope(str(p))


# -------------------------------------------------------------- rendering


def test_decay_slope_annotation(tmp_path, decay_csv):
    out = tmp_path / "decay.svg"
    render.render(render.FigureSpec("decay", decay_csv, str(out)))
    text = out.read_text()
    # p = exp(-2 t^{1/3}) turns into an exact 1/3 slope in double-log axes
    assert "slope 0.333" in text


def test_render_rejects_unknown_kind(decay_csv, tmp_path):
    with pytest.raises(SchemaError, match="kind"):
        render.FigureSpec("pie", decay_csv, str(tmp_path / "x.svg"))


def test_render_rejects_unknown_extension(decay_csv, tmp_path):
    spec = render.FigureSpec("decay", decay_csv, str(tmp_path / "x.pdf"))
    with pytest.raises(SchemaError, match="format"):
        render.render(spec)


def test_decay_all_saturated_is_empty_series(tmp_path):
    path = write_curve(tmp_path / "flat.csv", [2, 4, 8], [1.0, 1.0, 1.0])
    spec = render.FigureSpec("decay", path, str(tmp_path / "x.svg"))
    with pytest.raises(EmptySeries):
        render.render(spec)


def test_svg_output_deterministic(tmp_path, decay_csv):
    a = tmp_path / "a.svg"
    b = tmp_path / "b.svg"
    render.render(render.FigureSpec("decay", decay_csv, str(a)))
    render.render(render.FigureSpec("decay", decay_csv, str(b)))
    assert a.read_bytes() == b.read_bytes()


def test_png_output_deterministic(tmp_path, measure_csv):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    render.render(render.FigureSpec("dos", measure_csv, str(a)))
    render.render(render.FigureSpec("dos", measure_csv, str(b)))
    assert a.read_bytes() == b.read_bytes()


def test_lifshits_renders_with_default_bounds(tmp_path):
    # grid reaches below E = 0.065, where the upper envelope detaches from 1
    edges = [0.0, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0]
    masses = [0.0005, 0.002, 0.005, 0.015, 0.03, 0.06, 0.1, 0.15]
    csv = write_measure(tmp_path / "lifshits.csv", np.array(edges),
                        np.array(masses), atom=0.162,
                        tail=1.0 - 0.162 - sum(masses))
    write_bounds(tmp_path / "lifshits.json")
    out = tmp_path / "lifshits.svg"
    render.render(render.FigureSpec("lifshits", csv, str(out)))
    text = out.read_text()
    assert "lower bound" in text and "upper bound" in text


def test_dos_marks_atom_and_tail(tmp_path, measure_csv):
    out = tmp_path / "dos.svg"
    render.render(render.FigureSpec("dos", measure_csv, str(out)))
    text = out.read_text()
    assert "atom at 0: 0.162" in text
    assert "tail mass" in text


# -------------------------------------------------------------------- CLI


def test_cli_success_prints_path(tmp_path, decay_csv, capsys):
    out = tmp_path / "fig.svg"
    code = cli.main(["decay", "--in", decay_csv, "--out", str(out)])
    assert code == 0
    assert capsys.readouterr().out.strip() == str(out)
    assert out.exists()


def test_cli_schema_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,estimate,n_trees\n2,0.5,10\n")
    code = cli.main(["decay", "--in", str(bad),
                     "--out", str(tmp_path / "x.svg")])
    assert code == 2
    err = capsys.readouterr().err
    assert "stderr" in err
    assert not (tmp_path / "x.svg").exists()


def test_cli_missing_input_exits_2(tmp_path):
    code = cli.main(["dos", "--in", str(tmp_path / "absent.csv"),
                     "--out", str(tmp_path / "x.svg")])
    assert code == 2


def test_cli_explicit_bounds_flag(tmp_path):
    edges = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]
    masses = [0.01, 0.05, 0.1, 0.15, 0.2]
    csv = write_measure(tmp_path / "m.csv", np.array(edges),
                        np.array(masses), atom=0.162,
                        tail=1.0 - 0.162 - sum(masses))
    bounds = write_bounds(tmp_path / "env.json")
    out = tmp_path / "fig.png"
    code = cli.main(["lifshits", "--in", csv, "--out", str(out),
                     "--bounds", bounds])
    assert code == 0
    assert out.exists()
