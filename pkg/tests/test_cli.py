import numpy as np
import pytest

from boundary_reflections.cli import main
from boundary_reflections.config import (
    ConfigError,
    build_problem,
    compile_expression,
    default_config,
    parse_config,
)
from boundary_reflections.output import (
    ERROR_COLUMNS,
    SWEEP_COLUMNS,
    OutputError,
    emit_plotdata,
    read_csv,
    write_csv,
)

REFLECT_CFG = """\
[experiment]
kind = reflect
form = seq
cycles = 60
tol = 1e-10

[container]
radius = 10
nodes = 128

[object.a]
center = -2.5, 0
radius = 0.5
nodes = 48
datum = 1

[object.b]
center = 2.5, 0
radius = 0.5
nodes = 48
bc = neumann
datum = cos(theta)

[object.c]
center = 0, 3
radius = 0.5
nodes = 48
bc = fourth
flux = 0.5
"""

TRIANGLE_CFG = """\
[experiment]
kind = triangle_convergence
sides = 4.0
nodes = 32
container_nodes = 128
cycles = 12
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# --- configuration -------------------------------------------------------------


def test_defaults_and_overrides():
    cfg = parse_config("[experiment]\nkind = distance_sweep\ncycles = 12\ndistances = 3, 4.5\n")
    assert cfg.params["cycles"] == 12
    assert cfg.params["distances"] == [3.0, 4.5]
    assert cfg.params["fit_count"] == 5
    assert default_config("triangle_convergence").params["sides"] == [1.1, 4.0, 8.0]


def test_errors_carry_line_numbers():
    text = "[experiment]\nkind = reflect\n\ncycles = many\n"
    with pytest.raises(ConfigError, match=r"cfg.ini:4: \[experiment\] cycles"):
        parse_config(text, source="cfg.ini")
    with pytest.raises(ConfigError, match=r":3: \[experiment\] colour: unknown setting"):
        parse_config("[experiment]\nkind = reflect\ncolour = red\n", source="x")
    bad = REFLECT_CFG.replace("radius = 0.5\nnodes = 48\ndatum = 1", "radius = -1\nnodes = 48\ndatum = 1")
    with pytest.raises(ConfigError, match=r":\d+: \[object.a\]"):
        build_problem(parse_config(bad, source="r.ini"))


def test_kind_checks():
    with pytest.raises(ConfigError, match="config is for 'reflect'"):
        parse_config("[experiment]\nkind = reflect\n", kind="solve")
    with pytest.raises(ConfigError, match="unknown experiment kind"):
        parse_config("[experiment]\nkind = magic\n")


def test_problem_from_config():
    problem = build_problem(parse_config(REFLECT_CFG))
    assert [c.kind for c in problem.conditions] == ["dirichlet", "neumann", "fourth"]
    assert problem.conditions[2].flux == 0.5
    np.testing.assert_allclose(problem.data(1), np.cos(problem.layout.objects[1].t), atol=1e-12)
    ordered = build_problem(parse_config(REFLECT_CFG + "\n[problem]\nobjects = c, a\n"))
    assert [o.name for o in ordered.layout.objects] == ["c", "a"]
    with pytest.raises(ConfigError, match="no section"):
        build_problem(parse_config(REFLECT_CFG + "\n[problem]\nobjects = zz\n"))


def test_expression_whitelist():
    f = compile_expression("1 + sin(theta) * x**2 - abs(y) / pi")
    assert f(2.0, -1.0, 0.5) == pytest.approx(1 + np.sin(0.5) * 4 - 1 / np.pi)
    for bad in ("__import__('os')", "x.real", "open('f')", "[x]", "lambda: 1", "x if y else 1", "z"):
        with pytest.raises(ConfigError):
            compile_expression(bad)


def test_digest_depends_on_settings_only():
    a = parse_config("[experiment]\nkind = reflect\ncycles = 5\n")
    b = parse_config("# comment\n[experiment]\nkind   =   reflect\ncycles=5\n")
    c = parse_config("[experiment]\nkind = reflect\ncycles = 6\n")
    assert a.digest() == b.digest() != c.digest()


# --- output --------------------------------------------------------------------


def test_csv_roundtrip_17_digits(tmp_path):
    x = 0.1 + 0.2
    p = write_csv(tmp_path / "t.csv", ERROR_COLUMNS, [(0, x, 1e300, np.nan)], {"seed": 3})
    meta, cols, data = read_csv(p)
    assert meta == {"seed": "3"}
    assert cols == ERROR_COLUMNS
    assert data[0, 1] == x
    with pytest.raises(OutputError):
        write_csv(tmp_path / "u.csv", ERROR_COLUMNS, [(0, 1.0)], {})


def test_plotdata_error_schema(tmp_path):
    p = write_csv(tmp_path / "e.csv", ERROR_COLUMNS, [(k, 2.0**-k, 2.0**k, 3.0**-k) for k in range(5)], {})
    dat, gp, slopes = emit_plotdata(p)
    assert "set logscale y" in gp.read_text()
    assert slopes == {}
    assert dat.read_text().splitlines()[0] == "# iter error_seq error_par error_avgpar"


def test_plotdata_sweep_fits(tmp_path):
    R = np.array([2.5, 3, 4, 5, 6, 8, 10])
    rows = [(r, 3 * r**-3.2, 0.5 * r**-2.09, 0.6 * r**0.01) for r in R]
    p = write_csv(tmp_path / "s.csv", SWEEP_COLUMNS, rows, {})
    _, gp, slopes = emit_plotdata(p, tmp_path / "plots")
    text = gp.read_text()
    assert "set logscale xy" in text
    assert text.count("print sprintf") == 3
    assert slopes["seq_coef"] == pytest.approx(-3.2, abs=1e-12)
    assert slopes["par_coef"] == pytest.approx(-2.09, abs=1e-12)
    assert slopes["avgpar_coef"] == pytest.approx(0.01, abs=1e-12)
    # cross-check against an independent least-squares fit on the five largest distances
    ref = np.polyfit(np.log(R[-5:]), np.log([r[1] for r in rows[-5:]]), 1)[0]
    assert slopes["seq_coef"] == pytest.approx(ref, abs=1e-12)


def test_plotdata_empty_and_unknown(tmp_path, capsys):
    empty = write(tmp_path, "empty.csv", "# seed=0\niter,error_seq,error_par,error_avgpar\n")
    assert main(["plotdata", str(empty)]) == 1
    assert "no data rows" in capsys.readouterr().err
    assert not (tmp_path / "empty.dat").exists() and not (tmp_path / "empty.gp").exists()
    other = write(tmp_path, "other.csv", "a,b\n1,2\n")
    with pytest.raises(OutputError, match="unknown schema"):
        emit_plotdata(other)
    assert not (tmp_path / "other.dat").exists()


# --- commands ------------------------------------------------------------------


def test_triangle_command_outputs(tmp_path, capsys):
    cfg = write(tmp_path, "tri.ini", TRIANGLE_CFG)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["triangle-convergence", "--config", str(cfg), "--out", str(out1)]) == 0
    assert main(["triangle-convergence", "--config", str(cfg), "--out", str(out2)]) == 0
    f1 = out1 / "triangle_l4.0.csv"
    lines = f1.read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    keys = {ln[2:].split("=")[0] for ln in header}
    assert {"config_sha256", "seed", "nodes", "tol", "max_cycles"} <= keys
    assert lines[len(header)] == "iter,error_seq,error_par,error_avgpar"
    assert len(lines) == len(header) + 1 + 13
    assert f1.read_bytes() == (out2 / "triangle_l4.0.csv").read_bytes()
    assert "l=4.0 seq" in capsys.readouterr().out


def test_reflect_exit_codes(tmp_path):
    cfg = write(tmp_path, "r.ini", REFLECT_CFG)
    assert main(["reflect", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "reflect_seq.csv").exists()
    assert main(["reflect", "--config", str(cfg), "--out", str(tmp_path), "--cycles", "2"]) == 2
    assert main(["reflect", "--config", str(cfg), "--out", str(tmp_path), "--expect-divergence"]) == 1
    assert main(["reflect", "--config", str(cfg), "--out", str(tmp_path), "--form", "avg", "--cycles", "2",
                 "--expect-divergence"]) == 2


def test_reflect_workers_byte_identical(tmp_path):
    cfg = write(tmp_path, "r.ini", REFLECT_CFG)
    for w in ("1", "3"):
        assert main(["reflect", "--config", str(cfg), "--form", "par", "--cycles", "8", "--workers", w,
                     "--out", str(tmp_path / w)]) in (0, 2)
    assert (tmp_path / "1" / "reflect_par.csv").read_bytes() == (tmp_path / "3" / "reflect_par.csv").read_bytes()


def test_solve_command(tmp_path, capsys):
    cfg = write(tmp_path, "s.ini", REFLECT_CFG.replace("kind = reflect", "kind = solve")
                .replace("form = seq\ncycles = 60\ntol = 1e-10\n", ""))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "object 2 boundary constant" in out
    meta, cols, data = read_csv(tmp_path / "solution.csv")
    assert cols == ("x", "y", "u") and data.shape == (200, 3)


def test_projection_demo_orthogonal_lines(tmp_path):
    cfg = write(tmp_path, "p.ini", "[experiment]\nkind = projection_demo\npreset = lines\nangle_deg = 90\nsteps = 3\n")
    assert main(["projection-demo", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    _, cols, data = read_csv(tmp_path / "projection_demo.csv")
    assert cols == ("iter", "error_alternating", "error_averaged")
    assert data[0, 1] > 0 and data[1, 1] == 0.0


def test_usage_errors(tmp_path, capsys):
    assert main(["reflect", "--config", str(tmp_path / "missing.ini")]) == 1
    assert "cannot read config" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["reflect", "--workers", "0"])
    with pytest.raises(SystemExit):
        main(["nonsense"])
