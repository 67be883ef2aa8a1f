import csv
import io

import numpy as np
import pytest

from conftest import data_path
from ludyn import load_model
from ludyn.cli import CSV_HEADER, channels, main, parse_spec, parse_state
from ludyn.errors import ParseError
from ludyn.sparse import read_matrix_market

PENDULUM = data_path("pendulum.model")
HUMANOID = data_path("humanoid12.model")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_pendulum_torque_line(capsys):
    code, out, _ = run(capsys, "solve", "--model", PENDULUM, "--problem", "id",
                       "--state", data_path("pendulum_zero.state"))
    assert code == 0
    # m g l cos(0) with m = 2, g = 9.81, l = 0.5
    assert f"link1 tau={2.0 * 9.81 * 0.5:.12g}" in out.splitlines()


def test_fd_solve_prints_acceleration(tmp_path, capsys):
    state = tmp_path / "s.state"
    state.write_text("q link1 0.3\n")
    code, out, _ = run(capsys, "solve", "--model", PENDULUM, "--problem", "fd", "--state", str(state))
    assert code == 0
    qdd = float(next(l for l in out.splitlines() if l.startswith("link1 qdd=")).split("=")[1])
    assert qdd == pytest.approx(-9.81 * np.cos(0.3) / 0.5, rel=1e-10)


def test_loadcells_exit_2(capsys):
    code, _, err = run(capsys, "solve", "--model", HUMANOID, "--spec", data_path("humanoid12_loadcells.spec"))
    assert code == 2
    assert "not well-posed" in err


def test_check_reports(capsys):
    code, out, _ = run(capsys, "check", "--model", HUMANOID, "--spec", data_path("humanoid12_slippery.spec"))
    assert code == 0 and out.strip() == "well-posed (numeric, 100 samples)"
    code, out, err = run(capsys, "check", "--model", HUMANOID, "--spec", data_path("humanoid12_loadcells.spec"))
    assert code == 2
    assert out.startswith("numerically-singular-config") and "minimum singular value" in out
    code, out, _ = run(capsys, "check", "--model", HUMANOID)
    assert code == 0 and out.startswith("well-posed")


def test_slippery_solve(tmp_path, capsys):
    state = tmp_path / "s.state"
    state.write_text("q r_foot 0.1\nq pelvis 0.4\nq torso -0.3\nq l_thigh 0.2\n")
    spec = data_path("humanoid12_slippery.spec")
    code, out, _ = run(capsys, "solve", "--model", HUMANOID, "--spec", spec, "--state", str(state))
    assert code == 0
    assert sum(l.startswith("r_foot ") for l in out.splitlines()) == 4


def test_parallel_slippery_feet_exit_2(capsys):
    """With both feet level the two unmeasured yaw moments are the same free
    vector, so only their sum is determined."""
    code, _, err = run(capsys, "solve", "--model", HUMANOID, "--spec", data_path("humanoid12_slippery.spec"))
    assert code == 2
    assert "singular at this configuration" in err


@pytest.mark.parametrize("argv", [
    ["solve", "--model", "/nonexistent/model"],
    ["check", "--model", PENDULUM, "--spec", "/nonexistent/spec"],
])
def test_missing_files_exit_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1 and "No such file" in err


def test_parse_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.state"
    bad.write_text("q link1 zero\n")
    code, _, err = run(capsys, "solve", "--model", PENDULUM, "--state", str(bad))
    assert code == 1 and "line 1" in err
    code, _, err = run(capsys, "solve", "--model", PENDULUM, "--problem", "generic")
    assert code == 1 and "--spec" in err


def test_bench_csv(tmp_path, capsys):
    target = tmp_path / "bench.csv"
    assert run(capsys, "bench", "--n-max", "4", "--csv", str(target))[0] == 0
    text = target.read_text()
    assert text.splitlines()[0] == "n_links,method,mul,add,div,total,wall_ns"
    rows = list(csv.DictReader(io.StringIO(text)))
    methods = {r["method"] for r in rows}
    assert methods == {"rnea", "aba", "lu-id", "lu-fd", "lu-generic-loadcell", "dense-inversion"}
    for r in rows:
        assert int(r["total"]) == int(r["mul"]) + int(r["add"]) + int(r["div"])
    # the FLOP columns do not change between runs
    again = tmp_path / "again.csv"
    run(capsys, "bench", "--n-max", "4", "--csv", str(again))
    strip = lambda t: [line.rsplit(",", 1)[0] for line in t.splitlines()]
    assert strip(text) == strip(again.read_text())


def test_bench_to_stdout(capsys):
    code, out, _ = run(capsys, "bench", "--n-max", "1")
    assert code == 0 and tuple(out.splitlines()[0].split(",")) == CSV_HEADER
    assert run(capsys, "bench", "--n-max", "0")[0] == 1


def test_export_matrix_solves_externally(tmp_path, capsys):
    state = tmp_path / "s.state"
    state.write_text("q base_yaw 0.2\nq hub -0.7\nqd arm_a2 1.5\nqdd tool 0.3\nfx arm_b2 0 0 1 0 0 -2\n")
    prefix = str(tmp_path / "sys")
    model = data_path("branched7.model")
    code, out, _ = run(capsys, "export-matrix", "--model", model, "--state", str(state), "--out", prefix)
    assert code == 0 and "140 x 140" in out
    with open(prefix + ".mtx") as fh:
        A = read_matrix_market(fh).to_dense()
    b = np.loadtxt(prefix + ".rhs")
    x = np.linalg.solve(A, -b)
    code, out, _ = run(capsys, "solve", "--model", model, "--state", str(state))
    taus = [float(l.split("=")[1]) for l in out.splitlines() if " tau=" in l]
    # the ID order puts tau_i right after f_i, leaves first
    from ludyn.indexing import VarId, id_permutations
    _, q = id_permutations(7)
    expected = [x[q.slice(VarId("tau", i))][0] for i in range(1, 8)]
    np.testing.assert_allclose(taus, expected, rtol=1e-10, atol=1e-12)


def test_parse_spec_and_state(humanoid12):
    spec = parse_spec("measure qdd link=r_foot  # comment\n\nmeasure slippery link=l_foot\n", humanoid12)
    assert [e.kind for e in spec.entries] == ["qdd", "slippery"]
    for text in ("measure gyro link=r_foot", "measure qdd r_foot", "measure qdd link=nose", "observe qdd link=x"):
        with pytest.raises(ParseError):
            parse_spec(text, humanoid12)
    st = parse_state("q pelvis 0.5\nfx torso 1 2 3 4 5 6\ny slippery:l_foot 1 2 3 4 5\n", humanoid12)
    assert st.q[3] == 0.5 and st.fx[4].tolist() == [1, 2, 3, 4, 5, 6]
    y = channels(spec, st, humanoid12)
    assert y["slippery:l_foot"].tolist() == [1, 2, 3, 4, 5]
    for text in ("fx torso 1 2 3", "w pelvis 1", "q nose 1", "q pelvis"):
        with pytest.raises(ParseError):
            parse_state(text, humanoid12)
