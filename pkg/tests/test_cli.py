import csv
import json
import math
import subprocess
import sys

import pytest

from linkm import curves, fieldlines as fl
from linkm.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_lk_borromean(capsys):
    code, out, _ = run(capsys, "lk", "--preset", "borromean")
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["body"]["linking"]["lk"] == [[0, 0, 0]] * 3
    assert "wall_time_s" in rep["timing"]


def test_lk_hopf_from_file(capsys, tmp_path):
    p = tmp_path / "hopf.json"
    curves.preset("hopf_plus_far_circle").save(p)
    code, out, _ = run(capsys, "lk", "--link", str(p), "--body-only")
    assert code == EXIT_OK
    body = json.loads(out)
    assert body["linking"]["lk"][0][1] == -1 and body["checks"][0]["passed"]


def test_malformed_link_exits_2(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"schema": "linkm-curve-v1", "curves": [')
    code, _, err = run(capsys, "lk", "--link", str(p))
    assert code == EXIT_USAGE and "error" in err
    p.write_text('{"schema": "nope", "curves": []}')
    assert run(capsys, "lk", "--link", str(p))[0] == EXIT_USAGE


@pytest.mark.parametrize("argv", [
    ["lk"],
    ["lk", "--preset", "borromean", "--link", "x.json"],
    ["lk", "--preset", "no_such_link"],
    ["m", "--preset", "borromean", "--budget", "10"],
    ["trace", "--x0", "1,2", "--T", "1", "--field", "x.json"],
])
def test_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == EXIT_USAGE


def test_m_unlink_zero(capsys):
    code, out, _ = run(capsys, "m", "--preset", "unlink_separated", "--budget", "2048", "--body-only")
    assert code == EXIT_OK
    body = json.loads(out)
    assert body["terms"]["M"]["value"] == 0.0


def test_m_rerun_is_byte_identical(capsys, tmp_path):
    argv = ["m", "--preset", "chain_3", "--budget", "2048", "--seed", "5", "--body-only"]
    a = run(capsys, *argv)[1]
    run(capsys, *argv, "--out", str(tmp_path / "m.json"))
    assert (tmp_path / "m.json").read_text() == a
    assert json.loads(a)["seed"] == 5


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "linkm", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "linkm" in r.stdout


@pytest.fixture
def circle_field(tmp_path):
    f0 = 1.0 / (math.pi * 0.1 ** 2)
    fs = fl.FieldSystem((fl.Tube(curves.circle(), 0.1, 1.0, (-f0 / 6,), "uniform"),))
    p = tmp_path / "field.json"
    p.write_text(fs.dumps())
    return p, f0


def test_trace_closed_line(capsys, circle_field, tmp_path):
    p, f0 = circle_field
    out_csv = tmp_path / "line.csv"
    code, out, _ = run(capsys, "trace", "--field", str(p), "--x0", "1.05,0,0", "--T", str(4 * 2 * math.pi / f0),
                       "--stop-at-closure", "--csv", str(out_csv), "--body-only")
    assert code == EXIT_OK
    tr = json.loads(out)["trace"]
    assert tr["closed"] and tr["n_transits"] == 3
    with open(out_csv) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "y", "z"] and len(rows) == tr["n_points"] + 1


def test_trace_cesaro_csv(capsys, tmp_path):
    fs = fl.FieldSystem.from_curves(list(curves.preset("hopf_plus_far_circle")), 0.05)
    p = tmp_path / "field.json"
    p.write_text(fs.dumps())
    x0 = ",".join(f"{v!r}" for v in map(float, fs.tubes[0].position(0.0, 0.01, 0.0)[0]))
    y0 = ",".join(f"{v!r}" for v in map(float, fs.tubes[1].position(0.0, 0.0, 0.01)[0]))
    out_csv = tmp_path / "c.csv"
    code, out, _ = run(capsys, "trace", "--field", str(p), "--x0", x0, "--y0", y0,
                       "--T", str(8 * fs.tubes[0].volume), "--checkpoints", "4", "--csv", str(out_csv))
    assert code == EXIT_OK
    with open(out_csv) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["T", "value"] and len(rows) == 5
    assert abs(float(rows[-1][1]) + 1.0) < 0.02


def test_trace_point_outside(capsys, circle_field):
    p, _ = circle_field
    assert run(capsys, "trace", "--field", str(p), "--x0", "0,0,0", "--T", "1")[0] == EXIT_USAGE


def test_ergodic_skip_exits_1(capsys, tmp_path):
    f0 = 1.0 / (math.pi * 0.02 ** 2)
    link = curves.preset("hopf_plus_far_circle")
    fs = fl.FieldSystem.from_curves(list(link), 0.02, stream=(-f0 * (math.sqrt(5) - 1) / 4,), transit="uniform")
    p = tmp_path / "field.json"
    p.write_text(fs.dumps())
    code, out, _ = run(capsys, "ergodic", "--field", str(p), "--triples", "1", "--budget", "1024")
    assert code == EXIT_FAIL
    assert "non-closing" in json.loads(out)["body"]["error"]


def test_ergodic_unlinked(capsys, tmp_path):
    fs = fl.FieldSystem.from_curves(list(curves.preset("unlink_separated")), 0.02)
    p = tmp_path / "field.json"
    p.write_text(fs.dumps())
    code, out, _ = run(capsys, "ergodic", "--field", str(p), "--triples", "2", "--budget", "1024", "--body-only")
    assert code == EXIT_OK
    assert json.loads(out)["ergodic_M"]["estimate"]["value"] == 0.0
