import json

import numpy as np
import pytest

from fractrace.cli import main

BROKEN = """
name = "duplicate"
base_point = [0.0]
[[maps]]
linear = [[0.5]]
offset = [0.0]
[[maps]]
linear = [[0.5]]
offset = [0.0]
[[cells]]
branch = 1
vertices = [0.0, 0.5]
[[cells]]
branch = 2
vertices = [0.5, 1.0]
"""


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out


def _report(out):
    return json.loads(out.out)


def test_analyze_tent(capsys, tmp_path):
    code, out = _run(capsys, "analyze", "--system", "tent", "--depth", "10", "--out", str(tmp_path))
    assert code == 0
    rep = _report(out)
    assert rep["result"]["branch"]["branch_set"] == [[0.5]]
    assert sorted(p[0] for p in rep["result"]["branch"]["postcritical"]) == [0.0, 1.0]
    assert list(rep["result"]["orbit_counts"].values())[0] == [2 ** r for r in range(11)]
    assert json.loads((tmp_path / "analyze.json").read_text()) == rep
    assert rep["system"]["hash"] and "tolerances" in rep


def test_analyze_sierpinski(capsys):
    code, out = _run(capsys, "analyze", "--system", "sierpinski", "--depth", "3")
    assert code == 0
    pts = sorted(tuple(np.round(p, 12)) for p in _report(out)["result"]["branch"]["branch_set"])
    assert pts == sorted([(0.5, 0.0), (0.25, round(np.sqrt(3) / 4, 12)), (0.75, round(np.sqrt(3) / 4, 12))])


def test_analyze_broken_system(capsys, tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text(BROKEN)
    code, out = _run(capsys, "analyze", "--system", str(path))
    assert code == 2
    assert "branch_set_finite" in out.err


def test_missing_system_file(capsys):
    code, out = _run(capsys, "analyze", "--system", "/nonexistent/system.toml")
    assert code == 1


def test_hutchinson_tent(capsys, tmp_path):
    code, out = _run(capsys, "hutchinson", "--system", "tent", "--iters", "14", "--out", str(tmp_path))
    assert code == 0
    res = _report(out)["result"]
    assert abs(res["mean"][0] - 0.5) <= res["certified_error"]
    assert abs(res["second_moments"][0][0] - 1 / 3) <= 2 * res["certified_error"]
    assert (tmp_path / "hutchinson_measure.csv").exists()


def test_hutchinson_one_step(capsys):
    code, out = _run(capsys, "hutchinson", "--system", "tent", "--iters", "1", "--format", "json")
    assert _report(out)["result"]["certified_error"] == 0.5


def test_hutchinson_sierpinski_barycenter(capsys):
    code, out = _run(capsys, "hutchinson", "--system", "sierpinski", "--iters", "8")
    res = _report(out)["result"]
    assert np.allclose(res["mean"], [0.5, np.sqrt(3) / 6], atol=res["certified_error"])


def test_hutchinson_support_cap(capsys):
    code, out = _run(capsys, "hutchinson", "--system", "sierpinski", "--iters", "30")
    assert code == 3
    assert "--iters 12" in out.err


def test_trace_eval(capsys):
    code, out = _run(capsys, "trace", "eval", "--system", "tent", "--kind", "discrete:0.5:1", "--fn", "x",
                     "--depth", "2")
    assert code == 0
    values = _report(out)["result"]["values"]
    assert values["0"]["x"] == pytest.approx(0.5)
    assert values["1"]["x"] == pytest.approx(0.5)
    assert values["2"]["x"] == 0.0


def test_trace_eval_hutchinson_unit(capsys):
    code, out = _run(capsys, "trace", "eval", "--system", "sierpinski", "--fn", "const(1)", "--depth", "2")
    assert code == 0
    for level in _report(out)["result"]["values"].values():
        assert level["const(1)"] == pytest.approx(1.0)


def test_trace_eval_rejects_non_branch_point(capsys):
    code, _ = _run(capsys, "trace", "eval", "--system", "tent", "--kind", "discrete:0.3:1")
    assert code == 1


def test_synthesize_then_decompose(capsys, tmp_path):
    coeffs = {"discrete": [{"b": [0.5], "r": 0, "c": 0.1}, {"b": [0.5], "r": 2, "c": 0.05}], "c_inf": 0.6}
    src = tmp_path / "tc.json"
    src.write_text(json.dumps(coeffs))
    code, _ = _run(capsys, "trace", "synthesize", "--system", "tent", "--coefficients", str(src),
                   "--out", str(tmp_path), "--depth", "3")
    assert code == 0
    back = tmp_path / "back.json"
    code, out = _run(capsys, "trace", "decompose", "--system", "tent", "--levels", str(tmp_path / "levels"),
                     "--rmax", "3", "--coefficients-out", str(back))
    assert code == 0
    got = json.loads(back.read_text())
    found = {(tuple(e["b"]), e["r"]): e["c"] for e in got["discrete"]}
    assert found[((0.5,), 0)] == pytest.approx(0.1, abs=1e-12)
    assert found[((0.5,), 2)] == pytest.approx(0.05, abs=1e-12)
    res = _report(out)["result"]
    assert abs(got["c_inf"] - 0.6) <= res["c_inf_tolerance"]


def test_decompose_flags_incompatible_levels(capsys, tmp_path):
    src = tmp_path / "tc.json"
    src.write_text(json.dumps({"discrete": [{"b": [0.5], "r": 2, "c": 0.25}]}))
    _run(capsys, "trace", "synthesize", "--system", "tent", "--coefficients", str(src), "--out", str(tmp_path))
    level1 = tmp_path / "levels" / "level_001.csv"
    lines = level1.read_text().splitlines()
    header, rows = lines[0], lines[1:]
    cols = header.split(",")
    wi = cols.index("weight")
    doubled = []
    for row in rows:
        parts = row.split(",")
        parts[wi] = repr(2 * float(parts[wi]))
        doubled.append(",".join(parts))
    level1.write_text("\n".join([header] + doubled) + "\n")
    code, out = _run(capsys, "trace", "decompose", "--system", "tent", "--levels", str(tmp_path / "levels"))
    assert code == 2
    assert "compatibility" in out.err


def test_kms_weights(capsys):
    code, out = _run(capsys, "kms", "--system", "tent", "--beta", str(np.log(4)), "--depth", "2")
    assert code == 0
    res = _report(out)["result"]
    assert res["weights"] == [0.5, 0.25, 0.125]
    assert res["tail"] == 0.125
    assert res["values"]["const(1)"][0] == pytest.approx(1 - 0.125)


def test_kms_rejects_small_beta(capsys):
    code, _ = _run(capsys, "kms", "--system", "tent", "--beta", str(np.log(2)))
    assert code == 2


def test_reports_are_deterministic(capsys):
    reports = []
    for _ in range(2):
        _, out = _run(capsys, "kms", "--system", "sierpinski", "--seed", "3")
        rep = _report(out)
        rep.pop("timestamp")
        reports.append(json.dumps(rep, sort_keys=True))
    assert reports[0] == reports[1]


def test_verify_tent(capsys, tmp_path):
    code, out = _run(capsys, "verify", "--system", "tent", "--seed", "7", "--out", str(tmp_path))
    assert code == 0, out.err
    rep = _report(out)
    assert rep["result"]["passed"]
    assert len(rep["result"]["checks"]) == 11
    assert set(rep["timestamp"]["seconds"]) == {str(k) for k in range(11)}


def test_verify_tampered_tolerance(capsys):
    code, out = _run(capsys, "verify", "--system", "tent", "--tolerance", "1e-30")
    assert code == 2
    rep = _report(out)
    assert not rep["result"]["passed"]
    assert rep["tolerances"]["mean"] == 1e-30
    assert all(line.startswith("[FAIL]") for line in rep["result"]["failures"])


def test_verify_unknown_tolerance_name(capsys):
    code, _ = _run(capsys, "verify", "--system", "tent", "--tol", "bogus=1")
    assert code == 1


def test_verify_sierpinski(capsys):
    code, out = _run(capsys, "verify", "--system", "sierpinski")
    assert code == 0, out.err
