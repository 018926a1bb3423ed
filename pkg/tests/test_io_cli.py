import json

import numpy as np
import pytest
from conftest import profile

from hypmin import io
from hypmin.asymptotics import AsymptoticsReport
from hypmin.cli import run
from hypmin.elliptic import evaluate
from hypmin.errors import WriteFailure
from hypmin.geometry import Disk, lens_domain
from hypmin.plotting import emit_plot, plot_field, plot_report


def _report(series=((0.2, 0.1), (0.1, 0.05), (0.05, 0.02)), **kw):
    base = dict(experiment="theorem1", domain_hash="abc", params={"delta": 0.3},
                series=list(series), slope=1.1, intercept=-0.5, threshold=0.8, verdict=True)
    base.update(kw)
    return AsymptoticsReport(**base)


@pytest.fixture
def domain_files(tmp_path):
    out = {}
    for name, dom in (("disk", Disk(radius=1.0)), ("lens", lens_domain((0, 0), 0.5, 1.0, 1.0))):
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(dom.to_dict()))
        out[name] = p
    return out


# ---------------------------------------------------------------- round trips

def test_json_keeps_non_finite(tmp_path):
    p = io.write_json(tmp_path / "a.json", {"x": float("nan"), "y": [1.0, float("inf")]})
    doc = io.read_json(p)
    assert doc == {"x": "nan", "y": [1.0, "inf"]}
    assert np.isnan(io._unjson(doc["x"]))


def test_field_round_trip(tmp_path, disk128):
    files = io.write_field(disk128, tmp_path / "field.csv")
    assert [f.name for f in files] == ["field.csv", "field.json"]
    back = io.read_field(tmp_path / "field.csv")
    assert np.array_equal(back.values, disk128.values)
    assert np.array_equal(back.mask, disk128.mask)
    assert back.origin == disk128.origin and back.spacing == disk128.spacing
    assert back.solver_meta["eps_schedule"] == [0.0]


def test_field_round_trip_with_patches(tmp_path, lens128):
    files = io.write_field(lens128, tmp_path / "lens.csv")
    assert (tmp_path / "lens_patches.npz") in files
    back = io.read_field(tmp_path / "lens.csv")
    assert len(back.patches) == 2
    pts = np.array([[1e-3, 0.0], [0.05, 0.01], [0.3, 0.0], [0.7, 0.1]])
    assert np.array_equal(evaluate(back, pts), evaluate(lens128, pts))


def test_profile_round_trip(tmp_path):
    prof = profile(0.5)
    io.write_profile(prof, tmp_path / "profile.csv")
    back = io.read_profile(tmp_path / "profile.csv")
    assert np.array_equal(back.theta_grid, prof.theta_grid)
    assert np.array_equal(back.h_values, prof.h_values)
    assert back.midpoint_value == prof.midpoint_value
    assert back.endpoint_coeff == prof.endpoint_coeff
    # between nodes the loaded profile interpolates instead of integrating
    th = np.concatenate([np.geomspace(1e-12, 1e-2, 50), np.linspace(1e-2, np.pi / 2, 50)])
    assert np.allclose(back.h(th), prof.h(th), rtol=2e-6, atol=0)


def test_report_round_trip(tmp_path):
    rep = _report(slope=float("nan"), verdict=False, checks={"x": [0.1, 0.2]})
    io.write_report(rep, tmp_path / "report")
    back = io.read_report(tmp_path / "report")
    assert back.series == rep.series
    assert np.isnan(back.slope) and not back.verdict
    cols = io.read_csv(tmp_path / "report.csv")
    assert np.array_equal(cols["r"], rep.radii)


def test_manifest_is_deterministic(tmp_path):
    files = [tmp_path / "b.csv", tmp_path / "a.json"]
    m1 = io.write_manifest(tmp_path, "solve", {"resolution": 128}, files, {"sampling": 3})
    text = m1.read_text()
    m2 = io.write_manifest(tmp_path, "solve", {"resolution": 128}, files, {"sampling": 3})
    assert m2.read_text() == text
    doc = json.loads(text)
    assert doc["files"] == ["a.json", "b.csv"]
    assert doc["seeds"] == {"sampling": 3}
    assert "time" not in text.lower()


def test_write_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(WriteFailure):
        io.write_json(blocker / "x.json", {})
    with pytest.raises(WriteFailure):
        io.write_csv(blocker / "x.csv", {"a": [1.0]})


# ---------------------------------------------------------------- plots

def test_plot_report_is_deterministic(tmp_path):
    a = plot_report(_report(), tmp_path / "a.svg").read_bytes()
    b = plot_report(_report(), tmp_path / "b.svg").read_bytes()
    assert a == b
    assert b"<svg" in a and b"slope 1.100" in a


def test_plot_report_empty_series(tmp_path):
    with pytest.raises(WriteFailure, match="empty"):
        plot_report(_report(series=()), tmp_path / "x.svg")
    with pytest.raises(WriteFailure):
        plot_report(_report(series=((0.2, 0.0), (0.1, 0.0))), tmp_path / "x.svg")


def test_plot_field(tmp_path, disk128):
    p = plot_field(disk128, tmp_path / "f.svg")
    assert p.read_bytes().startswith(b"<?xml")
    assert emit_plot(disk128, tmp_path / "g.svg").exists()
    assert emit_plot(_report().to_dict(), tmp_path / "h.svg").exists()
    with pytest.raises(WriteFailure):
        emit_plot(42, tmp_path / "i.svg")


# ---------------------------------------------------------------- command line

def test_cli_solve(tmp_path, domain_files):
    out = tmp_path / "run"
    assert run(["solve", "--domain", str(domain_files["disk"]), "--resolution", "128",
                "--out", str(out), "--plot"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["files"]) == {"field.csv", "field.json", "field.svg"}
    assert man["config"]["resolution"] == 128
    fld = io.read_field(out / "field.csv")
    assert evaluate(fld, [0.3, 0.4]) == pytest.approx(np.sqrt(0.75), abs=1e-2)


def test_cli_usage_errors(tmp_path, domain_files, capsys):
    assert run([]) == 2
    assert run(["frobnicate"]) == 2
    assert run(["solve", "--domain", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["solve", "--domain", str(bad), "--out", str(tmp_path)]) == 2
    assert run(["solve", "--domain", str(domain_files["disk"]), "--resolution", "100",
                "--out", str(tmp_path)]) == 2
    assert run(["cone", "--mu", "1.5", "--out", str(tmp_path)]) == 2
    assert run(["verify", "localization", "--domain", str(domain_files["lens"]),
                "--out", str(tmp_path)]) == 2
    assert "usage error" in capsys.readouterr().err
    assert run(["--help"]) == 0


def test_cli_cone_and_certificate(tmp_path):
    assert run(["cone", "--mu", "0.5", "--out", str(tmp_path / "c")]) == 0
    prof = io.read_profile(tmp_path / "c" / "profile.csv")
    assert prof.midpoint_value == pytest.approx(1.6012553265913607, rel=1e-9)
    assert run(["certify-supersolution", "--mu", "0.5", "--grid-size", "10000",
                "--out", str(tmp_path / "s")]) == 0
    doc = json.loads((tmp_path / "s" / "certificate.json").read_text())
    assert doc["certified"] and doc["max_residual"] <= 0


def test_cli_mobius_is_reproducible(tmp_path):
    for k in (1, 2):
        assert run(["mobius-check", "--L", "2", "--samples", "200", "--seed", "7",
                    "--out", str(tmp_path / f"m{k}")]) == 0
    a = (tmp_path / "m1" / "mobius.json").read_text()
    assert a == (tmp_path / "m2" / "mobius.json").read_text()
    assert json.loads((tmp_path / "m1" / "manifest.json").read_text())["seeds"] == {"sampling": 7}


def test_cli_verify_and_plot(tmp_path, domain_files):
    out = tmp_path / "v"
    assert run(["verify", "smooth", "--domain", str(domain_files["disk"]), "--resolution", "128",
                "--out", str(out), "--plot"]) == 0
    rep = io.read_report(out / "report")
    assert rep.verdict and rep.experiment == "smooth"
    assert (out / "report.svg").exists()
    assert run(["plot", str(out / "report.json"), "--out", str(tmp_path / "p.svg")]) == 0
    assert run(["plot", str(tmp_path / "nothing.json"), "--out", str(tmp_path / "q.svg")]) == 2


def test_cli_solver_error_exit_code(tmp_path, domain_files):
    # a depth beyond the inradius cannot be evaluated
    assert run(["verify", "smooth", "--domain", str(domain_files["disk"]), "--resolution", "128",
                "--radii", "1.5,0.5,0.2,0.1", "--out", str(tmp_path)]) == 3


def test_cli_verdict_failure_exit_code(tmp_path):
    # rounding alone exceeds a tolerance of 1e-30
    assert run(["mobius-check", "--samples", "20", "--tol", "1e-30", "--out", str(tmp_path)]) == 1
    assert json.loads((tmp_path / "mobius.json").read_text())["verdict"] is False
