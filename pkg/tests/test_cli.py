"""Command-line front end: descriptors, emission contracts, exit codes."""

import json
import os

import numpy as np
import pytest

from cocycle_lab import cli, deform, potentials, solenoid
from cocycle_lab.cli import dispatch, load_descriptor, save_descriptor
from cocycle_lab.errors import UsageError, ValidationError
from cocycle_lab.util import canonical_json


DESCRIPTORS = os.path.join(os.path.dirname(__file__), "..", "descriptors")


def desc(name):
    return os.path.join(DESCRIPTORS, name)


def read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def report_of(path):
    doc = json.loads(read(path))
    assert set(doc) == {"version", "config", "report"}
    assert doc["version"]
    assert "command" in doc["config"] and "params" in doc["config"]
    return doc["report"]


# ---------------------------------------------------------------------------
# descriptor IO
# ---------------------------------------------------------------------------


def test_bundled_descriptors_round_trip_byte_identical():
    for name in sorted(os.listdir(DESCRIPTORS)):
        path = desc(name)
        raw = read(path)
        again = canonical_json(cli.descriptor_json(load_descriptor(path))) + "\n"
        assert again == raw


def test_save_load_tower_round_trip(tmp_path):
    stage = solenoid.base_stage(potentials.smooth_bump_potential(2.0, 1.0, 0.5))
    child = solenoid.realize_padding(
        stage, deform.PaddingSpec(delta=0.05, N=4, n=2), 0.4)
    path = tmp_path / "tower.json"
    save_descriptor(child, str(path))
    raw = read(str(path))
    loaded = load_descriptor(str(path))
    assert canonical_json(cli.descriptor_json(loaded)) + "\n" == raw
    assert loaded.depth == child.depth
    assert loaded.arc_length == child.arc_length


def test_load_descriptor_accepts_bundled_names():
    fam = load_descriptor("cos-family")
    assert fam.n1 == 2


def test_load_descriptor_missing_file():
    with pytest.raises(UsageError):
        load_descriptor("/nonexistent/path.json")


def test_load_descriptor_negative_segment_length(tmp_path):
    doc = json.loads(read(desc("v0.json")))
    doc["segments"][0]["piece"]["len"] = -1.0
    path = tmp_path / "bad.json"
    path.write_text(canonical_json(doc))
    with pytest.raises(ValidationError):
        load_descriptor(str(path))


def test_load_descriptor_segments_must_fill_period(tmp_path):
    doc = json.loads(read(desc("v0.json")))
    doc["period"] = doc["period"] + 0.25
    path = tmp_path / "bad.json"
    path.write_text(canonical_json(doc))
    with pytest.raises(ValidationError) as exc:
        load_descriptor(str(path))
    assert "period" in str(exc.value) or "segment" in str(exc.value)


# ---------------------------------------------------------------------------
# worked examples
# ---------------------------------------------------------------------------


def test_bands_free_discrete_single_row(tmp_path):
    out = tmp_path / "bands.csv"
    rc = dispatch(["bands", "--potential", desc("free.json"),
                   "--emin", "-3", "--emax", "3", "--tol", "1e-10",
                   "--out", str(out)])
    assert rc == 0
    lines = read(str(out)).splitlines()
    assert lines[0].startswith("# cocycle-lab ")
    assert lines[1] == "E_lo,E_hi"
    assert lines[2:] == ["-2,2"]


def test_verify_parseval_example(tmp_path):
    out = tmp_path / "rep.json"
    rc = dispatch(["verify", "parseval", "--n", "4", "--seed", "7",
                   "--grid", "16384", "--out", str(out)])
    assert rc == 0
    rep = report_of(str(out))
    assert rep["gap"] <= 1e-6


def test_deform_pad_period_formula(tmp_path):
    out = tmp_path / "v1.json"
    rc = dispatch(["deform", "pad", "--in", desc("v0.json"),
                   "--delta", "0.05", "--N", "8", "--n", "16",
                   "--out", str(out)])
    assert rc == 0
    v0 = load_descriptor(desc("v0.json"))
    v1 = load_descriptor(str(out))
    spec = deform.PaddingSpec(delta=0.05, N=8, n=16)
    assert v1.period == spec.new_period(v0.period)


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_unknown_command_is_usage_error(capsys):
    assert dispatch(["frobnicate"]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0
    capsys.readouterr()


def test_malformed_descriptor_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "discrete-family", "n0": 1')
    rc = dispatch(["bands", "--potential", str(path),
                   "--out", str(tmp_path / "x.csv")])
    assert rc == 2
    assert "malformed descriptor" in capsys.readouterr().err


def test_wrong_descriptor_kind_is_usage_error(tmp_path, capsys):
    rc = dispatch(["deform", "pad", "--in", desc("cos2.json"),
                   "--delta", "0.05", "--N", "4", "--n", "4",
                   "--out", str(tmp_path / "x.json")])
    assert rc == 2
    capsys.readouterr()


def test_domain_failure_exits_one(tmp_path, capsys):
    # composite pipeline collapse: the window sits inside a spectral gap
    rc = dispatch(["verify", "asd12", "--family", desc("cos2.json"),
                   "--emin", "3.5", "--emax", "3.9", "--grid", "20",
                   "--tpoints", "4", "--out", str(tmp_path / "x.json")])
    assert rc == 1
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "x.json").exists()


# ---------------------------------------------------------------------------
# emission contracts
# ---------------------------------------------------------------------------


def test_identical_invocations_byte_identical(tmp_path):
    argv = ["ids", "--potential", desc("cos2.json"), "--emin", "-2.5",
            "--emax", "2.5", "--count", "40"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert dispatch(argv + ["--out", str(a)]) == 0
    assert dispatch(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_jobs_do_not_change_bytes(tmp_path):
    base = ["sweep", "--potential", desc("cos2.json"), "--quantity", "growth",
            "--emin", "-2.5", "--emax", "2.5", "--count", "24",
            "--samples", "256"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert dispatch(base + ["--jobs", "1", "--out", str(a)]) == 0
    assert dispatch(base + ["--jobs", "8", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_cache_reuses_and_preserves_bytes(tmp_path, monkeypatch):
    argv = ["sweep", "--potential", desc("cos2.json"), "--quantity", "ids",
            "--emin", "-2.5", "--emax", "2.5", "--count", "30"]
    cold = tmp_path / "cold.csv"
    assert dispatch(argv + ["--out", str(cold)]) == 0
    cache = tmp_path / "cache"
    monkeypatch.setenv("COCYCLE_LAB_CACHE", str(cache))
    first = tmp_path / "first.csv"
    assert dispatch(argv + ["--out", str(first)]) == 0
    assert len(os.listdir(cache)) == 1
    second = tmp_path / "second.csv"
    assert dispatch(argv + ["--out", str(second)]) == 0
    assert cold.read_bytes() == first.read_bytes() == second.read_bytes()


def test_growth_csv_skips_gap_energies(tmp_path):
    out = tmp_path / "g.csv"
    rc = dispatch(["growth", "--potential", desc("cos2.json"),
                   "--emin", "-3", "--emax", "3", "--count", "40",
                   "--samples", "256", "--out", str(out)])
    assert rc == 0
    lines = read(str(out)).splitlines()
    assert lines[1] == "E,value"
    rows = [ln.split(",") for ln in lines[2:]]
    assert 0 < len(rows) < 40
    assert all(float(v) >= 1.0 for _, v in rows)


def test_density_rows_match_library_values(tmp_path):
    import cocycle_lab.cocycle as cyc

    out = tmp_path / "d.csv"
    rc = dispatch(["density", "--potential", desc("free.json"),
                   "--emin", "-2", "--emax", "2", "--count", "20",
                   "--out", str(out)])
    assert rc == 0
    system = cyc.DiscreteCocycle(load_descriptor(desc("free.json")).slice(0.0))
    for line in read(str(out)).splitlines()[2:]:
        e, v = (float(tok) for tok in line.split(","))
        assert v == pytest.approx(float(cyc.density(system, e)), abs=1e-12)


def test_tower_verbs_end_to_end(tmp_path):
    t1 = tmp_path / "t1.json"
    rc = dispatch(["tower", "realize-pad", "--in", desc("v0.json"),
                   "--delta", "0.05", "--N", "4", "--n", "2",
                   "--eps0", "0.4", "--out", str(t1)])
    assert rc == 0
    t2 = tmp_path / "t2.json"
    rc = dispatch(["tower", "realize-mix", "--in", str(t1),
                   "--delta", "0.02", "--n", "3", "--eps0", "0.2",
                   "--out", str(t2)])
    assert rc == 0

    trace = tmp_path / "trace.csv"
    rc = dispatch(["tower", "trace", "--in", str(t1), "--tmax", "10",
                   "--samples", "32", "--out", str(trace)])
    assert rc == 0
    lines = read(str(trace)).splitlines()
    assert lines[1] == "t,V"
    assert len(lines) == 2 + 32

    mx = tmp_path / "mx.json"
    rc = dispatch(["tower", "mixedness", "--child", str(t2),
                   "--parent", str(t1), "--N", "2", "--starts", "256",
                   "--out", str(mx)])
    assert rc == 0
    rep = report_of(str(mx))
    assert rep["N"] == 2 and len(rep["per_j"]) == 1


def test_mixedness_rejects_unrelated_parent(tmp_path, capsys):
    t1 = tmp_path / "t1.json"
    assert dispatch(["tower", "realize-pad", "--in", desc("v0.json"),
                     "--delta", "0.05", "--N", "4", "--n", "2",
                     "--eps0", "0.4", "--out", str(t1)]) == 0
    other = tmp_path / "other.json"
    save_descriptor(solenoid.base_stage(potentials.free_continuum(2.0)),
                    str(other))
    rc = dispatch(["tower", "mixedness", "--child", str(t1),
                   "--parent", str(other), "--N", "2",
                   "--out", str(tmp_path / "x.json")])
    assert rc == 2
    capsys.readouterr()


def test_verify_b1_seeded_draws_reproduce(tmp_path):
    argv = ["verify", "b1", "--n", "5", "--seed", "11"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert dispatch(argv + ["--out", str(a)]) == 0
    assert dispatch(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(read(str(a)))
    params = doc["config"]["params"]
    assert len(params["lambdas"]) == 5
    assert doc["report"]["secant_error"] >= 0.0


def test_verify_slowdecay_csv_schema(tmp_path):
    out = tmp_path / "sd.csv"
    rc = dispatch(["verify", "slowdecay", "--ns", "8,16", "--depth", "2",
                   "--grid", "64", "--out", str(out)])
    assert rc == 0
    lines = read(str(out)).splitlines()
    assert lines[1] == "m,n,residual,B_drift,theta_drift"
    rows = [ln.split(",") for ln in lines[2:]]
    assert len(rows) == 4
    by = {(int(m), int(n)): float(res) for m, n, res, _, _ in rows}
    assert by[(1, 16)] < by[(1, 8)]


def test_verify_wj_model_report(tmp_path):
    out = tmp_path / "wj.json"
    rc = dispatch(["verify", "wj-model", "--delta", "0.02", "--R", "100",
                   "--cprime", "0.2", "--P", "12", "--trials", "5000",
                   "--seed", "42", "--out", str(out)])
    assert rc == 0
    rep = report_of(str(out))
    assert 0.0 <= rep["p_below_C0"] <= 1.0


def test_verify_spectral_parseval_report(tmp_path):
    out = tmp_path / "sp.json"
    rc = dispatch(["verify", "spectral-parseval", "--potential",
                   desc("cos3.json"), "--n", "10", "--out", str(out)])
    assert rc == 0
    rep = report_of(str(out))
    assert rep["parseval"] == pytest.approx(1.0, abs=1e-5)
    assert rep["max_band_integral"] <= 1.0 + 1e-3
    assert len(rep["band_integrals"]) == rep["bands"] == 3
