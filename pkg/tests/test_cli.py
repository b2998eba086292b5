"""Command line front end: exit codes, manifests, failure markers, sweeps,
and byte-identical reruns."""

import json

import pytest

from odmrkit import data_root, load_scenario, sha256_digest
from odmrkit.cli import execute_scenario, main

SCENARIOS = data_root() / "scenarios"


def _run(tmp_path, name, *extra):
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(SCENARIOS / name), "--out", str(out), *extra])
    return code, out


def test_run_sensitivity_ac(tmp_path):
    code, out = _run(tmp_path, "sensitivity_ac_echo.scn")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["kind"] == "sensitivity-ac"
    assert report["eta_t_per_sqrt_hz"] == pytest.approx(7.372e-6, rel=1e-3)


def test_manifest_digests_match_files(tmp_path):
    code, out = _run(tmp_path, "esr_h10b15n.scn")
    assert code == 0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["tool"]["name"] == "odmrkit"
    scenario_path = SCENARIOS / "esr_h10b15n.scn"
    assert manifest["scenario"]["sha256"] == sha256_digest(scenario_path)
    for name, digest in manifest["outputs"].items():
        assert sha256_digest(out / name) == digest
    assert set(manifest["outputs"]) == {"density.csv", "spectrum.csv", "report.json"}
    scn = load_scenario(scenario_path)
    for ref in scn.inputs.values():
        assert ref in manifest["inputs"]


def test_validate_only_writes_nothing(tmp_path):
    out = tmp_path / "out"
    code = main([
        "run", "--scenario", str(SCENARIOS / "esr_h10b15n.scn"),
        "--out", str(out), "--validate-only",
    ])
    assert code == 0
    assert not out.exists()


def test_missing_scenario_is_validation_error(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(tmp_path / "absent.scn"), "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_builtin_scenario_ref_runs(tmp_path):
    by_ref = tmp_path / "by_ref"
    by_path = tmp_path / "by_path"
    assert main(["run", "--scenario", "builtin:sensitivity_dc_slope.scn",
                 "--out", str(by_ref)]) == 0
    assert main(["run", "--scenario", str(SCENARIOS / "sensitivity_dc_slope.scn"),
                 "--out", str(by_path)]) == 0
    assert (by_ref / "report.json").read_bytes() == (by_path / "report.json").read_bytes()


def test_builtin_scenario_ref_unknown_name(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--scenario", "builtin:no_such.scn", "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_strict_validation_scenario_fails_with_marker(tmp_path):
    # the bundled registry has placeholder boron gammas on purpose
    code, out = _run(tmp_path, "validate_strict.scn")
    assert code == 2
    marker = json.loads((out / "FAILED.json").read_text())
    assert marker["exit_code"] == 2
    assert "gamma" in marker["message"]
    assert not (out / "report.json").exists()


def test_bundle_validation_scenario_passes(tmp_path):
    code, out = _run(tmp_path, "validate_bundle.scn")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["ok"] is True
    assert "registry" in report["validated"]


def test_rerun_is_byte_identical(tmp_path):
    _, out1 = _run(tmp_path / "a", "esr_h10b15n.scn")
    _, out2 = _run(tmp_path / "b", "esr_h10b15n.scn")
    names = sorted(p.name for p in out1.iterdir())
    assert names == sorted(p.name for p in out2.iterdir())
    for name in names:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_workers_do_not_change_results(tmp_path):
    _, out1 = _run(tmp_path / "a", "esr_h10b15n.scn", "--workers", "1")
    _, out2 = _run(tmp_path / "b", "esr_h10b15n.scn", "--workers", "4")
    for name in ("density.csv", "spectrum.csv", "report.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_rabi_scenario_reports_predictions(tmp_path):
    code, out = _run(tmp_path, "rabi_demo.scn")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["predicted_freqs_mhz"]) == 4
    assert (out / "trace.csv").exists()
    assert 60.0 < report["drive_freq_mhz"] < 72.0


def test_unknown_output_key_rejected(tmp_path):
    scn = tmp_path / "odd.scn"
    scn.write_text(
        'format_version = 1\nkind = "sensitivity-ac"\n\n[parameters]\n'
        "c_max = 0.02\nn_photons = 0.27\ntau_s = 5.01e-7\nt2_s = 5.01e-7\n"
        't_i_s = 1.0e-6\nt_r_s = 1.0e-6\n\n[outputs]\nbogus = "x.json"\n'
    )
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(scn), "--out", str(out)])
    assert code == 2
    assert not out.exists()


def test_missing_parameter_marks_failure(tmp_path):
    scn = tmp_path / "incomplete.scn"
    scn.write_text('format_version = 1\nkind = "sensitivity-ac"\n\n[parameters]\nc_max = 0.02\n')
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(scn), "--out", str(out)])
    assert code == 2
    assert (out / "FAILED.json").exists()


def test_sweep_mixed_outcomes(tmp_path):
    out = tmp_path / "sweep"
    code = main([
        "sweep", "--scenario", str(SCENARIOS / "sensitivity_ac_echo.scn"),
        "--out", str(out), "--axis", "tau_s", "--values", "3e-07,5.01e-07,-1.0",
    ])
    assert code == 2
    lines = (out / "sweep_index.csv").read_text().splitlines()
    assert lines[0] == "index,value,status,detail"
    assert lines[1].startswith("0,3e-07,ok,")
    assert lines[2].startswith("1,5.01e-07,ok,")
    assert lines[3].startswith("2,-1.0,failed:2,")
    assert (out / "point_000" / "report.json").exists()
    assert (out / "point_001" / "report.json").exists()
    assert (out / "point_002" / "FAILED.json").exists()
    r0 = json.loads((out / "point_000" / "report.json").read_text())
    assert r0["parameters"]["tau_s"] == 3e-07


def test_sweep_all_ok(tmp_path):
    out = tmp_path / "sweep"
    code = main([
        "sweep", "--scenario", str(SCENARIOS / "sensitivity_dc_slope.scn"),
        "--out", str(out), "--axis", "r_photons_per_s", "--values", "1e6,4e6",
    ])
    assert code == 0
    r0 = json.loads((out / "point_000" / "report.json").read_text())
    r1 = json.loads((out / "point_001" / "report.json").read_text())
    assert r0["eta_t_per_sqrt_hz"] == pytest.approx(2 * r1["eta_t_per_sqrt_hz"], rel=1e-12)


def test_sweep_guards(tmp_path):
    scenario = str(SCENARIOS / "sensitivity_ac_echo.scn")
    base = ["sweep", "--scenario", scenario, "--out", str(tmp_path / "o")]
    assert main(base + ["--axis", "tau_s", "--values", " , "]) == 2
    assert main(base + ["--axis", "warp", "--values", "1.0"]) == 2
    assert not (tmp_path / "o").exists()
    fit_scn = str(SCENARIOS / "fit_multiplet_demo.scn")
    code = main([
        "sweep", "--scenario", fit_scn, "--out", str(tmp_path / "o2"),
        "--axis", "init", "--values", "1.0",
    ])
    assert code == 2


def test_execute_scenario_returns_written_names(tmp_path):
    scn = load_scenario(SCENARIOS / "sensitivity_dc_slope.scn")
    written = execute_scenario(scn, tmp_path / "w")
    assert written == ["report.json", "run_manifest.json"]


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
