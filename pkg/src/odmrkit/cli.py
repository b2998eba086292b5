"""Scenario-driven command line front end.

Scenarios are TOML files binding bundled or user data files to one
computation kind; outputs are CSV payloads plus a JSON report, and every run
writes a manifest of input/output digests. Outputs carry no timestamps, so a
rerun with identical inputs is byte-identical.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    DriveSpec,
    diagonalize,
    dominant_line,
    simulate_nuclear_rabi,
    transition_spectrum,
)
from .effective import model_couplings, rabi_frequencies
from .errors import FitConvergenceError, NumericalError, OdmrkitError, ValidationError
from .fileio import (
    BUILTIN_PREFIX,
    Scenario,
    load_bath,
    load_defect_model,
    load_registry,
    load_scenario,
    read_spectrum_csv,
    read_trace_csv,
    require_complete_gammas,
    resolve_input,
    sha256_digest,
    write_density_csv,
    write_report_json,
    write_spectrum_csv,
    write_trace_csv,
)
from .fitting import (
    MULTIPLICITY_WEIGHTS,
    AMPLITUDE_LAWS,
    MultipletModel,
    DecayModel,
    fit_decay_with_stretch_check,
    fit_multiplet,
    fit_polarization,
)
from .hamiltonian import FieldConfig, build_hamiltonian
from .sensitivity import SensitivityInput, sensitivity_ac, sensitivity_dc
from .spectrum import (
    spectral_density_bruteforce,
    spectral_density_fft,
    support_bound,
    synthesize_esr,
)

log = logging.getLogger("odmrkit")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

FAILURE_MARKER = "FAILED.json"
MANIFEST_NAME = "run_manifest.json"

DEFAULT_OUTPUTS = {
    "esr-spectrum": {"density_csv": "density.csv", "spectrum_csv": "spectrum.csv",
                     "report_json": "report.json"},
    "endor-spectrum": {"spectrum_csv": "spectrum.csv", "report_json": "report.json"},
    "rabi": {"trace_csv": "trace.csv", "report_json": "report.json"},
    "fit-multiplet": {"report_json": "report.json"},
    "fit-polarization": {"report_json": "report.json"},
    "fit-decay": {"report_json": "report.json"},
    "sensitivity-dc": {"report_json": "report.json"},
    "sensitivity-ac": {"report_json": "report.json"},
    "validate": {"report_json": "report.json"},
}

_REQUIRED = object()


def _param(scenario: Scenario, key: str, default=_REQUIRED):
    if key not in scenario.parameters:
        if default is _REQUIRED:
            raise ValidationError(
                f"{scenario.path}: parameters.{key} is required for kind {scenario.kind!r}"
            )
        return default
    return scenario.parameters[key]


def _fparam(scenario, key, default=_REQUIRED) -> float:
    value = _param(scenario, key, default)
    if value is default and default is not _REQUIRED:
        return default
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ValidationError(f"{scenario.path}: parameters.{key} must be a number")
    return float(value)


def _iparam(scenario, key, default=_REQUIRED) -> int:
    value = _param(scenario, key, default)
    if value is default and default is not _REQUIRED:
        return default
    if not isinstance(value, int) or isinstance(value, bool):
        raise ValidationError(f"{scenario.path}: parameters.{key} must be an integer")
    return value


def _sparam(scenario, key, default=_REQUIRED) -> str:
    value = _param(scenario, key, default)
    if not isinstance(value, str):
        raise ValidationError(f"{scenario.path}: parameters.{key} must be a string")
    return value


def _bparam(scenario, key, default=_REQUIRED) -> bool:
    value = _param(scenario, key, default)
    if not isinstance(value, bool):
        raise ValidationError(f"{scenario.path}: parameters.{key} must be true or false")
    return value


def _pair_param(scenario, key, default) -> tuple[float, float]:
    value = _param(scenario, key, default)
    if value is default:
        return default
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ValidationError(f"{scenario.path}: parameters.{key} must be a pair of numbers")
    return float(value[0]), float(value[1])


def _output_names(scenario: Scenario) -> dict[str, str]:
    names = dict(DEFAULT_OUTPUTS[scenario.kind])
    for key, value in scenario.outputs.items():
        if key not in names:
            raise ValidationError(
                f"{scenario.path}: unknown output {key!r} for kind {scenario.kind!r} "
                f"(known: {', '.join(sorted(names))})"
            )
        names[key] = value
    return names


def _resolve_inputs(scenario: Scenario) -> dict[str, Path]:
    return {
        key: resolve_input(ref, scenario.path.parent)
        for key, ref in sorted(scenario.inputs.items())
    }


def _need_input(scenario: Scenario, paths: dict[str, Path], key: str) -> Path:
    if key not in paths:
        raise ValidationError(
            f"{scenario.path}: inputs.{key} is required for kind {scenario.kind!r}"
        )
    return paths[key]


def _load_registry_input(scenario, paths):
    return load_registry(_need_input(scenario, paths, "registry"))


def _run_esr_spectrum(scenario, paths, out_dir, names, workers):
    registry = _load_registry_input(scenario, paths)
    sites = load_bath(_need_input(scenario, paths, "bath"), registry)
    bin_width = _fparam(scenario, "bin_width_mhz")
    bound = support_bound(sites)
    f_max = _fparam(scenario, "f_max_mhz", None)
    if f_max is None:
        f_max = 1.5 * bound if bound > 0 else 10.0 * bin_width
    method = _sparam(scenario, "method", "fft")
    if method == "fft":
        density = spectral_density_fft(sites, bin_width, f_max, workers=workers)
    elif method == "bruteforce":
        density = spectral_density_bruteforce(sites, bin_width, f_max)
    else:
        raise ValidationError(f"{scenario.path}: method must be 'fft' or 'bruteforce'")
    center = _fparam(scenario, "center_mhz")
    contrast = _fparam(scenario, "contrast")
    extra_fwhm = _fparam(scenario, "extra_fwhm_mhz", 0.0)
    series = synthesize_esr(density, center, contrast, extra_fwhm)
    write_density_csv(out_dir / names["density_csv"], density)
    write_spectrum_csv(out_dir / names["spectrum_csv"], series)
    return {
        "kind": scenario.kind,
        "method": method,
        "n_sites": len(sites),
        "bin_width_mhz": bin_width,
        "f_max_mhz": f_max,
        "support_bound_mhz": bound,
        "center_mhz": center,
        "contrast": contrast,
        "extra_fwhm_mhz": extra_fwhm,
        "n_bins": int(density.freq_offsets_mhz.size),
    }


def _run_endor_spectrum(scenario, paths, out_dir, names, workers):
    registry = _load_registry_input(scenario, paths)
    model = load_defect_model(_need_input(scenario, paths, "model"), registry)
    bz = _fparam(scenario, "bz_gauss")
    band = _pair_param(scenario, "band_mhz", (40.0, 90.0))
    fwhm = _fparam(scenario, "fwhm_mhz", 2.0)
    grid_step = _fparam(scenario, "grid_step_mhz", 0.02)
    manifold = _pair_param(scenario, "manifold", (-1.0, 0.5))
    h = build_hamiltonian(model, FieldConfig(bz_gauss=bz))
    eig = diagonalize(h)
    series = transition_spectrum(eig, manifold, band, fwhm, grid_step)
    write_spectrum_csv(out_dir / names["spectrum_csv"], series)
    return {
        "kind": scenario.kind,
        "bz_gauss": bz,
        "band_mhz": list(band),
        "fwhm_mhz": fwhm,
        "manifold": list(manifold),
        "n_lines": series.labels["n_lines"],
        "dominant_line_mhz": dominant_line(series),
    }


def _run_rabi(scenario, paths, out_dir, names, workers):
    registry = _load_registry_input(scenario, paths)
    model = load_defect_model(_need_input(scenario, paths, "model"), registry)
    bz = _fparam(scenario, "bz_gauss")
    b_dr = _fparam(scenario, "b_dr_gauss")
    theta_rad = float(np.deg2rad(_fparam(scenario, "theta_deg", 0.0)))
    phase_rad = float(np.deg2rad(_fparam(scenario, "phase_deg", 0.0)))
    t_max = _fparam(scenario, "t_max_us")
    n_samples = _iparam(scenario, "n_samples")
    if n_samples < 2 or t_max <= 0:
        raise ValidationError(f"{scenario.path}: need t_max_us > 0 and n_samples >= 2")
    dt = _fparam(scenario, "dt_us", None)
    freq = _fparam(scenario, "freq_mhz", None)
    field = FieldConfig(bz_gauss=bz)
    if freq is None:
        eig = diagonalize(build_hamiltonian(model, field))
        freq = dominant_line(transition_spectrum(eig))
    drive = DriveSpec(b_dr_gauss=b_dr, freq_mhz=freq, theta_rad=theta_rad)
    durations = np.linspace(0.0, t_max, n_samples)
    trace = simulate_nuclear_rabi(model, field, drive, durations, dt, phase_rad)
    write_trace_csv(out_dir / names["trace_csv"], trace, "manifold")
    predicted = rabi_frequencies(model_couplings(model, bz, b_dr, theta_rad))
    return {
        "kind": scenario.kind,
        "bz_gauss": bz,
        "b_dr_gauss": b_dr,
        "theta_deg": float(np.rad2deg(theta_rad)),
        "drive_freq_mhz": freq,
        "t_max_us": t_max,
        "n_samples": n_samples,
        "predicted_freqs_mhz": predicted,
    }


def _init_multiplet(scenario, n_lines: int, law: str) -> MultipletModel:
    table = _param(scenario, "init")
    if not isinstance(table, dict):
        raise ValidationError(f"{scenario.path}: parameters.init must be a table")
    known = {"center_mhz", "splitting_mhz", "fwhm_mhz", "depth", "baseline",
             "amplitudes", "p", "p1", "p2"}
    unknown = set(table) - known
    if unknown:
        raise ValidationError(f"{scenario.path}: unknown init keys {sorted(unknown)}")
    kwargs = {
        "center_mhz": float(table.get("center_mhz", 0.0)),
        "splitting_mhz": float(table.get("splitting_mhz", 0.0)),
        "fwhm_mhz": float(table.get("fwhm_mhz", 1.0)),
        "depth": float(table.get("depth", 1.0)),
        "baseline": float(table.get("baseline", 1.0)),
        "n_lines": n_lines,
        "amplitude_law": law,
    }
    if law == "free":
        amps = table.get("amplitudes")
        if amps is None:
            weights = MULTIPLICITY_WEIGHTS.get(n_lines, np.ones(n_lines) / n_lines)
            amps = (kwargs["depth"] * weights).tolist()
        kwargs["amplitudes"] = tuple(float(a) for a in amps)
    if law == "binomial-P" or "p" in table:
        kwargs["p"] = float(table.get("p", 0.5))
    if law == "two-parameter-P1P2" or "p1" in table:
        kwargs["p1"] = float(table.get("p1", 0.5))
        kwargs["p2"] = float(table.get("p2", 0.5))
    return MultipletModel(**kwargs)


def _model_dict(model: MultipletModel) -> dict:
    out = {
        "center_mhz": model.center_mhz,
        "splitting_mhz": model.splitting_mhz,
        "fwhm_mhz": model.fwhm_mhz,
        "baseline": model.baseline,
        "n_lines": model.n_lines,
        "amplitude_law": model.amplitude_law,
        "line_positions_mhz": model.line_positions(),
        "line_amplitudes": model.line_amplitudes(),
    }
    if model.amplitude_law != "free":
        out["depth"] = model.depth
    for key in ("p", "p1", "p2"):
        value = getattr(model, key)
        if value is not None:
            out[key] = value
    return out


def _run_fit_multiplet(scenario, paths, out_dir, names, workers):
    spec = read_spectrum_csv(_need_input(scenario, paths, "spectrum"))
    n_lines = _iparam(scenario, "n_lines")
    law = _sparam(scenario, "law", "binomial-unpolarized")
    if law not in AMPLITUDE_LAWS:
        raise ValidationError(f"{scenario.path}: unknown amplitude law {law!r}")
    init = _init_multiplet(scenario, n_lines, law)
    model, report = fit_multiplet(spec, n_lines, law, init)
    return {"kind": scenario.kind, "law": law, "n_lines": n_lines,
            "model": _model_dict(model), "fit": report.to_dict()}


def _run_fit_polarization(scenario, paths, out_dir, names, workers):
    spec = read_spectrum_csv(_need_input(scenario, paths, "spectrum"))
    kind = _sparam(scenario, "model", "single")
    law = "binomial-P" if kind == "single" else "two-parameter-P1P2"
    init = _init_multiplet(scenario, 4, law)
    check = _bparam(scenario, "check_resolvable", True)
    result, report = fit_polarization(spec, kind, init, check_resolvable=check)
    return {"kind": scenario.kind, "model": kind,
            "polarization": result.to_dict(), "fit": report.to_dict()}


def _run_fit_decay(scenario, paths, out_dir, names, workers):
    trace = read_trace_csv(_need_input(scenario, paths, "trace"))
    table = _param(scenario, "init")
    if not isinstance(table, dict):
        raise ValidationError(f"{scenario.path}: parameters.init must be a table")
    init = DecayModel(
        t_us=float(table.get("t_us", 1.0)),
        amplitude=float(table.get("amplitude", 0.5)),
        offset=float(table.get("offset", 0.5)),
        stretch_n=float(table.get("stretch_n", 1.0)),
    )
    results = fit_decay_with_stretch_check(trace, init)
    model, report = results["frozen"]
    out = {
        "kind": scenario.kind,
        "decay": {"t_us": model.t_us, "amplitude": model.amplitude,
                  "offset": model.offset, "stretch_n": model.stretch_n},
        "fit": report.to_dict(),
        "stretch_disagrees_2sigma": results["disagree_2sigma"],
    }
    if "free" in results:
        free_model, free_report = results["free"]
        out["decay_free_stretch"] = {
            "t_us": free_model.t_us, "amplitude": free_model.amplitude,
            "offset": free_model.offset, "stretch_n": free_model.stretch_n,
            "fit": free_report.to_dict(),
        }
    return out


def _sensitivity_inputs(scenario) -> SensitivityInput:
    fields = ("r_photons_per_s", "c_m", "delta_nu_mhz", "max_slope_per_hz",
              "c_max", "n_photons", "tau_s", "t2_s", "t_i_s", "t_r_s")
    kwargs = {}
    for name in fields:
        value = _param(scenario, name, None)
        if value is not None:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValidationError(f"{scenario.path}: parameters.{name} must be a number")
            kwargs[name] = float(value)
    gamma = _fparam(scenario, "gamma_e_mhz_per_g", 2.8)
    return SensitivityInput(gamma_e_mhz_per_g=gamma, **kwargs)


def _run_sensitivity_dc(scenario, paths, out_dir, names, workers):
    mode = _sparam(scenario, "mode", "slope")
    inputs = _sensitivity_inputs(scenario)
    eta = sensitivity_dc(inputs, mode)
    return {"kind": scenario.kind, "mode": mode, "eta_t_per_sqrt_hz": eta,
            "parameters": dict(scenario.parameters)}


def _run_sensitivity_ac(scenario, paths, out_dir, names, workers):
    inputs = _sensitivity_inputs(scenario)
    eta = sensitivity_ac(inputs)
    return {"kind": scenario.kind, "eta_t_per_sqrt_hz": eta,
            "parameters": dict(scenario.parameters)}


def _run_validate(scenario, paths, out_dir, names, workers):
    validated = []
    registry = None
    if "registry" in paths:
        registry = load_registry(paths["registry"])
        if _bparam(scenario, "require_complete_gammas", True):
            require_complete_gammas(registry, paths["registry"])
        validated.append("registry")
    for key in ("model", "bath"):
        if key in paths:
            if registry is None:
                raise ValidationError(
                    f"{scenario.path}: validating inputs.{key} needs inputs.registry"
                )
            (load_defect_model if key == "model" else load_bath)(paths[key], registry)
            validated.append(key)
    if "spectrum" in paths:
        read_spectrum_csv(paths["spectrum"])
        validated.append("spectrum")
    if "trace" in paths:
        read_trace_csv(paths["trace"])
        validated.append("trace")
    if not validated:
        raise ValidationError(f"{scenario.path}: validate scenario lists no known inputs")
    return {"kind": scenario.kind, "validated": validated, "ok": True}


_HANDLERS = {
    "esr-spectrum": _run_esr_spectrum,
    "endor-spectrum": _run_endor_spectrum,
    "rabi": _run_rabi,
    "fit-multiplet": _run_fit_multiplet,
    "fit-polarization": _run_fit_polarization,
    "fit-decay": _run_fit_decay,
    "sensitivity-dc": _run_sensitivity_dc,
    "sensitivity-ac": _run_sensitivity_ac,
    "validate": _run_validate,
}


def _write_manifest(out_dir: Path, scenario: Scenario, paths: dict[str, Path],
                    written: list[str]) -> None:
    manifest = {
        "format_version": 1,
        "tool": {"name": "odmrkit", "version": __version__},
        "scenario": {"file": scenario.path.name, "sha256": sha256_digest(scenario.path)},
        "inputs": {
            scenario.inputs[key]: sha256_digest(path) for key, path in paths.items()
        },
        "outputs": {name: sha256_digest(out_dir / name) for name in sorted(written)},
    }
    write_report_json(out_dir / MANIFEST_NAME, manifest)


def execute_scenario(scenario: Scenario, out_dir: Path, workers: int = 1,
                     validate_only: bool = False) -> list[str]:
    """Run one scenario into out_dir; returns the written file names."""
    paths = _resolve_inputs(scenario)
    names = _output_names(scenario)
    if validate_only:
        log.info("%s: inputs resolve and parse, not running", scenario.path.name)
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / FAILURE_MARKER
    if marker.exists():
        marker.unlink()
    report = _HANDLERS[scenario.kind](scenario, paths, out_dir, names, workers)
    write_report_json(out_dir / names["report_json"], report)
    written = [names["report_json"]]
    for key, name in names.items():
        if key != "report_json" and (out_dir / name).exists():
            written.append(name)
    _write_manifest(out_dir, scenario, paths, written)
    log.info("%s: wrote %s", scenario.kind, ", ".join(sorted(written) + [MANIFEST_NAME]))
    return sorted(written) + [MANIFEST_NAME]


def _write_failure(out_dir: Path, exc: Exception, code: int) -> None:
    """Leave a marker next to any partial outputs. A failure before the output
    directory exists produced nothing, so nothing needs marking."""
    if not out_dir.is_dir():
        return
    try:
        write_report_json(
            out_dir / FAILURE_MARKER,
            {"error": type(exc).__name__, "message": str(exc), "exit_code": code},
        )
    except OSError:
        log.error("could not write failure marker in %s", out_dir)


def _code_for(exc: OdmrkitError) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    return EXIT_NUMERICAL


def _scenario_path(ref: str) -> Path:
    """--scenario accepts the same builtin: refs as scenario [inputs]."""
    if ref.startswith(BUILTIN_PREFIX):
        return resolve_input(ref, Path.cwd())
    return Path(ref)


def _cmd_run(args) -> int:
    out_dir = Path(args.out)
    try:
        scenario = load_scenario(_scenario_path(args.scenario))
        execute_scenario(scenario, out_dir, args.workers, args.validate_only)
        return EXIT_OK
    except (ValidationError, NumericalError, FitConvergenceError) as exc:
        code = _code_for(exc)
        log.error("%s", exc)
        if not args.validate_only:
            _write_failure(out_dir, exc, code)
        return code


def _sweep_point(scenario: Scenario, axis: str, value: float, point_dir: Path,
                 workers: int) -> tuple[int, str]:
    params = dict(scenario.parameters)
    params[axis] = value
    point = replace(scenario, parameters=params)
    try:
        execute_scenario(point, point_dir, workers)
        return EXIT_OK, ""
    except (ValidationError, NumericalError, FitConvergenceError) as exc:
        code = _code_for(exc)
        _write_failure(point_dir, exc, code)
        return code, f"{type(exc).__name__}: {exc}"


def _cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ValidationError("sweep needs a non-empty comma-separated --values list")
        scenario = load_scenario(_scenario_path(args.scenario))
        axis = args.axis
        if axis not in scenario.parameters:
            raise ValidationError(
                f"{scenario.path}: sweep axis {axis!r} is not a scenario parameter"
            )
        if not isinstance(scenario.parameters[axis], (int, float)) or isinstance(
            scenario.parameters[axis], bool
        ):
            raise ValidationError(f"{scenario.path}: sweep axis {axis!r} is not scalar")
        if args.validate_only:
            _resolve_inputs(scenario)
            return EXIT_OK
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION

    out_dir.mkdir(parents=True, exist_ok=True)
    results: dict[int, tuple[int, str]] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(args.workers, 1)) as pool:
        futures = {
            pool.submit(
                _sweep_point, scenario, axis, value, out_dir / f"point_{idx:03d}", 1
            ): idx
            for idx, value in enumerate(values)
        }
        for future in concurrent.futures.as_completed(futures):
            results[futures[future]] = future.result()

    with open(out_dir / "sweep_index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "value", "status", "detail"])
        for idx, value in enumerate(values):
            code, detail = results[idx]
            status = "ok" if code == EXIT_OK else f"failed:{code}"
            writer.writerow([idx, repr(value), status, detail])

    codes = [code for code, _ in results.values()]
    worst = max(codes)
    if worst != EXIT_OK:
        log.error("%d of %d sweep points failed", sum(c != 0 for c in codes), len(codes))
    return worst


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odmrkit",
        description="Spin-defect ESR/ODMR simulation and analysis scenarios.",
    )
    parser.add_argument("--version", action="version", version=f"odmrkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True,
                       help="scenario file (TOML), or builtin:NAME.scn for a bundled one")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--workers", type=int, default=1, help="worker threads")
        p.add_argument("--log-level", default="warning",
                       choices=["debug", "info", "warning", "error"])
        p.add_argument("--validate-only", action="store_true",
                       help="check inputs and exit without computing")

    run_p = sub.add_parser("run", help="execute one scenario")
    common(run_p)
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a scenario over a parameter axis")
    common(sweep_p)
    sweep_p.add_argument("--axis", required=True, help="scalar parameter name to sweep")
    sweep_p.add_argument("--values", required=True,
                         help="comma-separated numeric values for the axis")
    sweep_p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)
