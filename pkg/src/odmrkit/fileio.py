"""Readers and writers for the on-disk formats.

Structured inputs (isotope registries, defect models, bath tables, scenarios)
are TOML with a format_version key; array payloads are plain CSV with fixed
headers. Numbers are serialized with repr(), the shortest decimal that
round-trips exactly, and reports are JSON with sorted keys, so identical
inputs always produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .dynamics import PopulationTrace
from .errors import ValidationError
from .hamiltonian import (
    DefectModel,
    DefectNucleus,
    HyperfineTensor,
    rescale_transverse,
    rotate_tensor,
)
from .spectrum import BathComponent, BathSite, SpectralDensity, SpectrumSeries
from .spincore import IsotopeSpecies

FORMAT_VERSION = 1
GAMMA_SENTINEL = "REQUIRED-USER-INPUT"
AZZ_SENTINEL = "EXTERNAL-DFT"
DATA_ENV_VAR = "ODMRKIT_DATA"
BUILTIN_PREFIX = "builtin:"

SCENARIO_KINDS = (
    "esr-spectrum",
    "endor-spectrum",
    "rabi",
    "fit-multiplet",
    "fit-polarization",
    "fit-decay",
    "sensitivity-dc",
    "sensitivity-ac",
    "validate",
)


def _load_toml(path: Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: not valid TOML: {exc}") from None


def _check_header(doc: dict, path: Path, kind: str) -> None:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(
            f"{path}: format_version must be {FORMAT_VERSION}, got {version!r}"
        )
    if doc.get("kind") != kind:
        raise ValidationError(f"{path}: kind must be {kind!r}, got {doc.get('kind')!r}")


def _field(table: dict, key: str, types, where: str):
    if key not in table:
        raise ValidationError(f"{where}: missing key {key!r}")
    value = table[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise ValidationError(f"{where}: key {key!r} has wrong type {type(value).__name__}")
    return value


def load_registry(path: Path) -> dict[str, IsotopeSpecies]:
    """Isotope registry: records with name, two_I, gamma_n_MHz_per_G, abundance.

    A gamma of "REQUIRED-USER-INPUT" loads as None; anything needing the value
    fails later with a field-level message via require_gamma().
    """
    path = Path(path)
    doc = _load_toml(path)
    _check_header(doc, path, "isotope-registry")
    records = doc.get("isotope")
    if not isinstance(records, list) or not records:
        raise ValidationError(f"{path}: needs at least one [[isotope]] record")
    registry: dict[str, IsotopeSpecies] = {}
    for k, rec in enumerate(records):
        where = f"{path}: isotope[{k}]"
        name = _field(rec, "name", str, where)
        if name in registry:
            raise ValidationError(f"{where}: duplicate isotope name {name!r}")
        two_i = _field(rec, "two_I", int, where)
        gamma = _field(rec, "gamma_n_MHz_per_G", (int, float, str), where)
        if isinstance(gamma, str):
            if gamma != GAMMA_SENTINEL:
                raise ValidationError(
                    f"{where}: gamma_n_MHz_per_G must be a number or {GAMMA_SENTINEL!r}"
                )
            gamma = None
        else:
            gamma = float(gamma)
        abundance = float(_field(rec, "abundance", (int, float), where))
        if not 0.0 <= abundance <= 1.0:
            raise ValidationError(f"{where}: abundance {abundance} outside [0, 1]")
        registry[name] = IsotopeSpecies(
            name=name, two_i=two_i, gamma_n_mhz_per_g=gamma, abundance=abundance
        )
    return registry


def require_complete_gammas(registry: dict[str, IsotopeSpecies], path: Path) -> None:
    missing = [name for name, iso in sorted(registry.items()) if iso.gamma_n_mhz_per_g is None]
    if missing:
        raise ValidationError(
            f"{path}: gamma_n_MHz_per_G is required user input and is not set for: "
            + ", ".join(missing)
        )


def _lookup_isotope(registry: dict[str, IsotopeSpecies], name: str, where: str) -> IsotopeSpecies:
    if name not in registry:
        raise ValidationError(
            f"{where}: isotope {name!r} not in registry (have: {', '.join(sorted(registry))})"
        )
    return registry[name]


def load_defect_model(path: Path, registry: dict[str, IsotopeSpecies]) -> DefectModel:
    """Defect model file: D_gs, gamma_e, and per-nucleus hyperfine records."""
    path = Path(path)
    doc = _load_toml(path)
    _check_header(doc, path, "defect-model")
    d_gs = float(_field(doc, "d_gs_mhz", (int, float), str(path)))
    gamma_e = float(_field(doc, "gamma_e_mhz_per_g", (int, float), str(path)))
    records = doc.get("nucleus")
    if not isinstance(records, list) or not records:
        raise ValidationError(f"{path}: needs at least one [[nucleus]] record")
    nuclei = []
    for k, rec in enumerate(records):
        where = f"{path}: nucleus[{k}]"
        species = _lookup_isotope(registry, _field(rec, "isotope", str, where), where)
        tensor = HyperfineTensor(
            axx=float(_field(rec, "axx_mhz", (int, float), where)),
            ayy=float(_field(rec, "ayy_mhz", (int, float), where)),
            axy=float(_field(rec, "axy_mhz", (int, float), where)),
            azz=float(_field(rec, "azz_mhz", (int, float), where)),
        )
        if "rotation_deg" in rec:
            angle = float(_field(rec, "rotation_deg", (int, float), where))
            tensor = rotate_tensor(tensor, np.deg2rad(angle))
        if "transverse_divisor" in rec:
            divisor = float(_field(rec, "transverse_divisor", (int, float), where))
            tensor = rescale_transverse(tensor, divisor)
        nuclei.append(DefectNucleus(species=species, tensor=tensor))
    return DefectModel(d_gs_mhz=d_gs, gamma_e_mhz_per_g=gamma_e, nuclei=tuple(nuclei))


def load_bath(path: Path, registry: dict[str, IsotopeSpecies]) -> list[BathSite]:
    """Bath table: sites, each a list of (isotope, weight, azz_mhz) components.

    azz_mhz may be the placeholder "EXTERNAL-DFT" in skeleton files; loading
    such a site for computation is a validation error naming the site.
    """
    path = Path(path)
    doc = _load_toml(path)
    _check_header(doc, path, "bath")
    records = doc.get("site")
    if not isinstance(records, list) or not records:
        raise ValidationError(f"{path}: needs at least one [[site]] record")
    sites = []
    for k, rec in enumerate(records):
        where = f"{path}: site[{k}]"
        comps = rec.get("component")
        if not isinstance(comps, list) or not comps:
            raise ValidationError(f"{where}: needs at least one [[site.component]]")
        parts = []
        for j, comp in enumerate(comps):
            cwhere = f"{where}.component[{j}]"
            species = _lookup_isotope(registry, _field(comp, "isotope", str, cwhere), cwhere)
            weight = float(_field(comp, "weight", (int, float), cwhere))
            azz = _field(comp, "azz_mhz", (int, float, str), cwhere)
            if isinstance(azz, str):
                if azz != AZZ_SENTINEL:
                    raise ValidationError(
                        f"{cwhere}: azz_mhz must be a number or {AZZ_SENTINEL!r}"
                    )
                raise ValidationError(
                    f"{cwhere}: azz_mhz is flagged {AZZ_SENTINEL}; supply a coupling "
                    f"table before computing with this bath"
                )
            parts.append(BathComponent(species=species, weight=weight, azz_mhz=float(azz)))
        sites.append(BathSite(components=tuple(parts)))
    return sites


@dataclass(frozen=True)
class Scenario:
    """Parsed scenario file: kind plus input/parameter/output tables."""

    kind: str
    inputs: dict
    parameters: dict
    outputs: dict
    path: Path


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    doc = _load_toml(path)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(
            f"{path}: format_version must be {FORMAT_VERSION}, got {version!r}"
        )
    kind = doc.get("kind")
    if kind not in SCENARIO_KINDS:
        raise ValidationError(
            f"{path}: kind must be one of {', '.join(SCENARIO_KINDS)}; got {kind!r}"
        )
    for table in ("inputs", "parameters", "outputs"):
        if table in doc and not isinstance(doc[table], dict):
            raise ValidationError(f"{path}: [{table}] must be a table")
    inputs = doc.get("inputs", {})
    for key, value in inputs.items():
        if not isinstance(value, str):
            raise ValidationError(f"{path}: inputs.{key} must be a path string")
    outputs = doc.get("outputs", {})
    for key, value in outputs.items():
        if not isinstance(value, str) or not value or Path(value).is_absolute():
            raise ValidationError(f"{path}: outputs.{key} must be a relative path string")
    return Scenario(
        kind=kind,
        inputs=dict(inputs),
        parameters=dict(doc.get("parameters", {})),
        outputs=dict(outputs),
        path=path,
    )


def data_root() -> Path:
    """Directory of the bundled data files; overridable via ODMRKIT_DATA."""
    override = os.environ.get(DATA_ENV_VAR)
    if override:
        root = Path(override)
        if not root.is_dir():
            raise ValidationError(f"{DATA_ENV_VAR} points to {override}, not a directory")
        return root
    return Path(str(resources.files("odmrkit") / "data"))


def resolve_input(ref: str, base_dir: Path) -> Path:
    """Input reference to a concrete path. "builtin:NAME" searches the data
    bundle (and its scenarios/ subdirectory); anything else is taken relative
    to the referencing file."""
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        root = data_root()
        for candidate in (root / name, root / "scenarios" / name):
            if candidate.is_file():
                return candidate
        raise ValidationError(f"no bundled data file named {name!r} under {root}")
    path = Path(ref)
    if not path.is_absolute():
        path = Path(base_dir) / path
    if not path.is_file():
        raise ValidationError(f"input file not found: {path}")
    return path


def _format_float(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: tuple[str, ...], columns: tuple[np.ndarray, ...]) -> None:
    n = {c.size for c in columns}
    if len(n) != 1:
        raise ValidationError("csv columns must have equal length")
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(_format_float(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ValidationError(f"{path}: needs a header line and at least one data row")
    header = [h.strip() for h in lines[0].split(",")]
    try:
        data = np.array(
            [[float(cell) for cell in ln.split(",")] for ln in lines[1:]], dtype=float
        )
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric cell: {exc}") from None
    if data.shape[1] != len(header):
        raise ValidationError(f"{path}: row width does not match header")
    return header, data


def write_spectrum_csv(path: Path, series: SpectrumSeries) -> None:
    _write_csv(path, ("freq_MHz", "intensity"), (series.freqs_mhz, series.intensity))


def read_spectrum_csv(path: Path) -> SpectrumSeries:
    header, data = _read_csv(path)
    if header != ["freq_MHz", "intensity"]:
        raise ValidationError(f"{path}: expected header freq_MHz,intensity, got {header}")
    return SpectrumSeries(freqs_mhz=data[:, 0], intensity=data[:, 1], labels={})


def write_density_csv(path: Path, density: SpectralDensity) -> None:
    _write_csv(path, ("offset_MHz", "weight"), (density.freq_offsets_mhz, density.masses))


def read_density_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    header, data = _read_csv(path)
    if header != ["offset_MHz", "weight"]:
        raise ValidationError(f"{path}: expected header offset_MHz,weight, got {header}")
    return data[:, 0], data[:, 1]


def write_trace_csv(path: Path, trace: PopulationTrace, series: str | None = None) -> None:
    if series is None:
        if len(trace.populations) != 1:
            raise ValidationError("trace has several series; name one to write")
        series = next(iter(trace.populations))
    _write_csv(path, ("time_us", "population"), (trace.times_us, trace.populations[series]))


def read_trace_csv(path: Path) -> PopulationTrace:
    """Trace CSV with header time_us,population; a time_ns column is accepted
    and converted."""
    header, data = _read_csv(path)
    if header == ["time_us", "population"]:
        times = data[:, 0]
    elif header == ["time_ns", "population"]:
        times = data[:, 0] / 1000.0
    else:
        raise ValidationError(
            f"{path}: expected header time_us,population (or time_ns,population), got {header}"
        )
    return PopulationTrace(times_us=times, populations={"population": data[:, 1]})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise ValidationError(f"cannot serialize {type(obj).__name__} to JSON report")


def write_report_json(path: Path, report: dict) -> None:
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def sha256_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
