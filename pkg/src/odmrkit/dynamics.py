"""Exact diagonalization and driven time evolution of the defect register.

Transition spectra follow the recipe: diagonalize the static Hamiltonian,
weight each transition |i> -> |f> by |<f|Sx|i>| + |<f|Sy|i>|, and broaden with
a fixed-width Lorentzian. Time evolution propagates the lab-frame Hamiltonian
(no rotating-wave approximation) with midpoint-sampled piecewise-constant
matrix exponentials, which keeps every step exactly unitary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .hamiltonian import DefectModel, FieldConfig, build_hamiltonian
from .spectrum import SpectrumSeries
from .spincore import MAX_DENSE_DIM, Operator, SpinRegister, embed, spin_matrices

DEFAULT_BAND_MHZ = (40.0, 90.0)
DEFAULT_FWHM_MHZ = 2.0
NYQUIST_FACTOR = 50.0


@dataclass(frozen=True)
class EigenSystem:
    """Eigen-decomposition plus a dominant (m_s, sum m_I) label per state."""

    energies_mhz: np.ndarray
    states: np.ndarray  # column k is the k-th eigenvector
    labels: tuple[tuple[float, float], ...]
    register: SpinRegister

    def select(self, m_s: float, m_i_sum: float, tol: float = 1e-6) -> list[int]:
        return [
            k
            for k, (ms, mi) in enumerate(self.labels)
            if abs(ms - m_s) <= tol and abs(mi - m_i_sum) <= tol
        ]


def diagonalize(h: Operator) -> EigenSystem:
    """Eigh with labelling and numerical sanity checks.

    Labels assign each eigenstate the (m_s, sum m_I) of its largest-|c|^2
    basis component (ties broken by lowest basis index, which argmax gives).
    """
    if not h.hermitian:
        raise ValidationError("diagonalize expects a hermitian-flagged operator")
    if h.register is None:
        raise ValidationError("diagonalize needs an operator carrying its spin register")
    if h.dim > MAX_DENSE_DIM:
        raise ValidationError(f"dimension {h.dim} exceeds the dense-solver guard {MAX_DENSE_DIM}")
    energies, states = np.linalg.eigh(h.entries)

    scale = max(np.abs(h.entries).max(), 1.0)
    residual = np.abs(h.entries @ states - states * energies).max()
    if residual > 1e-9 * scale:
        raise NumericalError(f"eigensolver residual {residual:.3e} exceeds 1e-9 * scale")
    ortho = np.abs(states.conj().T @ states - np.eye(h.dim)).max()
    if ortho > 1e-10:
        raise NumericalError(f"eigenvector orthonormality defect {ortho:.3e} exceeds 1e-10")

    mv = h.register.m_values()
    ms = mv[:, 0]
    mi_sum = mv[:, 1:].sum(axis=1) if mv.shape[1] > 1 else np.zeros(h.dim)
    dominant = np.argmax(np.abs(states) ** 2, axis=0)
    labels = tuple((float(ms[b]), float(mi_sum[b])) for b in dominant)
    return EigenSystem(energies_mhz=energies, states=states, labels=labels, register=h.register)


def _electron_xy(register: SpinRegister) -> tuple[np.ndarray, np.ndarray]:
    mats = spin_matrices(register.two_j[0])
    return embed(mats.x, register, 0), embed(mats.y, register, 0)


def transition_lines(
    eig: EigenSystem,
    initial_manifold: tuple[float, float] = (-1.0, 0.5),
    band_mhz: tuple[float, float] = DEFAULT_BAND_MHZ,
) -> list[tuple[float, float]]:
    """(frequency, amplitude) of transitions out of the initial manifold.

    Amplitude is |<f|Sx|i>| + |<f|Sy|i>| with Sx, Sy the electron operators;
    every eigenstate is a possible final state, frequencies restricted to the
    band.
    """
    init = eig.select(*initial_manifold)
    if not init:
        raise ValidationError(
            f"no eigenstates labelled (m_s, sum m_I) = {initial_manifold}; cannot form manifold"
        )
    sx, sy = _electron_xy(eig.register)
    vx = sx @ eig.states
    vy = sy @ eig.states
    lines = []
    lo, hi = band_mhz
    for i in init:
        freqs = np.abs(eig.energies_mhz - eig.energies_mhz[i])
        amp_x = np.abs(eig.states.conj().T @ vx[:, i])
        amp_y = np.abs(eig.states.conj().T @ vy[:, i])
        amps = amp_x + amp_y
        for f in range(eig.energies_mhz.size):
            if lo <= freqs[f] <= hi:
                lines.append((float(freqs[f]), float(amps[f])))
    return lines


def transition_spectrum(
    eig: EigenSystem,
    initial_manifold: tuple[float, float] = (-1.0, 0.5),
    band_mhz: tuple[float, float] = DEFAULT_BAND_MHZ,
    fwhm_mhz: float = DEFAULT_FWHM_MHZ,
    grid_step_mhz: float = 0.02,
) -> SpectrumSeries:
    """Lorentzian-broadened stick spectrum of the manifold's transitions."""
    if fwhm_mhz <= 0:
        raise ValidationError(f"fwhm must be positive, got {fwhm_mhz}")
    lines = transition_lines(eig, initial_manifold, band_mhz)
    grid = np.arange(band_mhz[0], band_mhz[1] + grid_step_mhz / 2, grid_step_mhz)
    y = np.zeros_like(grid)
    for f0, amp in lines:
        y += amp / (1.0 + (2.0 * (grid - f0) / fwhm_mhz) ** 2)
    return SpectrumSeries(
        freqs_mhz=grid,
        intensity=y,
        labels={
            "initial_manifold": initial_manifold,
            "fwhm_mhz": fwhm_mhz,
            "n_lines": len(lines),
        },
    )


def dominant_line(series: SpectrumSeries) -> float:
    """Peak position of a spectrum, refined by parabolic interpolation."""
    k = int(np.argmax(series.intensity))
    if 0 < k < series.intensity.size - 1:
        y0, y1, y2 = series.intensity[k - 1 : k + 2]
        denom = y0 - 2.0 * y1 + y2
        if denom != 0.0:
            shift = 0.5 * (y0 - y2) / denom
            step = series.freqs_mhz[k + 1] - series.freqs_mhz[k]
            return float(series.freqs_mhz[k] + shift * step)
    return float(series.freqs_mhz[k])


@dataclass(frozen=True)
class DriveSpec:
    """Linearly polarised RF drive: amplitude (G), frequency (MHz), phase theta.

    theta is the in-plane drive direction; the field is
    B_dr cos(2 pi f t) (cos(theta) x + sin(theta) y).
    """

    b_dr_gauss: float
    freq_mhz: float
    theta_rad: float = 0.0


@dataclass(frozen=True)
class PopulationTrace:
    """Sampled populations: times (us) and one series per observable."""

    times_us: np.ndarray
    populations: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times_us, dtype=float)
        for name, p in self.populations.items():
            p = np.asarray(p, dtype=float)
            if p.shape != t.shape:
                raise ValidationError(f"trace {name}: shape mismatch with time axis")
            if p.min() < -1e-9 or p.max() > 1.0 + 1e-9:
                raise ValidationError(f"trace {name}: population outside [0, 1]")
        t.flags.writeable = False
        object.__setattr__(self, "times_us", t)


def drive_operators(model: DefectModel, theta_rad: float = 0.0) -> tuple[Operator, Operator]:
    """Electron and nuclear coupling operators for a linear in-plane drive.

    Returns (gamma_e (cos t Sx + sin t Sy), sum_j gamma_n^j (cos t Ix + sin t Iy));
    the full drive term is B_dr cos(2 pi f t + phase) (electron - nuclear).
    """
    reg = model.register()
    c, s = np.cos(theta_rad), np.sin(theta_rad)
    mats_e = spin_matrices(2)
    elec = model.gamma_e_mhz_per_g * (c * embed(mats_e.x, reg, 0) + s * embed(mats_e.y, reg, 0))
    nuc = np.zeros((reg.dim, reg.dim), dtype=complex)
    for j, nucleus in enumerate(model.nuclei):
        gamma_n = nucleus.species.require_gamma()
        mats_n = spin_matrices(nucleus.species.two_i)
        nuc = nuc + gamma_n * (c * embed(mats_n.x, reg, j + 1) + s * embed(mats_n.y, reg, j + 1))
    return (
        Operator(entries=elec, hermitian=True, register=reg),
        Operator(entries=nuc, hermitian=True, register=reg),
    )


def manifold_projector(register: SpinRegister, m_s: float, m_i_sum: float) -> Operator:
    """Diagonal projector onto product states with the given (m_s, sum m_I)."""
    mv = register.m_values()
    mask = (np.abs(mv[:, 0] - m_s) <= 1e-9) & (np.abs(mv[:, 1:].sum(axis=1) - m_i_sum) <= 1e-9)
    if not mask.any():
        raise ValidationError(f"no basis states with (m_s, sum m_I) = ({m_s}, {m_i_sum})")
    return Operator(entries=np.diag(mask.astype(complex)), hermitian=True, register=register)


def nyquist_reference(h_static: Operator, drive_freq_mhz: float) -> float:
    """Fastest frequency the stepper must resolve: the largest static eigen-gap
    near the drive band, or the drive frequency itself if larger."""
    energies = np.linalg.eigvalsh(h_static.entries)
    gaps = np.abs(energies[:, None] - energies[None, :]).ravel()
    lo, hi = 0.2 * drive_freq_mhz, 5.0 * drive_freq_mhz
    in_band = gaps[(gaps >= lo) & (gaps <= hi)]
    f_ref = float(in_band.max()) if in_band.size else 0.0
    return max(f_ref, drive_freq_mhz)


def _propagate(
    h_static: np.ndarray,
    v_drive: np.ndarray,
    drive: DriveSpec,
    psi_block: np.ndarray,
    n_steps: int,
    dt_us: float,
    phase_rad: float,
    projectors: dict[str, np.ndarray],
    sample_steps: np.ndarray,
) -> tuple[dict[str, np.ndarray], float]:
    """Step a block of states, recording projector populations at samples.

    Each step applies exp(-2i pi (H0 + cos(2 pi f t_mid + phase) V) dt), which
    is exactly unitary regardless of dt.
    """
    n_states = psi_block.shape[1]
    pops = {name: np.zeros((len(sample_steps), n_states)) for name in projectors}
    sample_pos = {int(s): k for k, s in enumerate(sample_steps)}
    max_drift = 0.0

    def record(step):
        k = sample_pos.get(step)
        if k is None:
            return
        for name, diag in projectors.items():
            pops[name][k] = np.real(np.einsum("ij,i,ij->j", psi_block.conj(), diag, psi_block))

    record(0)
    for step in range(n_steps):
        t_mid = (step + 0.5) * dt_us
        c = np.cos(2.0 * np.pi * drive.freq_mhz * t_mid + phase_rad)
        h_now = h_static + c * v_drive
        evals, evecs = np.linalg.eigh(h_now)
        phases = np.exp(-2j * np.pi * evals * dt_us)
        psi_block = evecs @ (phases[:, None] * (evecs.conj().T @ psi_block))
        record(step + 1)
    norms = np.linalg.norm(psi_block, axis=0)
    max_drift = float(np.abs(norms - 1.0).max())
    return pops, max_drift


def evolve(
    h_static: Operator,
    drive: DriveSpec,
    drive_ops: tuple[Operator, Operator],
    psi0: np.ndarray,
    duration_us: float,
    dt_us: float,
    phase_rad: float = 0.0,
    observables: dict[str, Operator] | None = None,
) -> PopulationTrace:
    """Propagate one state under the lab-frame driven Hamiltonian.

    ``drive_ops`` is the (electron, nuclear) pair from :func:`drive_operators`;
    the instantaneous Hamiltonian is
    H0 + B_dr cos(2 pi f t + phase) (electron - nuclear).
    Populations of each observable (a projector-like hermitian operator with a
    diagonal 0/1 structure) are recorded every step.
    """
    if dt_us <= 0 or duration_us <= 0:
        raise ValidationError("duration and dt must be positive")
    f_ref = nyquist_reference(h_static, drive.freq_mhz)
    dt_max = 1.0 / (NYQUIST_FACTOR * f_ref)
    if dt_us > dt_max:
        raise ValidationError(
            f"dt = {dt_us} us is too coarse for the {f_ref:.1f} MHz dynamics; "
            f"need dt <= {dt_max:.3e} us"
        )
    psi = np.asarray(psi0, dtype=complex).reshape(-1, 1)
    if psi.shape[0] != h_static.dim:
        raise ValidationError("psi0 dimension does not match the Hamiltonian")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-9:
        raise ValidationError(f"psi0 must be normalised, |psi0| = {nrm!r}")
    if observables is None:
        observables = {}
    projectors = {name: np.real(np.diag(op.entries)) for name, op in observables.items()}
    n_steps = int(round(duration_us / dt_us))
    v = drive.b_dr_gauss * (drive_ops[0].entries - drive_ops[1].entries)
    samples = np.arange(n_steps + 1)
    pops, drift = _propagate(
        h_static.entries, v, drive, psi, n_steps, dt_us, phase_rad, projectors, samples
    )
    if drift > 1e-8:
        raise NumericalError(f"norm drift {drift:.3e} exceeds 1e-8")
    return PopulationTrace(
        times_us=samples * dt_us,
        populations={name: p[:, 0] for name, p in pops.items()},
    )


def simulate_nuclear_rabi(
    model: DefectModel,
    field: FieldConfig,
    drive: DriveSpec,
    durations_us: np.ndarray,
    dt_us: float | None = None,
    phase_rad: float = 0.0,
) -> PopulationTrace:
    """Driven population of the (m_s=-1, sum m_I=+1/2) manifold vs pulse length.

    Prepares the manifold as a uniform incoherent average over its product
    basis states, drives for each duration, and reads the manifold population
    back. Durations are snapped to the step grid; the returned times are the
    snapped values.
    """
    durations = np.asarray(durations_us, dtype=float)
    if durations.size == 0 or durations.min() < 0:
        raise ValidationError("durations must be non-empty and non-negative")
    h = build_hamiltonian(model, field)
    reg = h.register
    f_ref = nyquist_reference(h, drive.freq_mhz)
    dt_max = 1.0 / (NYQUIST_FACTOR * f_ref)
    if dt_us is None:
        dt_us = dt_max / 1.2
    elif dt_us > dt_max:
        raise ValidationError(
            f"dt = {dt_us} us is too coarse for the {f_ref:.1f} MHz dynamics; "
            f"need dt <= {dt_max:.3e} us"
        )
    proj = manifold_projector(reg, -1.0, 0.5)
    diag = np.real(np.diag(proj.entries))
    basis_idx = np.nonzero(diag > 0.5)[0]
    psi_block = np.zeros((reg.dim, basis_idx.size), dtype=complex)
    for col, b in enumerate(basis_idx):
        psi_block[b, col] = 1.0

    sample_steps = np.unique(np.round(durations / dt_us).astype(int))
    n_steps = int(sample_steps.max())
    elec, nuc = drive_operators(model, drive.theta_rad)
    v = drive.b_dr_gauss * (elec.entries - nuc.entries)
    pops, drift = _propagate(
        h.entries, v, drive, psi_block, n_steps, dt_us, phase_rad,
        {"manifold": diag}, sample_steps,
    )
    if drift > 1e-8:
        raise NumericalError(f"norm drift {drift:.3e} exceeds 1e-8")
    return PopulationTrace(
        times_us=sample_steps * dt_us,
        populations={"manifold": pops["manifold"].mean(axis=1)},
    )
