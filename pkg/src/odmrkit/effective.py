"""Second-order effective nuclear drive couplings and enhancement factors.

Hyperfine mixing lets an RF field drive nuclear spins through the electron:
the effective coupling for a nucleus in the m_s = -1 manifold is

    omega = -gamma_e B_dr (A1 e^{i theta} + conj(A2) e^{-i theta}) / (D - gamma_e Bz)

in MHz (B_dr, Bz in G). The enhancement over the bare nuclear gyromagnetic
ratio scales with the transverse hyperfine magnitude over the electron
spin-flip gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ValidationError
from .hamiltonian import DefectModel, LadderCoefficients, ladder_coefficients

MIN_GAP_MHZ = 10.0


def _gaps(d_gs_mhz: float, gamma_e_mhz_per_g: float, bz_gauss: float) -> tuple[float, float]:
    """(gap to m_s=-1, gap to m_s=+1) from m_s=0, in MHz."""
    return d_gs_mhz - gamma_e_mhz_per_g * bz_gauss, d_gs_mhz + gamma_e_mhz_per_g * bz_gauss


def _check_gap(gap_mhz: float) -> None:
    if abs(gap_mhz) <= MIN_GAP_MHZ:
        raise ValidationError(
            f"electron spin-flip gap {gap_mhz:.3f} MHz is inside the level "
            f"anticrossing guard (|gap| must exceed {MIN_GAP_MHZ} MHz)"
        )


def effective_coupling(
    ladder: LadderCoefficients,
    d_gs_mhz: float,
    gamma_e_mhz_per_g: float,
    bz_gauss: float,
    b_dr_gauss: float,
    theta_rad: float = 0.0,
    level: int = -1,
    include_bare: bool = False,
    gamma_n_mhz_per_g: float | None = None,
) -> complex:
    """Effective RF coupling omega (MHz) for one nucleus in a given electron level.

    ``b_dr_gauss`` is the linear (cosine) drive amplitude. |omega| is the
    reported Rabi frequency in the rotating-field convention; an exact
    time-domain trace driven at amplitude b_dr shows its population peak at
    |omega| itself (see dynamics), i.e. the rotating-frame coupling is omega/2.

    level selects the manifold: -1 and +1 use their respective spin-flip gap;
    0 picks up both intermediate manifolds (opposite overall sign, both gaps
    summed). Optionally adds
    the bare nuclear Zeeman drive (gamma_n / 2) B_dr e^{-i theta}, whose sign
    relative to the hyperfine-mediated term is fixed by matching exact
    propagation: for gamma_n < 0 and a1 > 0 the two contributions add.
    """
    if level not in (-1, 0, 1):
        raise ValidationError(f"level must be -1, 0, or +1, got {level}")
    gap_minus, gap_plus = _gaps(d_gs_mhz, gamma_e_mhz_per_g, bz_gauss)
    a1, a2 = ladder.a1, ladder.a2
    mix = a1 * np.exp(1j * theta_rad) + np.conj(a2) * np.exp(-1j * theta_rad)
    if level == -1:
        _check_gap(gap_minus)
        omega = -gamma_e_mhz_per_g * b_dr_gauss * mix / gap_minus
    elif level == 1:
        _check_gap(gap_plus)
        omega = -gamma_e_mhz_per_g * b_dr_gauss * mix / gap_plus
    else:
        _check_gap(gap_minus)
        _check_gap(gap_plus)
        omega = gamma_e_mhz_per_g * b_dr_gauss * mix * (1.0 / gap_minus + 1.0 / gap_plus)
    if include_bare:
        if gamma_n_mhz_per_g is None:
            raise ValidationError("include_bare needs gamma_n_mhz_per_g")
        omega = omega + 0.5 * gamma_n_mhz_per_g * b_dr_gauss * np.exp(-1j * theta_rad)
    return complex(omega)


def model_couplings(
    model: DefectModel,
    bz_gauss: float,
    b_dr_gauss: float,
    theta_rad: float = 0.0,
    level: int = -1,
    include_bare: bool = False,
) -> list[complex]:
    """Effective coupling for every nucleus of a defect model."""
    out = []
    for nucleus in model.nuclei:
        ladder = ladder_coefficients(nucleus.tensor)
        gamma_n = nucleus.species.require_gamma() if include_bare else None
        out.append(
            effective_coupling(
                ladder,
                model.d_gs_mhz,
                model.gamma_e_mhz_per_g,
                bz_gauss,
                b_dr_gauss,
                theta_rad,
                level,
                include_bare,
                gamma_n,
            )
        )
    return out


def rabi_matrix(couplings: list[complex]) -> np.ndarray:
    """Effective drive Hamiltonian sum_j (omega_j sigma_+^(j) + h.c.) for
    spin-1/2 nuclei, dimension 2^n."""
    n = len(couplings)
    if n == 0:
        raise ValidationError("need at least one coupling")
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    sp = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
    eye = np.eye(2, dtype=complex)
    for j, omega in enumerate(couplings):
        op = np.array([[1.0]], dtype=complex)
        for k in range(n):
            op = np.kron(op, sp if k == j else eye)
        h += omega * op + np.conj(omega) * op.conj().T
    return h


def rabi_frequencies(couplings: list[complex]) -> np.ndarray:
    """Combination Rabi frequencies 2 |sum_j s_j |omega_j||, s_j = +-1.

    One value per sign class (the first sign fixed positive, 2^(n-1) values,
    sorted ascending, repeats kept): the antipodal eigenvalue gaps of
    :func:`rabi_matrix`. The factor 2 is the half-amplitude (rotating-field)
    convention; with a linear (cosine) drive of amplitude b_dr the rotating
    frame coupling is omega/2, so exact population spectra peak at half these
    values, |sum_j s_j |omega_j||. Three equal couplings Omega give
    {2 Omega x3, 6 Omega}.
    """
    mags = np.array([abs(w) for w in couplings])
    if mags.size == 0:
        raise ValidationError("need at least one coupling")
    combos = [
        2.0 * abs(mags[0] + sum(s * m for s, m in zip(signs, mags[1:])))
        for signs in product((1.0, -1.0), repeat=len(mags) - 1)
    ]
    return np.array(sorted(combos))


@dataclass(frozen=True)
class EnhancementReport:
    """Effective nuclear gyromagnetic ratio and its enhancement factor."""

    gamma_eff_mhz_per_g: float
    gamma_n_mhz_per_g: float | None
    enhancement: float | None
    gamma_eff_min_mhz_per_g: float
    gamma_eff_max_mhz_per_g: float
    gap_mhz: float
    guard_margin_mhz: float
    transverse_mhz: float


def gamma_eff(
    a1: float,
    a2: complex,
    d_gs_mhz: float,
    gamma_e_mhz_per_g: float,
    bz_gauss: float,
    gamma_n_mhz_per_g: float | None = None,
    level: int = -1,
) -> EnhancementReport:
    """Drive-direction-averaged effective gyromagnetic ratio.

    Defined in the same half-amplitude convention as :func:`rabi_frequencies`,
    gamma_eff = 2 |omega| / B_dr (twice the population peak per unit linear
    drive amplitude). Its RMS over the drive direction theta is
    2 gamma_e sqrt(|A1|^2 + |A2|^2) / gap, identically
    gamma_e * transverse_magnitude / (sqrt(2) gap); the extremes over theta,
    2 gamma_e (|A1| -+ |A2|) / gap, are reported as the min/max fields.
    """
    if level not in (-1, 1):
        raise ValidationError("gamma_eff is defined per spin-flip manifold (level -1 or +1)")
    gap_minus, gap_plus = _gaps(d_gs_mhz, gamma_e_mhz_per_g, bz_gauss)
    gap = gap_minus if level == -1 else gap_plus
    _check_gap(gap)
    gap = abs(gap)
    mag1, mag2 = abs(a1), abs(a2)
    rms = 2.0 * gamma_e_mhz_per_g * np.sqrt(mag1**2 + mag2**2) / gap
    lo = 2.0 * gamma_e_mhz_per_g * abs(mag1 - mag2) / gap
    hi = 2.0 * gamma_e_mhz_per_g * (mag1 + mag2) / gap
    enh = None
    if gamma_n_mhz_per_g is not None:
        if gamma_n_mhz_per_g == 0:
            raise ValidationError("bare gamma_n must be nonzero to form an enhancement ratio")
        enh = float(rms / abs(gamma_n_mhz_per_g))
    transverse = float(np.sqrt(2.0) * np.sqrt(mag1**2 + mag2**2) * 2.0)
    return EnhancementReport(
        gamma_eff_mhz_per_g=float(rms),
        gamma_n_mhz_per_g=gamma_n_mhz_per_g,
        enhancement=enh,
        gamma_eff_min_mhz_per_g=float(lo),
        gamma_eff_max_mhz_per_g=float(hi),
        gap_mhz=float(gap),
        guard_margin_mhz=float(gap - MIN_GAP_MHZ),
        transverse_mhz=transverse,
    )


def gamma_eff_from_model(
    model: DefectModel,
    bz_gauss: float,
    site: int = 0,
    level: int = -1,
    use_bare_gamma: bool = True,
) -> EnhancementReport:
    """gamma_eff for one nucleus of a model, enhancement vs its bare ratio."""
    if not 0 <= site < len(model.nuclei):
        raise ValidationError(f"site {site} out of range for {len(model.nuclei)} nuclei")
    nucleus = model.nuclei[site]
    ladder = ladder_coefficients(nucleus.tensor)
    gamma_n = nucleus.species.require_gamma() if use_bare_gamma else None
    return gamma_eff(
        ladder.a1,
        ladder.a2,
        model.d_gs_mhz,
        model.gamma_e_mhz_per_g,
        bz_gauss,
        gamma_n,
        level,
    )


def calibrate_gamma_eff(
    nuclear_rabi_mhz: float,
    electron_rabi_mhz: float,
    drive_amplitude_ratio: float,
    gamma_e_mhz_per_g: float,
) -> float:
    """gamma_eff from a matched pair of Rabi measurements.

    The electron Rabi frequency fixes the field at the defect,
    B_dr = electron_rabi / gamma_e; dividing the nuclear Rabi frequency
    (rescaled by the relative drive amplitude) by that field gives gamma_eff:
    (nuclear_rabi / ratio) / electron_rabi * gamma_e.
    """
    if electron_rabi_mhz <= 0 or drive_amplitude_ratio <= 0:
        raise ValidationError("electron Rabi frequency and amplitude ratio must be positive")
    if nuclear_rabi_mhz < 0:
        raise ValidationError("nuclear Rabi frequency must be non-negative")
    return (nuclear_rabi_mhz / drive_amplitude_ratio) / electron_rabi_mhz * gamma_e_mhz_per_g


def infer_transverse_magnitude(
    gamma_eff_mhz_per_g: float,
    d_gs_mhz: float,
    gamma_e_mhz_per_g: float,
    bz_gauss: float,
    level: int = -1,
) -> float:
    """Invert the RMS gamma_eff relation for the transverse hyperfine magnitude
    sqrt(Axx^2 + Ayy^2 + 2 Axy^2)."""
    if gamma_eff_mhz_per_g < 0:
        raise ValidationError("gamma_eff must be non-negative")
    gap_minus, gap_plus = _gaps(d_gs_mhz, gamma_e_mhz_per_g, bz_gauss)
    gap = gap_minus if level == -1 else gap_plus
    _check_gap(gap)
    return gamma_eff_mhz_per_g * np.sqrt(2.0) * abs(gap) / gamma_e_mhz_per_g
