"""Shot-noise-limited DC and AC magnetometry sensitivity.

All spectroscopic inputs stay in the package units (MHz, contrast fractions,
photons per second, seconds for pulse timings); the electron gyromagnetic
ratio is converted to angular SI internally so results come out in T/sqrt(Hz).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fitting import MultipletModel

GAMMA_E_MHZ_PER_G = 2.8
HZ_PER_T_PER_MHZ_PER_G = 1e10  # 1 MHz/G = 1e6 Hz / 1e-4 T

SLOPE_SCAN_POINTS_PER_FWHM = 200
SLOPE_REFINE_POINTS = 2001


def _gamma_e_angular_si(gamma_e_mhz_per_g: float) -> float:
    """MHz/G to rad s^-1 T^-1."""
    return 2.0 * np.pi * gamma_e_mhz_per_g * HZ_PER_T_PER_MHZ_PER_G


@dataclass(frozen=True)
class SensitivityInput:
    """Inputs for the sensitivity formulas; only the fields a mode uses are
    required. Rates in photons/s, times in seconds, contrasts as fractions,
    linewidth in MHz, slope in 1/Hz."""

    r_photons_per_s: float | None = None
    c_m: float | None = None
    delta_nu_mhz: float | None = None
    max_slope_per_hz: float | None = None
    c_max: float | None = None
    n_photons: float | None = None
    tau_s: float | None = None
    t2_s: float | None = None
    t_i_s: float | None = None
    t_r_s: float | None = None
    gamma_e_mhz_per_g: float = GAMMA_E_MHZ_PER_G

    def require(self, *fields: str) -> list[float]:
        out = []
        for name in fields:
            value = getattr(self, name)
            if value is None:
                raise ValidationError(f"sensitivity input field {name} is required here")
            if value <= 0:
                raise ValidationError(f"sensitivity input field {name} must be positive")
            out.append(float(value))
        return out


def lorentzian_max_slope_per_hz(c_m: float, delta_nu_mhz: float) -> float:
    """Peak |dC/dnu| of a single Lorentzian dip: (3 sqrt(3) / 4) C_m / FWHM,
    reached at center +- FWHM / (2 sqrt(3))."""
    if c_m <= 0 or delta_nu_mhz <= 0:
        raise ValidationError("contrast and linewidth must be positive")
    return 0.75 * np.sqrt(3.0) * c_m / (delta_nu_mhz * 1e6)


def max_slope(model: MultipletModel) -> float:
    """Largest |dC/dnu| of a fitted Lorentzian multiplet, in 1/Hz.

    The derivative is analytic; a dense scan over the multiplet span locates
    the extremum and a fine local scan pins it down.
    """

    positions = model.line_positions()
    amps = model.line_amplitudes()
    w = model.fwhm_mhz

    def slope_mhz(f):
        f = np.asarray(f, dtype=float)
        total = np.zeros_like(f)
        for pos, amp in zip(positions, amps):
            u = 2.0 * (f - pos) / w
            total += amp * (4.0 / w) * u / (1.0 + u * u) ** 2
        return total

    lo = positions.min() - 5.0 * w
    hi = positions.max() + 5.0 * w
    step = w / SLOPE_SCAN_POINTS_PER_FWHM
    grid = np.arange(lo, hi + step, step)
    values = np.abs(slope_mhz(grid))
    k = int(np.argmax(values))
    fine = np.linspace(grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)], SLOPE_REFINE_POINTS)
    best = float(np.abs(slope_mhz(fine)).max())
    return best / 1e6  # per MHz -> per Hz


def sensitivity_dc(inputs: SensitivityInput, mode: str = "slope") -> float:
    """DC field sensitivity (T/sqrt(Hz)) from an ESR slope.

    slope mode: eta = 2 pi / (gamma_e sqrt(R)) / max_slope with the measured
    slope; lorentzian mode derives the slope analytically from (C_m, delta_nu)
    of a single ideal Lorentzian.
    """
    if mode not in ("slope", "lorentzian"):
        raise ValidationError(f"mode must be 'slope' or 'lorentzian', got {mode!r}")
    (rate,) = inputs.require("r_photons_per_s")
    if mode == "slope":
        (slope,) = inputs.require("max_slope_per_hz")
    else:
        c_m, delta_nu = inputs.require("c_m", "delta_nu_mhz")
        slope = lorentzian_max_slope_per_hz(c_m, delta_nu)
    gamma = _gamma_e_angular_si(inputs.gamma_e_mhz_per_g)
    return 2.0 * np.pi / (gamma * np.sqrt(rate)) / slope


def sensitivity_ac(inputs: SensitivityInput) -> float:
    """AC field sensitivity (T/sqrt(Hz)) of an echo-type sequence:
    eta = (pi / 2 gamma_e) / (C_max e^{-tau/T2} sqrt(N)) * sqrt(t_I + tau + t_R) / tau.

    The caller chooses tau; tau = T2 is the usual near-optimal operating point,
    not something this function imposes.
    """
    c_max, n_ph, tau, t2, t_i, t_r = inputs.require(
        "c_max", "n_photons", "tau_s", "t2_s", "t_i_s", "t_r_s"
    )
    gamma = _gamma_e_angular_si(inputs.gamma_e_mhz_per_g)
    signal = c_max * np.exp(-tau / t2) * np.sqrt(n_ph)
    return (np.pi / (2.0 * gamma)) / signal * np.sqrt(t_i + tau + t_r) / tau
