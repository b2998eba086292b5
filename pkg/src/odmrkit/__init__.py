"""Simulation and analysis toolkit for optically detected magnetic resonance
of spin-1 defects coupled to nuclear spin baths.

Unit conventions used throughout: ordinary (non-angular) frequencies in MHz,
magnetic fields in Gauss, gyromagnetic ratios in MHz/G, times in microseconds.
Sensitivity results are the exception and come out in T/sqrt(Hz).
"""

__version__ = "0.1.0"

from .dynamics import (
    DriveSpec,
    EigenSystem,
    PopulationTrace,
    diagonalize,
    dominant_line,
    drive_operators,
    evolve,
    manifold_projector,
    simulate_nuclear_rabi,
    transition_lines,
    transition_spectrum,
)
from .effective import (
    EnhancementReport,
    calibrate_gamma_eff,
    effective_coupling,
    gamma_eff,
    gamma_eff_from_model,
    infer_transverse_magnitude,
    model_couplings,
    rabi_frequencies,
    rabi_matrix,
)
from .errors import FitConvergenceError, NumericalError, OdmrkitError, ValidationError
from .fileio import (
    Scenario,
    data_root,
    load_bath,
    load_defect_model,
    load_registry,
    load_scenario,
    read_density_csv,
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
    DecayModel,
    FitReport,
    MultipletModel,
    PolarizationResult,
    fit_decay,
    fit_decay_with_stretch_check,
    fit_multiplet,
    fit_polarization,
    net_polarization,
    polarization_amplitudes,
    polarization_amplitudes_2,
    resolvability,
)
from .hamiltonian import (
    DefectModel,
    DefectNucleus,
    FieldConfig,
    HyperfineTensor,
    LadderCoefficients,
    build_hamiltonian,
    isotope_substitute,
    ladder_coefficients,
    rescale_transverse,
    rotate_tensor,
    secular_energies,
)
from .sensitivity import (
    SensitivityInput,
    lorentzian_max_slope_per_hz,
    max_slope,
    sensitivity_ac,
    sensitivity_dc,
)
from .spectrum import (
    BathComponent,
    BathSite,
    SpectralDensity,
    SpectrumSeries,
    mixture_site,
    pure_site,
    spectral_density_bruteforce,
    spectral_density_fft,
    support_bound,
    synthesize_esr,
    transition_centers,
)
from .spincore import IsotopeSpecies, Operator, SpinRegister, embed, kron_chain, spin_matrices

__all__ = [name for name in dir() if not name.startswith("_")]
