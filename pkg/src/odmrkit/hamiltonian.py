"""Ground-state spin Hamiltonian of a spin-1 defect with hyperfine-coupled nuclei.

H = D_gs Sz^2 + gamma_e B.S - sum_j gamma_n^j B.I^j + sum_j S.A^j.I^j

with all couplings in MHz, fields in Gauss. Hyperfine tensors carry the
symmetry of the planar defect: Axz = Ayz = Azx = Azy = 0 and Ayx = Axy, so a
tensor is fully described by (Axx, Ayy, Axy, Azz). The transverse block maps
onto ladder couplings

    A1 = (Axx + Ayy)/4            (real)
    A2 = (Axx - Ayy)/4 + Axy/(2i) (complex)

so that  S.A.I = Azz Sz Iz + (A1 S+I- + h.c.) + (A2 S+I+ + h.c.).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .spincore import IsotopeSpecies, Operator, SpinRegister, embed, spin_matrices

MAX_NUCLEI = 6


@dataclass(frozen=True)
class HyperfineTensor:
    """Hyperfine tensor components in MHz (defect frame, z out of plane)."""

    axx: float
    ayy: float
    axy: float
    azz: float

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.axx, self.axy, 0.0],
                [self.axy, self.ayy, 0.0],
                [0.0, 0.0, self.azz],
            ]
        )

    @property
    def transverse_magnitude(self) -> float:
        """sqrt(Axx^2 + Ayy^2 + 2 Axy^2), the scale entering gamma_eff."""
        return float(np.sqrt(self.axx**2 + self.ayy**2 + 2.0 * self.axy**2))


@dataclass(frozen=True)
class LadderCoefficients:
    """Transverse hyperfine couplings in the S+-/I+- ladder form."""

    a1: float
    a2: complex


def ladder_coefficients(tensor: HyperfineTensor) -> LadderCoefficients:
    a1 = (tensor.axx + tensor.ayy) / 4.0
    a2 = (tensor.axx - tensor.ayy) / 4.0 - 0.5j * tensor.axy
    return LadderCoefficients(a1=float(a1), a2=complex(a2))


def rotate_tensor(tensor: HyperfineTensor, phi_rad: float) -> HyperfineTensor:
    """Rotate the tensor by phi about z: A -> R A R^T.

    The planar zero pattern (and Ayx = Axy symmetry) is closed under in-plane
    rotations, so the result is again a four-component tensor.
    """
    c, s = np.cos(phi_rad), np.sin(phi_rad)
    r = np.array([[c, -s], [s, c]])
    block = np.array([[tensor.axx, tensor.axy], [tensor.axy, tensor.ayy]])
    rb = r @ block @ r.T
    return HyperfineTensor(axx=float(rb[0, 0]), ayy=float(rb[1, 1]), axy=float(rb[0, 1]), azz=tensor.azz)


def rescale_transverse(tensor: HyperfineTensor, factor: float) -> HyperfineTensor:
    """Divide the transverse components by ``factor``; Azz is untouched."""
    if factor <= 0:
        raise ValidationError(f"rescale_transverse: factor must be positive, got {factor}")
    return HyperfineTensor(
        axx=tensor.axx / factor, ayy=tensor.ayy / factor, axy=tensor.axy / factor, azz=tensor.azz
    )


def isotope_substitute(
    tensor: HyperfineTensor, species_from: IsotopeSpecies, species_to: IsotopeSpecies
) -> HyperfineTensor:
    """Rescale all components by gamma_to / gamma_from.

    Hyperfine couplings are proportional to the nuclear gyromagnetic ratio, so
    swapping isotopes of the same element scales the whole tensor.
    """
    g_from = species_from.require_gamma()
    g_to = species_to.require_gamma()
    if g_from == 0.0:
        raise ValidationError(f"isotope_substitute: {species_from.name} has zero gamma")
    ratio = g_to / g_from
    return HyperfineTensor(
        axx=tensor.axx * ratio, ayy=tensor.ayy * ratio, axy=tensor.axy * ratio, azz=tensor.azz * ratio
    )


@dataclass(frozen=True)
class DefectNucleus:
    species: IsotopeSpecies
    tensor: HyperfineTensor


@dataclass(frozen=True)
class DefectModel:
    """Zero-field splitting, electron gyromagnetic ratio, and coupled nuclei."""

    d_gs_mhz: float
    gamma_e_mhz_per_g: float
    nuclei: tuple[DefectNucleus, ...]

    def __post_init__(self):
        if len(self.nuclei) > MAX_NUCLEI:
            raise ValidationError(
                f"model has {len(self.nuclei)} nuclei; at most {MAX_NUCLEI} are supported"
            )

    def register(self) -> SpinRegister:
        two_j = (2,) + tuple(n.species.two_i for n in self.nuclei)
        names = ("e",) + tuple(
            f"{n.species.name}[{k}]" for k, n in enumerate(self.nuclei)
        )
        return SpinRegister(two_j=two_j, names=names)


@dataclass(frozen=True)
class FieldConfig:
    """Static magnetic field in Gauss, z along the defect axis."""

    bz_gauss: float
    bx_gauss: float = 0.0
    by_gauss: float = 0.0


def build_hamiltonian(model: DefectModel, field: FieldConfig) -> Operator:
    """Assemble the static Hamiltonian (MHz) on the model's register.

    The returned Operator carries the register so downstream consumers can
    label basis states.
    """
    reg = model.register()
    mats_e = spin_matrices(2)
    s_ops = [embed(m, reg, 0) for m in (mats_e.x, mats_e.y, mats_e.z)]
    b_vec = np.array([field.bx_gauss, field.by_gauss, field.bz_gauss])

    h = model.d_gs_mhz * (s_ops[2] @ s_ops[2])
    h = h + model.gamma_e_mhz_per_g * sum(b * s for b, s in zip(b_vec, s_ops))

    for j, nuc in enumerate(model.nuclei):
        gamma_n = nuc.species.require_gamma()
        mats_n = spin_matrices(nuc.species.two_i)
        i_ops = [embed(m, reg, j + 1) for m in (mats_n.x, mats_n.y, mats_n.z)]
        h = h - gamma_n * sum(b * i_op for b, i_op in zip(b_vec, i_ops))
        a = nuc.tensor.as_matrix()
        for p in range(3):
            for q in range(3):
                if a[p, q] != 0.0:
                    h = h + a[p, q] * (s_ops[p] @ i_ops[q])

    return Operator(entries=h, hermitian=True, register=reg)


def secular_energies(model: DefectModel, bz_gauss: float) -> np.ndarray:
    """Diagonal (secular) energies for every product basis state, in MHz.

    E = D_gs m_s^2 + gamma_e Bz m_s + sum_j (Azz^j m_s - gamma_n^j Bz) m_j.
    Used as the analytic oracle for the transverse-free Hamiltonian.
    """
    reg = model.register()
    mv = reg.m_values()
    ms = mv[:, 0]
    e = model.d_gs_mhz * ms**2 + model.gamma_e_mhz_per_g * bz_gauss * ms
    for j, nuc in enumerate(model.nuclei):
        gamma_n = nuc.species.require_gamma()
        e = e + (nuc.tensor.azz * ms - gamma_n * bz_gauss) * mv[:, j + 1]
    return e
