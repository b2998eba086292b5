import numpy as np
import pytest

from odmrkit import (
    DefectModel,
    DefectNucleus,
    FieldConfig,
    HyperfineTensor,
    ValidationError,
    build_hamiltonian,
    diagonalize,
    isotope_substitute,
    ladder_coefficients,
    rescale_transverse,
    rotate_tensor,
    secular_energies,
    spin_matrices,
)
from odmrkit.hamiltonian import MAX_NUCLEI

from conftest import default_tensor, random_tensor, single_nucleus_model


def _cartesian_coupling(tensor, two_i):
    """Axx SxIx + Ayy SyIy + Axy (SxIy + SyIx) + Azz SzIz on S=1 (x) I."""
    s = spin_matrices(2)
    i = spin_matrices(two_i)
    kron = np.kron
    return (
        tensor.axx * kron(s.x, i.x)
        + tensor.ayy * kron(s.y, i.y)
        + tensor.axy * (kron(s.x, i.y) + kron(s.y, i.x))
        + tensor.azz * kron(s.z, i.z)
    )


def _ladder_coupling(tensor, two_i):
    """Same coupling assembled from the a1/a2 ladder decomposition."""
    s = spin_matrices(2)
    i = spin_matrices(two_i)
    lad = ladder_coefficients(tensor)
    kron = np.kron
    h = tensor.azz * kron(s.z, i.z)
    h = h + lad.a1 * (kron(s.plus, i.minus) + kron(s.minus, i.plus))
    h = h + lad.a2 * kron(s.plus, i.plus) + np.conj(lad.a2) * kron(s.minus, i.minus)
    return h


@pytest.mark.parametrize("two_i", (1, 2, 3))
def test_ladder_decomposition_identity(two_i):
    """The a1/a2 ladder form reproduces the Cartesian S.A.I term exactly."""
    rng = np.random.default_rng(3)
    for _ in range(20):
        tensor = random_tensor(rng)
        np.testing.assert_allclose(
            _ladder_coupling(tensor, two_i), _cartesian_coupling(tensor, two_i), atol=1e-12
        )


def test_ladder_coefficient_values():
    lad = ladder_coefficients(HyperfineTensor(axx=10.0, ayy=6.0, axy=4.0, azz=-1.0))
    assert lad.a1 == pytest.approx(4.0)
    assert lad.a2 == pytest.approx(1.0 - 2.0j)


def test_ladder_invariant_under_rotation():
    """In-plane rotation leaves a1 and |a2| alone; a2 picks up e^{-2i phi}."""
    rng = np.random.default_rng(5)
    for _ in range(10):
        tensor = random_tensor(rng)
        lad = ladder_coefficients(tensor)
        for phi in (0.3, 1.1, -0.7, np.pi / 2):
            rot = rotate_tensor(tensor, phi)
            lad_r = ladder_coefficients(rot)
            assert lad_r.a1 == pytest.approx(lad.a1, abs=1e-12)
            assert lad_r.a2 == pytest.approx(lad.a2 * np.exp(-2j * phi), abs=1e-12)
            assert rot.azz == tensor.azz
            assert rot.transverse_magnitude == pytest.approx(
                tensor.transverse_magnitude, rel=1e-12
            )


def test_transverse_magnitude_vs_ladder_norm():
    """axx^2 + ayy^2 + 2 axy^2 == 8 (|a1|^2 + |a2|^2), for any tensor."""
    rng = np.random.default_rng(8)
    for _ in range(25):
        tensor = random_tensor(rng)
        lad = ladder_coefficients(tensor)
        lhs = tensor.transverse_magnitude**2
        rhs = 8.0 * (abs(lad.a1) ** 2 + abs(lad.a2) ** 2)
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_default_tensor_roundness():
    tensor = default_tensor()
    assert tensor.transverse_magnitude == pytest.approx(30.0, abs=1e-12)
    lad = ladder_coefficients(tensor)
    assert abs(lad.a1) ** 2 == pytest.approx(70.0, abs=1e-9)
    assert abs(lad.a2) ** 2 == pytest.approx(42.5, abs=1e-9)


def test_rescale_transverse_divides():
    tensor = HyperfineTensor(axx=144.0, ayy=48.0, axy=24.0, azz=-65.9)
    out = rescale_transverse(tensor, 4.8)
    assert out.axx == pytest.approx(30.0)
    assert out.ayy == pytest.approx(10.0)
    assert out.axy == pytest.approx(5.0)
    assert out.azz == tensor.azz
    with pytest.raises(ValidationError):
        rescale_transverse(tensor, 0.0)


def test_isotope_substitute_scales_by_gamma_ratio(n14, n15):
    tensor = HyperfineTensor(axx=10.0, ayy=5.0, axy=1.0, azz=48.3)
    out = isotope_substitute(tensor, n14, n15)
    ratio = n15.gamma_n_mhz_per_g / n14.gamma_n_mhz_per_g
    assert ratio == pytest.approx(-1.4, abs=1e-12)
    for name in ("axx", "ayy", "axy", "azz"):
        assert getattr(out, name) == pytest.approx(getattr(tensor, name) * ratio)


def test_isotope_substitute_needs_gammas(n15, b10):
    tensor = HyperfineTensor(axx=1.0, ayy=1.0, axy=0.0, azz=1.0)
    with pytest.raises(ValidationError, match="B10"):
        isotope_substitute(tensor, n15, b10)
    with pytest.raises(ValidationError, match="B10"):
        isotope_substitute(tensor, b10, n15)


def test_build_hamiltonian_matches_manual_assembly(n15):
    """One nucleus, tilted field: compare against an independent kron build."""
    rng = np.random.default_rng(21)
    tensor = random_tensor(rng)
    model = single_nucleus_model(n15, tensor)
    field = FieldConfig(bz_gauss=210.0, bx_gauss=3.0, by_gauss=-2.0)
    h = build_hamiltonian(model, field).entries

    s = spin_matrices(2)
    i = spin_matrices(1)
    kron = np.kron
    eye2 = np.eye(2)
    eye3 = np.eye(3)
    b = np.array([3.0, -2.0, 210.0])
    manual = 3480.0 * kron(s.z @ s.z, eye2)
    manual = manual + 2.8 * sum(bb * kron(op, eye2) for bb, op in zip(b, (s.x, s.y, s.z)))
    gamma_n = n15.gamma_n_mhz_per_g
    manual = manual - gamma_n * sum(bb * kron(eye3, op) for bb, op in zip(b, (i.x, i.y, i.z)))
    manual = manual + _cartesian_coupling(tensor, 1)
    np.testing.assert_allclose(h, manual, atol=1e-10)


def test_secular_energies_are_exact_without_transverse_terms(n15, n14):
    """With axx = ayy = axy = 0 and an axial field the Hamiltonian is diagonal
    and equals the secular formula state by state."""
    nuclei = (
        DefectNucleus(species=n15, tensor=HyperfineTensor(axx=0, ayy=0, axy=0, azz=-65.9)),
        DefectNucleus(species=n14, tensor=HyperfineTensor(axx=0, ayy=0, axy=0, azz=48.3)),
    )
    model = DefectModel(d_gs_mhz=3480.0, gamma_e_mhz_per_g=2.8, nuclei=nuclei)
    h = build_hamiltonian(model, FieldConfig(bz_gauss=137.0)).entries
    sec = secular_energies(model, 137.0)
    np.testing.assert_allclose(np.diag(h).real, sec, atol=1e-10)
    assert np.abs(h - np.diag(np.diag(h))).max() < 1e-12
    eig = diagonalize(build_hamiltonian(model, FieldConfig(bz_gauss=137.0)))
    np.testing.assert_allclose(eig.energies_mhz, np.sort(sec), atol=1e-9)


def test_max_nuclei_guard(n15):
    tensor = HyperfineTensor(axx=1.0, ayy=1.0, axy=0.0, azz=1.0)
    nuclei = tuple(DefectNucleus(species=n15, tensor=tensor) for _ in range(MAX_NUCLEI + 1))
    with pytest.raises(ValidationError):
        DefectModel(d_gs_mhz=3480.0, gamma_e_mhz_per_g=2.8, nuclei=nuclei)


def test_dense_dimension_guard(n15):
    """5 spin-1/2 nuclei give dim 96 > 64; the dense solver refuses."""
    tensor = HyperfineTensor(axx=1.0, ayy=1.0, axy=0.0, azz=1.0)
    nuclei = tuple(DefectNucleus(species=n15, tensor=tensor) for _ in range(5))
    model = DefectModel(d_gs_mhz=3480.0, gamma_e_mhz_per_g=2.8, nuclei=nuclei)
    h = build_hamiltonian(model, FieldConfig(bz_gauss=100.0))
    assert h.dim == 96
    with pytest.raises(ValidationError):
        diagonalize(h)


def test_build_hamiltonian_needs_gamma(b10):
    tensor = HyperfineTensor(axx=1.0, ayy=1.0, axy=0.0, azz=1.0)
    model = single_nucleus_model(b10, tensor)
    with pytest.raises(ValidationError, match="B10"):
        build_hamiltonian(model, FieldConfig(bz_gauss=100.0))


def test_bundled_models_share_azz_and_differ_transversely(rescaled_model, abinitio_model):
    assert len(rescaled_model.nuclei) == 3
    assert len(abinitio_model.nuclei) == 3
    for resc, ab in zip(rescaled_model.nuclei, abinitio_model.nuclei):
        assert resc.tensor.azz == ab.tensor.azz
        assert ab.tensor.transverse_magnitude == pytest.approx(
            4.8 * resc.tensor.transverse_magnitude, rel=1e-9
        )
    assert rescaled_model.nuclei[0].tensor.transverse_magnitude == pytest.approx(30.0)
