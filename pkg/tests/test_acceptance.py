"""End-to-end acceptance checks, one test per shipped guarantee.

Each test pins a quantitative contract of the package: oracle equivalence of
the two spectral-density paths, exact multiplet structure, isotope scaling,
the bundled-model line anchors, closed-form versus exactly propagated drive
dynamics, fit accuracy under noise, sensitivity reference values, spectral
narrowing in an isotopically purified host, and byte-identical reruns of
every bundled command line scenario.
"""

import itertools
import json
import time

import numpy as np
import pytest
from conftest import single_nucleus_model

from odmrkit import (
    DriveSpec,
    FieldConfig,
    HyperfineTensor,
    MultipletModel,
    SensitivityInput,
    SpectrumSeries,
    build_hamiltonian,
    calibrate_gamma_eff,
    data_root,
    diagonalize,
    dominant_line,
    drive_operators,
    evolve,
    fit_polarization,
    gamma_eff,
    isotope_substitute,
    manifold_projector,
    max_slope,
    mixture_site,
    model_couplings,
    pure_site,
    rabi_frequencies,
    rabi_matrix,
    sensitivity_ac,
    sensitivity_dc,
    simulate_nuclear_rabi,
    spectral_density_bruteforce,
    spectral_density_fft,
    support_bound,
    transition_spectrum,
)
from odmrkit.cli import main
from odmrkit.spectrum import bruteforce_config_count

MAX_CONFIGS = 1_000_000


def _peak_freq(y, dt):
    """Dominant oscillation frequency: windowed FFT plus parabolic refinement."""
    y = np.asarray(y, dtype=float)
    n = y.size
    spec = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(n)))
    freqs = np.fft.rfftfreq(n, dt)
    k = 1 + int(np.argmax(spec[1:]))
    if 0 < k < spec.size - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        return float(freqs[k] + 0.5 * (a - c) / (a - 2 * b + c) * freqs[1])
    return float(freqs[k])


def test_01_fft_density_matches_bruteforce_on_random_baths(registry):
    rng = np.random.default_rng(101)
    n14, n15, b10, b11 = (registry[k] for k in ("N14", "N15", "B10", "B11"))

    def azz():
        return float(rng.choice([-1.0, 1.0]) * (0.5 + abs(rng.normal(0.0, 25.0))))

    factories = (
        ("N14", 3, lambda: pure_site(n14, azz())),
        ("N15", 2, lambda: pure_site(n15, azz())),
        ("B10", 7, lambda: pure_site(b10, azz())),
        ("B11", 4, lambda: pure_site(b11, azz())),
        ("N14,N15", 5, lambda: mixture_site([(n14, 0.996, azz()), (n15, 0.004, azz())])),
        ("B10,B11", 11, lambda: mixture_site([(b10, 0.2, azz()), (b11, 0.8, azz())])),
    )

    used = set()
    worst = 0.0
    largest = 0
    start = time.perf_counter()
    for bath_idx in range(50):
        target = MAX_CONFIGS if bath_idx == 0 else 10.0 ** rng.uniform(2.0, 6.0)
        sites = []
        total = 1
        while True:
            fits = [f for f in factories if total * f[1] <= MAX_CONFIGS and total < target]
            if not fits:
                break
            tags, n_out, make = fits[int(rng.integers(len(fits)))]
            sites.append(make())
            total *= n_out
            used.update(tags.split(","))
        assert bruteforce_config_count(sites) == total
        assert total <= MAX_CONFIGS
        bin_width = float(rng.choice([0.05, 0.1, 0.2, 0.25]))
        f_max = 1.5 * support_bound(sites)
        fft = spectral_density_fft(sites, bin_width, f_max)
        brute = spectral_density_bruteforce(sites, bin_width, f_max)
        assert np.array_equal(fft.freq_offsets_mhz, brute.freq_offsets_mhz)
        worst = max(worst, float(np.max(np.abs(fft.masses - brute.masses))))
        largest = max(largest, total)
    elapsed = time.perf_counter() - start
    assert worst <= 1e-9
    assert used == {"N14", "N15", "B10", "B11"}
    assert largest >= 500_000
    assert elapsed <= 60.0


def test_02_equivalent_sites_form_exact_binomial_multiplets(n15, n14):
    quartet = spectral_density_fft([pure_site(n15, -65.9)] * 3, 0.05, 160.0)
    populated = np.flatnonzero(quartet.masses > 1e-12)
    assert populated.size == 4
    assert np.allclose(
        quartet.masses[populated], np.array([1.0, 3.0, 3.0, 1.0]) / 8.0, rtol=0, atol=1e-12
    )
    assert np.allclose(np.diff(quartet.freq_offsets_mhz[populated]), 65.9, atol=1e-9)

    triplet = spectral_density_fft([pure_site(n14, 48.3)], 0.05, 160.0)
    populated = np.flatnonzero(triplet.masses > 1e-12)
    assert populated.size == 3
    assert np.allclose(triplet.masses[populated], 1.0 / 3.0, rtol=0, atol=1e-12)
    assert np.allclose(np.diff(triplet.freq_offsets_mhz[populated]), 48.3, atol=1e-9)


def test_03_isotope_substitution_reproduces_measured_coupling_ratio(n14, n15):
    gamma_ratio = n15.gamma_n_mhz_per_g / n14.gamma_n_mhz_per_g
    tensor = HyperfineTensor(axx=90.0, ayy=60.0, axy=10.0, azz=48.3)
    swapped = isotope_substitute(tensor, n14, n15)
    assert swapped.azz == pytest.approx(48.3 * gamma_ratio, rel=1e-12)
    assert swapped.axx == pytest.approx(90.0 * gamma_ratio, rel=1e-12)
    assert swapped.axy == pytest.approx(10.0 * gamma_ratio, rel=1e-12)
    # the measured axial couplings of the two isotopes stand in that same
    # ratio to within 3 percent
    assert -65.9 / 48.3 == pytest.approx(gamma_ratio, rel=0.03)
    assert gamma_ratio == pytest.approx(-1.4, abs=2e-4)


def test_04_rescaled_model_matches_low_field_and_departs_at_high_field(
    rescaled_model, abinitio_model
):
    start = time.perf_counter()
    lines = {}
    for name, model in (("rescaled", rescaled_model), ("abinitio", abinitio_model)):
        for bz in (210.0, 760.0):
            eig = diagonalize(build_hamiltonian(model, FieldConfig(bz_gauss=bz)))
            lines[name, bz] = dominant_line(transition_spectrum(eig))
    elapsed = time.perf_counter() - start
    assert lines["rescaled", 760.0] == pytest.approx(66.2, abs=0.5)
    low_diff = abs(lines["rescaled", 210.0] - lines["abinitio", 210.0])
    high_diff = abs(lines["rescaled", 760.0] - lines["abinitio", 760.0])
    assert low_diff <= 0.3
    assert high_diff > 0.3
    assert high_diff > low_diff
    assert elapsed <= 5.0


def test_05_combination_drive_eigenvalues_are_signed_magnitude_sums():
    rng = np.random.default_rng(53)
    for _ in range(100):
        omegas = list(rng.normal(size=3) + 1j * rng.normal(size=3))
        eig = np.sort(np.linalg.eigvalsh(rabi_matrix(omegas)))
        mags = np.abs(omegas)
        expected = np.sort(
            [np.dot(signs, mags) for signs in itertools.product((-1.0, 1.0), repeat=3)]
        )
        assert np.max(np.abs(eig - expected)) <= 1e-10
    assert np.allclose(rabi_frequencies([0.7, 0.7, 0.7]), [1.4, 1.4, 1.4, 4.2], atol=1e-12)


def test_06_enhanced_gyromagnetic_ratio_reference_point(n15):
    transverse = 30.0
    a1 = transverse / np.sqrt(8.0)  # pure axially symmetric transverse part
    bz = (3480.0 - 1390.0) / 2.8  # lower electron gap of 1390 MHz
    report = gamma_eff(a1, 0.0, 3480.0, 2.8, bz, n15.gamma_n_mhz_per_g, level=-1)
    assert report.gap_mhz == pytest.approx(1390.0, abs=1e-9)
    assert report.gamma_eff_mhz_per_g == pytest.approx(0.043, abs=0.001)
    assert report.enhancement == pytest.approx(99.0, abs=3.0)
    assert calibrate_gamma_eff(1.67, 41.67, 2.6, 2.8) == pytest.approx(0.0432, abs=0.0005)


def test_07_weak_drive_oscillations_match_closed_form_couplings(n15):
    points = ((8.0, 20.0, 210.0), (18.0, 60.0, 210.0), (18.0, 20.0, 760.0))
    durations = np.arange(0.0, 60.0 + 1e-9, 0.05)
    for a_perp, b_dr, bz in points:
        tensor = HyperfineTensor(axx=a_perp, ayy=a_perp, axy=0.0, azz=-65.9)
        model = single_nucleus_model(n15, tensor)
        field = FieldConfig(bz_gauss=bz)
        eig = diagonalize(build_hamiltonian(model, field))
        f_drive = dominant_line(transition_spectrum(eig))
        omega = model_couplings(model, bz, b_dr, include_bare=True)[0]
        trace = simulate_nuclear_rabi(
            model, field, DriveSpec(b_dr_gauss=b_dr, freq_mhz=f_drive),
            durations, dt_us=2.5e-4,
        )
        measured = _peak_freq(trace.populations["manifold"], 0.05)
        assert measured == pytest.approx(abs(omega), rel=0.05)

    # unitarity and step-size control of the exact propagation, at the
    # weak-drive operating point
    model = single_nucleus_model(n15, HyperfineTensor(axx=8.0, ayy=8.0, axy=0.0, azz=-65.9))
    field = FieldConfig(bz_gauss=210.0)
    h = build_hamiltonian(model, field)
    f_drive = dominant_line(transition_spectrum(diagonalize(h)))
    drive = DriveSpec(b_dr_gauss=20.0, freq_mhz=f_drive)
    ops = drive_operators(model)
    register = model.register()
    projectors = {
        f"{ms:+.0f},{mi:+.1f}": manifold_projector(register, ms, mi)
        for ms in (-1.0, 0.0, 1.0)
        for mi in (-0.5, 0.5)
    }
    k0 = int(np.argmax(np.diag(projectors["-1,+0.5"].entries).real))
    psi0 = np.zeros(h.entries.shape[0], dtype=complex)
    psi0[k0] = 1.0
    coarse = evolve(h, drive, ops, psi0, 0.2, 2e-5, observables=projectors)
    fine = evolve(h, drive, ops, psi0, 0.2, 1e-5, observables=projectors)
    total = sum(coarse.populations[name] for name in projectors)
    assert np.max(np.abs(total - 1.0)) <= 1e-8
    halving_shift = max(
        float(np.max(np.abs(coarse.populations[n] - fine.populations[n][::2])))
        for n in projectors
    )
    assert halving_shift <= 1e-6


def test_08_polarization_recovered_within_one_percent_under_noise():
    grid = np.arange(2750.0, 3030.0, 0.1)
    init = MultipletModel(
        center_mhz=2895.0, splitting_mhz=-30.0, fwhm_mhz=18.0, depth=0.1,
        amplitude_law="binomial-P", p=0.5,
    )
    for k, p_true in enumerate((0.30, 0.50, 0.632, 0.90)):
        rng = np.random.default_rng(701 + k)
        truth = MultipletModel(
            center_mhz=2892.0, splitting_mhz=-32.95, fwhm_mhz=15.0, depth=0.15,
            amplitude_law="binomial-P", p=p_true,
        )
        noisy = truth.evaluate(grid) * (1.0 + 0.01 * rng.standard_normal(grid.size))
        spec = SpectrumSeries(freqs_mhz=grid, intensity=noisy, labels={})
        result, _ = fit_polarization(spec, "single", init)
        assert abs(result.net_p - p_true) <= 0.01

    # splitting one parameter into two on single-parameter data keeps the net
    # value and strictly inflates the error bars
    rng = np.random.default_rng(99)
    truth = MultipletModel(
        center_mhz=2892.0, splitting_mhz=-32.95, fwhm_mhz=15.0, depth=0.15,
        amplitude_law="binomial-P", p=0.632,
    )
    noisy = truth.evaluate(grid) * (1.0 + 0.01 * rng.standard_normal(grid.size))
    spec = SpectrumSeries(freqs_mhz=grid, intensity=noisy, labels={})
    single, _ = fit_polarization(spec, "single", init)
    double, _ = fit_polarization(
        spec, "double",
        MultipletModel(
            center_mhz=2895.0, splitting_mhz=-30.0, fwhm_mhz=18.0, depth=0.1,
            amplitude_law="two-parameter-P1P2", p1=0.5, p2=0.5,
        ),
    )
    assert abs(double.net_p - single.net_p) <= max(double.sigma_net_p, single.sigma_net_p)
    assert double.sigma_p1 > single.sigma_p
    assert double.sigma_p2 > single.sigma_p


def test_09_sensitivity_reference_values():
    echo = SensitivityInput(
        c_max=0.02, n_photons=0.27, tau_s=5.01e-7, t2_s=5.01e-7,
        t_i_s=1.0e-6, t_r_s=1.0e-6,
    )
    assert sensitivity_ac(echo) == pytest.approx(7.0e-6, rel=0.15)

    shallow = sensitivity_dc(SensitivityInput(r_photons_per_s=1e6, max_slope_per_hz=8.2e-11))
    steep = sensitivity_dc(SensitivityInput(r_photons_per_s=1e6, max_slope_per_hz=3.0e-10))
    assert shallow / steep == pytest.approx(3.66, abs=0.01)

    single_line = MultipletModel(
        center_mhz=2870.0, splitting_mhz=0.0, fwhm_mhz=10.0, n_lines=1,
        amplitude_law="free", amplitudes=(0.02,),
    )
    via_shape = sensitivity_dc(
        SensitivityInput(r_photons_per_s=1e6, c_m=0.02, delta_nu_mhz=10.0),
        mode="lorentzian",
    )
    via_slope = sensitivity_dc(
        SensitivityInput(r_photons_per_s=1e6, max_slope_per_hz=max_slope(single_line))
    )
    assert via_slope == pytest.approx(via_shape, rel=1e-6)


def test_10_purified_host_narrows_total_spectral_support(registry):
    n14, n15, b10, b11 = (registry[k] for k in ("N14", "N15", "B10", "B11"))
    gamma_ratio_n = n15.gamma_n_mhz_per_g / n14.gamma_n_mhz_per_g
    boron_moment_ratio = 0.335  # measured gamma(B10) / gamma(B11), user supplied
    nitrogen_azz = (47.0, 12.0, 5.0)  # majority-isotope couplings per shell
    boron_azz = (30.0, 9.0, 4.0)

    natural, purified = [], []
    for a in nitrogen_azz:
        natural.append(mixture_site([
            (n14, n14.abundance, a), (n15, n15.abundance, a * gamma_ratio_n),
        ]))
        purified.append(pure_site(n15, a * gamma_ratio_n))
    for a in boron_azz:
        natural.append(mixture_site([
            (b11, b11.abundance, a), (b10, b10.abundance, a * boron_moment_ratio),
        ]))
        purified.append(pure_site(b10, a * boron_moment_ratio))

    def realized_span(sites):
        density = spectral_density_fft(sites, 0.05, 1.5 * support_bound(sites))
        populated = np.flatnonzero(density.masses > 1e-12)
        centers = density.freq_offsets_mhz[populated]
        return float(centers[-1] - centers[0])

    assert support_bound(purified) < support_bound(natural)
    assert realized_span(purified) < realized_span(natural)

    # per-site span follows 2 |gamma_n I| at a fixed lattice coupling factor
    span_n14 = realized_span([pure_site(n14, 47.0)])
    span_n15 = realized_span([pure_site(n15, 47.0 * gamma_ratio_n)])
    assert span_n14 == pytest.approx(2.0 * 47.0 * 1.0, abs=0.1)
    assert span_n15 / span_n14 == pytest.approx(abs(gamma_ratio_n) * 0.5, abs=2e-3)
    span_b11 = realized_span([pure_site(b11, 30.0)])
    span_b10 = realized_span([pure_site(b10, 30.0 * boron_moment_ratio)])
    assert span_b11 == pytest.approx(2.0 * 30.0 * 1.5, abs=0.1)
    assert span_b10 / span_b11 == pytest.approx(boron_moment_ratio * 2.0, abs=2e-3)


def test_11_bundled_scenarios_rerun_byte_identical(tmp_path):
    scenario_dir = data_root() / "scenarios"
    files = sorted(scenario_dir.glob("*.scn"))
    assert len(files) == 12
    for scn in files:
        outs, codes = [], []
        for tag in ("first", "second"):
            out = tmp_path / scn.stem / tag
            codes.append(main(["run", "--scenario", str(scn), "--out", str(out)]))
            outs.append(out)
        expected = 2 if scn.stem == "validate_strict" else 0
        assert codes == [expected, expected], scn.name
        names = sorted(p.name for p in outs[0].iterdir())
        assert names == sorted(p.name for p in outs[1].iterdir())
        assert names, scn.name
        for name in names:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), (
                scn.name, name,
            )
        if expected == 0:
            manifest = json.loads((outs[0] / "run_manifest.json").read_text())
            assert manifest["tool"]["name"] == "odmrkit"
