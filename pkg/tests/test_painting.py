import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr

from paintbec.optics import Beam, gaussian_intensity
from paintbec.painting import (
    DwellDensity,
    PaintingSpec,
    ParabolicDwell,
    UniformDwell,
    dwell_density_for_profile,
    frequency_trajectory,
    iq_samples,
    make_dwell,
    read_waveform_csv,
    rf_spectrum,
    sampled_time_average,
    sideband_comb,
    sideband_fragmentation,
    sideband_lines,
    time_averaged_intensity,
    validate_painting,
    write_waveform_csv,
    write_waveform_iq,
)

KAPPA = 1e-11  # 10 um per MHz
W0 = 5e-6


def _random_dwell(rng, n=41, stroke=20e-6, symmetric=False):
    x = np.linspace(-stroke, stroke, n)
    m = rng.uniform(0.2, 1.0, n)
    if symmetric:
        m = 0.5 * (m + m[::-1])
    return DwellDensity(x, m)


def _line(points_along, beam):
    pts = np.zeros(points_along.shape + (3,))
    pts[..., :] = np.asarray(beam.paint_axis, dtype=float) * points_along[..., None]
    return pts


# --------------------------------------------------------------------------
# specs and dwell densities


def test_spec_stroke_and_band():
    s = PaintingSpec.from_stroke(25e-6, 1e5, KAPPA)
    assert s.modulation_amplitude == pytest.approx(2.5e6)
    assert s.stroke == pytest.approx(25e-6)
    assert s.frequency_band == pytest.approx((77.5e6, 82.5e6))


@pytest.mark.parametrize("args", [(80e6, 1e6, 0.0, KAPPA), (80e6, -1.0, 1e5, KAPPA), (80e6, 1e6, 1e5, 0.0)])
def test_spec_invariants(args):
    with pytest.raises(ValueError):
        PaintingSpec(*args)


def test_dwell_normalised(rng):
    d = _random_dwell(rng)
    assert d.masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.sum(d.density * d.widths) == pytest.approx(1.0, abs=1e-9)
    assert d.edges[0] == -20e-6 and d.edges[-1] == 20e-6


@pytest.mark.parametrize("bad", [([0, 1, 3], [1, 1, 1]), ([0, 1], [1, -1]), ([0, 1], [0, 0]), ([0], [1, 2])])
def test_dwell_rejects_invalid(bad):
    with pytest.raises(ValueError):
        DwellDensity(*bad)


def test_quantile_inverts_cdf(rng):
    d = _random_dwell(rng)
    x = d.quantile(np.linspace(0, 1, 11))
    assert x[0] == pytest.approx(-20e-6) and x[-1] == pytest.approx(20e-6)
    assert np.all(np.diff(x) >= 0)


@pytest.mark.parametrize("cls", [UniformDwell, ParabolicDwell])
def test_closed_form_matches_grid_form(cls):
    d = cls(30e-6)
    grid = d.to_grid(4001)
    u = np.linspace(-50e-6, 50e-6, 41)
    assert np.allclose(d.smooth(u, 2.5e-6), grid.smooth(u, np.full_like(u, 2.5e-6)), rtol=2e-3, atol=1e-3 * 1 / 60e-6)


@pytest.mark.parametrize("cls", [UniformDwell, ParabolicDwell])
def test_closed_form_unit_area(cls):
    total, _ = quad(lambda u: float(cls(30e-6).smooth(u, 2e-6)), -60e-6, 60e-6, points=[-30e-6, 30e-6])
    assert total == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("cls", [UniformDwell, ParabolicDwell])
@settings(max_examples=60, deadline=None)
@given(u=st.floats(-80e-6, 80e-6), stroke=st.floats(0.0, 50e-6), sigma=st.floats(0.5e-6, 20e-6))
def test_scalar_smooth_matches_vector(cls, u, stroke, sigma):
    d = cls(stroke)
    assert d.smooth_scalar(u, sigma) == pytest.approx(float(d.smooth(u, sigma)), rel=1e-9, abs=1e-9 / sigma)


@pytest.mark.parametrize("cls", [UniformDwell, ParabolicDwell])
def test_tiny_stroke_is_continuous_with_point_mass(cls):
    sigma = 2.5e-6
    u = np.linspace(-10e-6, 10e-6, 21)
    static = np.exp(-0.5 * (u / sigma) ** 2) / (math.sqrt(2 * math.pi) * sigma)
    for stroke in (1.36e-19, 1e-12, 1e-10):
        assert np.allclose(cls(stroke).smooth(u, sigma), static, rtol=1e-6, atol=1e-6 * static.max())


def test_make_dwell():
    assert make_dwell("parabolic", 1e-5) == ParabolicDwell(1e-5)
    with pytest.raises(ValueError):
        make_dwell("triangular", 1e-5)


# --------------------------------------------------------------------------
# waveforms and spectra


def test_point_mass_gives_constant_frequency():
    spec = PaintingSpec(80e6, 0.0, 1e5, KAPPA)
    w = frequency_trajectory(DwellDensity.point_mass(), spec)
    assert np.all(w.frequency == 80e6)
    f, a = rf_spectrum(w, 4)
    assert f[np.argmax(a)] == pytest.approx(80e6)
    assert a.max() == pytest.approx(1.0)


def test_uniform_dwell_is_triangle_wave():
    spec = PaintingSpec.from_stroke(20e-6, 1e5, KAPPA)
    w = frequency_trajectory(UniformDwell(20e-6).to_grid(2001), spec, 400 * 1e5)
    lo, hi = spec.frequency_band
    assert w.frequency.min() >= lo and w.frequency.max() <= hi
    slope = np.diff(w.frequency[5:195])
    assert np.allclose(slope, slope[0], rtol=1e-6)
    assert slope[0] == pytest.approx(4 * spec.modulation_amplitude * 1e5 / 400 / 1e5, rel=1e-6)
    assert w.frequency[:200] == pytest.approx(w.frequency[200:][::-1], rel=0, abs=5 * abs(slope[0]))


def test_sample_rate_contract():
    spec = PaintingSpec.from_stroke(20e-6, 1e5, KAPPA)
    d = UniformDwell(20e-6)
    with pytest.raises(ValueError):
        frequency_trajectory(d, spec, 50 * 1e5)
    with pytest.raises(ValueError):
        frequency_trajectory(d, spec, 150.5 * 1e5)
    with pytest.raises(ValueError):
        frequency_trajectory(UniformDwell(40e-6), spec)


def test_histogram_oracle_random_dwell(rng):
    spec = PaintingSpec.from_stroke(20e-6, 1e5, KAPPA)
    for _ in range(5):
        d = _random_dwell(rng)
        w = frequency_trajectory(d, spec, 20000 * 1e5)
        x = (w.frequency - spec.center_frequency) * KAPPA
        assert np.abs(d.histogram(x) - d.masses).sum() < 0.02


def test_zero_cells_flagged():
    d = DwellDensity(np.linspace(-1e-5, 1e-5, 5), [1, 0, 1, 0, 1])
    w = frequency_trajectory(d, PaintingSpec.from_stroke(1e-5, 1e5, KAPPA))
    assert w.gaps


def test_waveform_periodic_phase_continuous(rng):
    spec = PaintingSpec.from_stroke(20e-6, 1e5, KAPPA)
    w = frequency_trajectory(_random_dwell(rng), spec)
    t, f, phi = w.repeated(3)
    dphi = np.diff(phi)
    trap = np.pi * (f[1:] + f[:-1]) / w.sample_rate
    assert np.allclose(dphi, trap, rtol=1e-12)
    assert np.array_equal(f[: w.n_samples], f[w.n_samples: 2 * w.n_samples])


def test_parseval(rng):
    spec = PaintingSpec.from_stroke(20e-6, 1e5, KAPPA)
    w = frequency_trajectory(_random_dwell(rng), spec)
    _, a = rf_spectrum(w, 3)
    assert np.sum(a**2) == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(ValueError):
        rf_spectrum(w, 0)


def _peaks(f, a, rel=1e-3):
    inner = (a[1:-1] > a[:-2]) & (a[1:-1] >= a[2:]) & (a[1:-1] > rel * a.max())
    return f[1:-1][inner]


def test_symmetric_dwell_peaks_on_carrier_comb(rng):
    fp = 1e5
    spec = PaintingSpec.from_stroke(20e-6, fp, KAPPA)
    for _ in range(3):
        w = frequency_trajectory(_random_dwell(rng, symmetric=True), spec, 1000 * fp)
        f, a = rf_spectrum(w, 8)
        k = (_peaks(f, a) - spec.center_frequency) / fp
        assert np.all(np.abs(k - np.round(k)) <= 1 / 8 + 1e-9)


def test_asymmetric_dwell_peaks_on_mean_frequency_comb(rng):
    fp = 1e5
    spec = PaintingSpec.from_stroke(20e-6, fp, KAPPA)
    d = DwellDensity(np.linspace(-20e-6, 20e-6, 41), np.linspace(0.1, 1.0, 41))
    w = frequency_trajectory(d, spec, 1000 * fp)
    f_mean = w.period_phase_advance() / (2 * np.pi) * fp
    assert abs(f_mean - spec.center_frequency) > 1e3
    lines, power = sideband_comb(w)
    assert np.allclose(np.diff(lines), fp)
    assert np.any(np.isclose(lines, f_mean, rtol=0, atol=1.0))
    f, a = rf_spectrum(w, 16)
    k = (_peaks(f, a, rel=0.05) - f_mean) / fp
    assert np.all(np.abs(k - np.round(k)) <= 1 / 16 + 1e-9)


def test_comb_matches_fft_lines(rng):
    fp = 1e5
    spec = PaintingSpec.from_stroke(20e-6, fp, KAPPA)
    w = frequency_trajectory(_random_dwell(rng, symmetric=True), spec, 1000 * fp)
    lines, power = sideband_comb(w)
    f, a = rf_spectrum(w, 1)
    assert np.allclose(lines, f)
    assert np.allclose(power, a**2, atol=1e-12)
    assert power.sum() == pytest.approx(1.0)


# --------------------------------------------------------------------------
# averaged intensity


def test_point_mass_is_static_profile():
    b = Beam(1.0, W0, W0, axis=(0, 1, 0), paint_axis=(1, 0, 0))
    pts = np.random.default_rng(1).uniform(-15e-6, 15e-6, (50, 3))
    assert np.allclose(time_averaged_intensity(b, DwellDensity.point_mass(), pts), gaussian_intensity(b, pts), rtol=1e-12)


def test_flat_top_peak_value():
    b = Beam(1.0, 35e-6, 35e-6)
    i0 = b.peak_intensity
    peak = float(time_averaged_intensity(b, UniformDwell(550e-6), np.zeros(3)))
    # oracle: direct average of the moving beam over 20000 time samples
    x = 550e-6 * np.sin(np.linspace(-np.pi / 2, np.pi / 2, 20001))
    x = np.linspace(-550e-6, 550e-6, 20001)
    sampled = float(np.mean(i0 * np.exp(-2 * x**2 / 35e-6**2)))
    assert peak == pytest.approx(sampled, rel=1e-3)
    assert peak / i0 == pytest.approx(0.040, abs=5e-4)


def _fwhm_oracle(stroke, waist):
    # flat top: uniform density convolved with a normal of width w/2
    s = waist / 2
    f = lambda u: ndtr((u + stroke) / s) - ndtr((u - stroke) / s)  # noqa: E731
    half = f(0.0) / 2
    return 2 * brentq(lambda u: f(u) - half, 0, stroke + 10 * waist)


def test_flat_top_width_ratio():
    b = Beam(1.0, 35e-6, 35e-6)
    x = np.linspace(-1e-3, 1e-3, 200001)
    pts = _line(x, b)
    prof = time_averaged_intensity(b, UniformDwell(550e-6), pts)
    above = x[prof >= prof.max() / 2]
    fwhm = above[-1] - above[0]
    static = 35e-6 * math.sqrt(2 * math.log(2))
    ratio = fwhm / static
    assert ratio == pytest.approx(_fwhm_oracle(550e-6, 35e-6) / static, rel=1e-4)
    assert ratio == pytest.approx(26.692970563859863, rel=1e-4)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_convolution_equals_sampled_average(seed):
    rng = np.random.default_rng(seed)
    b = Beam(1.0, W0, W0, axis=(0, 1, 0), paint_axis=(1, 0, 0))
    spec = PaintingSpec.from_stroke(15e-6, 1e5, KAPPA)
    d = _random_dwell(rng, 31, 15e-6)
    w = frequency_trajectory(d, spec, 20000 * 1e5)
    pts = np.stack([np.linspace(-25e-6, 25e-6, 41), np.full(41, 3e-6), np.full(41, 1e-6)], axis=1)
    exact = time_averaged_intensity(b, d, pts)
    brute = sampled_time_average(b, w, KAPPA, pts)
    assert np.max(np.abs(exact - brute)) / exact.max() < 1e-3


def test_painting_conserves_power():
    b = Beam(2.0, W0, W0, axis=(0, 0, 1), paint_axis=(1, 0, 0))
    d = ParabolicDwell(20e-6)
    x = np.linspace(-45e-6, 45e-6, 721)
    y = np.linspace(-20e-6, 20e-6, 321)
    X, Y = np.meshgrid(x, y, indexing="ij")
    pts = np.stack([X, Y, np.full_like(X, 10e-6)], axis=-1)
    total = np.trapezoid(np.trapezoid(time_averaged_intensity(b, d, pts), y, axis=1), x)
    assert total == pytest.approx(2.0, rel=5e-3)


def test_far_field_is_dark():
    b = Beam(1.0, W0, W0)
    assert float(time_averaged_intensity(b, UniformDwell(1e-5), np.array([1e300, 0.0, 0.0]))) == 0.0


# --------------------------------------------------------------------------
# deconvolution


def test_deconvolution_harmonic_profile():
    w = 5e-6
    xs = 10 * w
    x = np.linspace(-xs, xs, 201)
    target = np.clip(1 - (x / xs) ** 2, 0, None)
    res = dwell_density_for_profile(x, target, w)
    d = res.dwell
    # oracle: forward model by direct quadrature of the piecewise-constant density
    rho, e = d.density, d.edges

    def forward(u):
        return sum(
            quad(lambda s: r * math.exp(-2 * (u - s) ** 2 / w**2), a, c)[0]
            for r, a, c in zip(rho, e[:-1], e[1:]) if r > 0
        ) * math.sqrt(2 / math.pi) / w

    inner = x[np.abs(x) <= xs - w][::10]
    fwd = np.array([forward(u) for u in inner])
    t = target / np.trapezoid(target, x)
    t_inner = np.interp(inner, x, t)
    assert np.max(np.abs(fwd - t_inner)) / t.max() < 0.01
    assert d.masses.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.diff(res.residual_history) <= 0)


def test_deconvolution_static_profile_is_point_mass():
    res = dwell_density_for_profile([0.0], [1.0], W0)
    assert res.dwell.is_point_mass and res.converged


def test_deconvolution_narrow_target_concentrates():
    x = np.linspace(-30e-6, 30e-6, 61)
    target = np.where(np.abs(x) < 0.5e-6, 1.0, 0.0)
    res = dwell_density_for_profile(x, target, W0, max_iters=50)
    assert res.dwell.masses[30] == pytest.approx(1.0)
    assert res.clipped is False


def test_deconvolution_nonconvergence_is_flagged():
    x = np.linspace(-50e-6, 50e-6, 101)
    target = (np.abs(x) < 20e-6).astype(float) + 0.1
    res = dwell_density_for_profile(x, target, W0, tol=1e-12, max_iters=20)
    assert not res.converged and res.iterations == 20
    assert res.residual == pytest.approx(min(res.residual_history))


def test_deconvolution_rejects_bad_target():
    with pytest.raises(ValueError):
        dwell_density_for_profile([0, 1e-6], [0, 0], W0)
    with pytest.raises(ValueError):
        dwell_density_for_profile([0, 1e-6], [1, -1], W0)


# --------------------------------------------------------------------------
# sideband fragmentation


def test_fragmented_at_one_megahertz():
    out = sideband_fragmentation(PaintingSpec.from_stroke(25e-6, 1e6, KAPPA), W0)
    assert out["well_spacing"] == pytest.approx(2 * W0)
    assert out["corrugation"] > 0.5


def test_smooth_at_one_hundred_kilohertz():
    out = sideband_fragmentation(PaintingSpec.from_stroke(25e-6, 1e5, KAPPA), W0)
    assert out["well_spacing"] == pytest.approx(W0 / 5)
    assert out["corrugation"] < 0.05


@pytest.mark.xfail(strict=True, reason="the sideband power envelope alone exceeds 5% at a spacing of half a waist")
def test_smooth_at_half_waist_spacing():
    out = sideband_fragmentation(PaintingSpec.from_stroke(25e-6, W0 / 2 / KAPPA, KAPPA), W0)
    assert out["corrugation"] < 0.05


def test_corrugation_vanishes_in_continuum_limit():
    vals = [sideband_fragmentation(PaintingSpec.from_stroke(25e-6, fp, KAPPA), W0)["corrugation"]
            for fp in (4e5, 1e5, 2.5e4)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 0.01


def test_static_drive_is_one_line():
    c, p = sideband_lines(PaintingSpec(80e6, 0.0, 1e5, KAPPA))
    assert c.tolist() == [0.0] and p.tolist() == [1.0]


def test_comb_wells_at_line_spacing():
    spec = PaintingSpec.from_stroke(25e-6, 1e6, KAPPA)
    c, p = sideband_lines(spec)
    assert np.allclose(np.diff(c), 10e-6)
    assert p.sum() == pytest.approx(1.0)
    assert p[np.abs(c) <= 25e-6 + 2 * 10e-6].sum() > 0.95


# --------------------------------------------------------------------------
# validation


def test_validation_ok_at_100_khz():
    assert validate_painting(PaintingSpec.from_stroke(25e-6, 1e5, KAPPA), [2e3, 300, 300]) == []


def test_validation_warns_when_dragging():
    warn = validate_painting(PaintingSpec.from_stroke(25e-6, 5e3, KAPPA), [2e3, 300, 300])
    assert len(warn) == 1 and "heat" in warn[0]


def test_validation_zero_trap_frequencies():
    assert validate_painting(PaintingSpec.from_stroke(25e-6, 1e3, KAPPA), [0, 0, 0]) == []


def test_validation_flags_corrugation():
    warn = validate_painting(PaintingSpec.from_stroke(25e-6, 1e6, KAPPA), [1e3], beam_waist=W0)
    assert any("corrugation" in m for m in warn)


def test_validation_rejects_negative_frequency():
    with pytest.raises(ValueError):
        validate_painting(PaintingSpec.from_stroke(25e-6, 1e5, KAPPA), [-1.0])


# --------------------------------------------------------------------------
# export


def test_csv_round_trip(tmp_path, rng):
    spec = PaintingSpec.from_stroke(20e-6, 1e5, KAPPA)
    w = frequency_trajectory(_random_dwell(rng), spec)
    path = tmp_path / "w.csv"
    write_waveform_csv(path, w, 2)
    assert path.read_text().splitlines()[0] == "t_s,f_Hz,phase_rad"
    t, f, phi = read_waveform_csv(path)
    t0, f0, phi0 = w.repeated(2)
    assert np.array_equal(t, t0) and np.array_equal(f, f0) and np.array_equal(phi, phi0)


def test_iq_binary_contract(tmp_path, rng):
    spec = PaintingSpec.from_stroke(20e-6, 1e5, KAPPA)
    w = frequency_trajectory(_random_dwell(rng), spec)
    path = tmp_path / "w.iq"
    write_waveform_iq(path, w, 3)
    raw = path.read_bytes()
    assert len(raw) == 3 * w.n_samples * 2 * 4
    iq = np.frombuffer(raw, dtype="<f4")
    _, _, phi = w.repeated(3)
    assert np.array_equal(iq[0::2], np.cos(phi).astype("<f4"))
    assert np.array_equal(iq[1::2], np.sin(phi).astype("<f4"))
    assert iq_samples(np.array([0.0])).tobytes() == np.array([1.0, 0.0], dtype="<f4").tobytes()
