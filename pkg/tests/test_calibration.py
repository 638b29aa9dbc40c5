import dataclasses
import math

import numpy as np
import pytest

from bosonic_link.calibration import (
    SpectrumData,
    avoided_crossing_branches,
    bayes_correct,
    chevron_model,
    confusion_matrix,
    fit_anticrossing,
    fit_chevron,
    fit_snail_spectrum,
    snail_frequency,
    snail_spectrum,
    solve_phi_min,
)
from bosonic_link.device import ReadoutParams, SnailParams
from bosonic_link.errors import FitError, NumericalError

MODULE1 = SnailParams(beta=0.162, e_j=54.0, e_l=165.0, e_c=142.0)
MODULE2 = SnailParams(beta=0.184, e_j=50.0, e_l=149.0, e_c=136.0)


# ---- potential minimum --------------------------------------------------------------


def test_phi_min_zero():
    assert solve_phi_min(0.162, 0.0) == pytest.approx(0.0, abs=1e-14)


def test_phi_min_residual():
    phi = solve_phi_min(0.162, math.pi)
    assert abs(0.162 * math.sin(phi - math.pi) + math.sin(phi / 3)) < 1e-10


def test_phi_min_continuity():
    d = 1e-4
    for pe in np.linspace(0, math.pi - d, 60):
        assert abs(solve_phi_min(0.162, pe + d) - solve_phi_min(0.162, pe)) < 10 * d


def test_phi_min_large_beta_branch():
    phi = solve_phi_min(0.6, 2.0)
    assert abs(0.6 * math.sin(phi - 2.0) + math.sin(phi / 3)) < 1e-10


def test_phi_min_rejects_beta():
    with pytest.raises(ValueError):
        solve_phi_min(1.2, 0.1)


# ---- SNAIL spectrum ------------------------------------------------------------------


def test_snail_frequency_extrema():
    assert snail_frequency(MODULE1, 0.0) == pytest.approx(5.116, rel=0.02)
    assert snail_frequency(MODULE1, math.pi) == pytest.approx(3.150, rel=0.03)


def test_snail_frequency_monotone():
    f = snail_spectrum(MODULE1, np.linspace(0, 0.5, 101))
    assert np.all(np.diff(f) < 0)


def test_snail_out_of_regime():
    with pytest.raises(NumericalError):
        snail_frequency(SnailParams(beta=0.5, e_j=50, e_l=100, e_c=100), 4.0)


def synthetic_spectrum(params, noise, rng, points=41):
    flux = np.linspace(0, 0.5, points)
    return SpectrumData(flux, snail_spectrum(params, flux) + rng.normal(0, noise, points))


@pytest.mark.parametrize("truth", [MODULE1, MODULE2], ids=["module1", "module2"])
def test_snail_fit_noisy_round_trip(truth, rng):
    data = synthetic_spectrum(truth, 1e-3, rng)
    init = dataclasses.replace(truth, beta=truth.beta * 1.1, e_j=truth.e_j * 0.9, e_l=truth.e_l * 1.1)
    fitted, report = fit_snail_spectrum(data, init)
    assert fitted.beta == pytest.approx(truth.beta, rel=0.02)
    assert fitted.e_j == pytest.approx(truth.e_j, rel=0.03)
    assert fitted.e_l == pytest.approx(truth.e_l, rel=0.03)
    assert fitted.e_c == truth.e_c
    assert report.residual_rms < 2e-3
    assert set(report.stderr) == {"beta", "e_j", "e_l"}


def test_snail_fit_noiseless(rng):
    data = synthetic_spectrum(MODULE1, 0.0, rng)
    init = dataclasses.replace(MODULE1, beta=0.15, e_j=58.0, e_l=160.0)
    _, report = fit_snail_spectrum(data, init)
    assert report.residual_rms < 1e-6


def test_snail_fit_shuffle_invariant(rng):
    data = synthetic_spectrum(MODULE1, 1e-3, rng)
    perm = rng.permutation(data.flux.size)
    shuffled = SpectrumData(data.flux[perm], data.freq[perm])
    init = dataclasses.replace(MODULE1, beta=0.17, e_j=50.0)
    a, _ = fit_snail_spectrum(data, init)
    b, _ = fit_snail_spectrum(shuffled, init)
    assert a.beta == pytest.approx(b.beta, rel=1e-6)
    assert a.e_j == pytest.approx(b.e_j, rel=1e-6)


def test_snail_fit_needs_span():
    flux = np.linspace(0, 0.3, 20)
    with pytest.raises(ValueError):
        fit_snail_spectrum(SpectrumData(flux, snail_spectrum(MODULE1, flux)), MODULE1)


def test_spectrum_data_validation():
    with pytest.raises(ValueError):
        SpectrumData([0.1, 1.2], [1.0, 2.0])
    with pytest.raises(ValueError):
        SpectrumData([0.1, 0.2], [1.0])


def test_spectrum_csv_round_trip(tmp_path):
    data = SpectrumData([0.0, 0.25, 0.5], [5.1, 4.2, 3.1], [3.0, 3.5, 3.9])
    path = tmp_path / "spectrum.csv"
    data.to_csv(path)
    again = SpectrumData.from_csv(path)
    assert np.allclose(again.freq2, data.freq2)
    assert "\r" not in path.read_text()


# ---- anti-crossing ------------------------------------------------------------------------


@pytest.mark.parametrize("g_mhz", [28.8, 30.6])
def test_anticrossing_round_trip(g_mhz):
    bare = np.linspace(3.55, 3.82, 30)
    upper, lower = avoided_crossing_branches(bare, 3.686, g_mhz)
    fit = fit_anticrossing(SpectrumData(np.linspace(0.4, 0.5, 30), upper, lower), init=(20.0, 3.7))
    assert fit.g == pytest.approx(g_mhz, rel=0.01)
    assert fit.omega0 == pytest.approx(3.686, rel=0.01)
    assert np.allclose(fit.bare, bare, atol=1e-9)
    assert fit.residual_rms < 1e-9


def test_anticrossing_noisy(rng):
    bare = np.linspace(3.55, 3.82, 30)
    upper, lower = avoided_crossing_branches(bare, 3.686, 28.8)
    data = SpectrumData(np.linspace(0.4, 0.5, 30), upper + rng.normal(0, 1e-3, 30), lower + rng.normal(0, 1e-3, 30))
    fit = fit_anticrossing(data, init=(20.0, 3.7))
    assert fit.g == pytest.approx(28.8, rel=0.01)
    assert fit.omega0 == pytest.approx(3.686, rel=0.01)


def test_anticrossing_zero_coupling():
    bare = np.linspace(3.55, 3.82, 30)
    upper, lower = avoided_crossing_branches(bare, 3.686, 0.0)
    fit = fit_anticrossing(SpectrumData(np.linspace(0.4, 0.5, 30), upper, lower), init=(5.0, 3.686))
    assert fit.g < 0.1


def test_anticrossing_same_side():
    flux = np.linspace(0.4, 0.5, 5)
    with pytest.raises(FitError):
        fit_anticrossing(SpectrumData(flux, np.full(5, 4.0), np.full(5, 4.1)), init=(20.0, 3.7))


def test_anticrossing_needs_two_branches():
    with pytest.raises(ValueError):
        fit_anticrossing(SpectrumData([0.1, 0.2], [3.0, 3.1]))


# ---- chevron ----------------------------------------------------------------------------------


def chevron_grid(g=0.5, offset=0.0):
    det = np.linspace(-2, 2, 41)
    t = np.linspace(0, 2000, 101)
    return chevron_model(g, det - offset, t), det, t


def test_chevron_resonant_recovery():
    pops, det, t = chevron_grid()
    fit = fit_chevron(pops, det, t, g_init=0.4)
    assert fit.g == pytest.approx(0.5, rel=0.01)
    assert fit.residual_rms < 1e-6


def test_chevron_offset(rng):
    pops, det, t = chevron_grid(offset=0.1)
    fit = fit_chevron(pops + rng.normal(0, 0.01, pops.shape), det, t)
    assert fit.offset == pytest.approx(0.1, abs=0.02)
    assert fit.g == pytest.approx(0.5, rel=0.01)


def test_chevron_resonant_peak():
    pops, _, t = chevron_grid()
    assert pops[20].max() == pytest.approx(1.0, abs=1e-3)
    assert pops[20][np.argmin(np.abs(t - 500))] == pytest.approx(1.0, abs=1e-12)


def test_chevron_zero_drive():
    pops, det, t = chevron_grid(g=0.0)
    with pytest.raises(FitError):
        fit_chevron(pops, det, t)


def test_chevron_shape_mismatch():
    pops, det, t = chevron_grid()
    with pytest.raises(ValueError):
        fit_chevron(pops[:, :-1], det, t)


# ---- readout ------------------------------------------------------------------------------------


def test_bayes_identity():
    assert bayes_correct((0.3, 0.7), ReadoutParams(1.0, 1.0)).probabilities == pytest.approx((0.3, 0.7), abs=1e-15)


def test_bayes_round_trip():
    r = ReadoutParams(0.995, 0.976)
    for pg in np.linspace(0, 1, 11):
        true = np.array([pg, 1 - pg])
        out = bayes_correct(confusion_matrix(r) @ true, r)
        assert np.allclose(out.probabilities, true, atol=1e-12)
        assert out.clipped < 1e-12


def test_bayes_closed_form():
    fg, fe = 0.995, 0.976
    det = fg * fe - (1 - fe) * (1 - fg)
    expect = np.array([fe * 0.5 - (1 - fe) * 0.5, -(1 - fg) * 0.5 + fg * 0.5]) / det
    out = bayes_correct((0.5, 0.5), ReadoutParams(fg, fe))
    assert np.allclose(out.probabilities, expect, atol=1e-14)


def test_bayes_clips():
    out = bayes_correct((1.0, 0.0), ReadoutParams(0.9, 0.9))
    assert out.probabilities == (1.0, 0.0)
    assert out.clipped > 0


def test_bayes_singular():
    with pytest.raises(NumericalError):
        bayes_correct((0.5, 0.5), ReadoutParams(0.5, 0.5))
