import json
import math

import numpy as np
import pytest

from homtrack.correlator import CorrelationConfig, CorrelationHistogram, cross_correlate
from homtrack.inference import (HOM_PARAMS, FitError, HomHistogramModel, LorentzianFit, fit_hbt, fit_hom,
                                fit_lorentzian, propagate_visibility_error, wandering_stats)
from homtrack.model import EmitterParams, g2_hbt_model, t2_from_fwhm
from homtrack.sim import Mode, SimConfig, SpectralDiffusionParams, merged, simulate_excitation_scan


def lorentz(f, c, fwhm, a, off):
    hw = fwhm / 2
    return off + a * hw**2 / ((f - c) ** 2 + hw**2)


# --- Lorentzian scans ---------------------------------------------------------

def test_noiseless_lorentzian_exact():
    f = np.linspace(-300, 300, 121)
    r = fit_lorentzian(f, lorentz(f, 17.3, 52.0, 150.0, 2.0))
    for got, want in zip((r.center, r.fwhm, r.amplitude, r.offset), (17.3, 52.0, 150.0, 2.0)):
        assert got == pytest.approx(want, rel=1e-6)
    assert r.covariance.shape == (4, 4)
    np.testing.assert_allclose(r.covariance, r.covariance.T)
    assert np.all(np.linalg.eigvalsh(r.covariance) >= -1e-12 * np.abs(r.covariance).max())


def test_flat_scan_is_degenerate():
    with pytest.raises(FitError, match="degenerate"):
        fit_lorentzian(np.linspace(-300, 300, 121), np.full(121, 5.0))


def test_too_few_points_or_narrow_span():
    f = np.linspace(-300, 300, 7)
    with pytest.raises(ValueError):
        fit_lorentzian(f, lorentz(f, 0, 52, 150, 2))
    f = np.linspace(-40, 40, 41)
    with pytest.raises(FitError):
        fit_lorentzian(f, lorentz(f, 0, 52, 150, 2))


def test_lorentzian_fwhm_at_scan_snr():
    sc = simulate_excitation_scan(EmitterParams(4.0, fwhm=52.0), SpectralDiffusionParams(20.0, 10.0),
                                  n_rows=60, seed=7)
    fits = [fit_lorentzian(sc.freqs, row) for row in sc.counts]
    fw = np.array([r.fwhm for r in fits])
    assert np.mean(fw) == pytest.approx(52.0, abs=3.0)
    assert np.median(np.abs(fw - 52.0)) < 3.0
    # reported errors describe the row-to-row scatter
    pulls = (fw - 52.0) / np.array([r.errors[1] for r in fits])
    assert 0.7 < np.std(pulls) < 1.4


def test_wandering_stats_cases():
    fits = [LorentzianFit(5.0, 52.0, 100.0, 1.0, np.eye(4), 1.0) for _ in range(12)]
    w = wandering_stats(fits)
    assert w.sigma == 0.0 and w.sigma_err == 0.0 and w.mean == 5.0
    assert w.counts.sum() == 12
    with pytest.raises(ValueError):
        wandering_stats(fits[:9])


def test_wandering_stats_jackknife_matches_sample_law():
    rng = np.random.default_rng(0)
    c = rng.normal(0, 20, 400)
    w = wandering_stats([LorentzianFit(x, 52.0, 1.0, 0.0, np.eye(4), 1.0) for x in c])
    assert w.sigma == pytest.approx(np.std(c, ddof=1))
    assert w.sigma_err == pytest.approx(20 / math.sqrt(2 * 399), rel=0.2)


@pytest.mark.parametrize("sigma,tag,seed", [(20.0, None, 40), (0.0, 2.0, 41)])
def test_wandering_sigma_from_scans(sigma, tag, seed):
    rng_range = (-300.0, 300.0) if tag is None else (-500.0, 500.0)
    sc = simulate_excitation_scan(EmitterParams(4.0, fwhm=52.0), SpectralDiffusionParams(sigma, 10.0),
                                  scan_range=rng_range, n_points=121 if tag is None else 201,
                                  n_rows=100, pump_power_tag=tag, seed=seed)
    w = wandering_stats([fit_lorentzian(sc.freqs, row) for row in sc.counts])
    assert w.sigma == pytest.approx(20.0 if tag is None else 84.0, rel=0.25)


# --- HBT ----------------------------------------------------------------------

def hbt_hist(t1, period, scale=1e4, w=500, K=1399):
    x = np.arange(-K, K + 1) * w / 1000
    sub = (np.arange(20) + 0.5) / 20 * w / 1000 - w / 2000
    g = g2_hbt_model(x[:, None] + sub[None, :], t1, period, "peak").mean(axis=1)
    return CorrelationHistogram(scale * g, w, -K * w)


def test_hbt_noiseless_lifetime():
    for t1 in (2.0, 4.0, 6.5):
        r = fit_hbt(hbt_hist(t1, 40.0), 40.0, resolution="bin")
        assert r.t1 == pytest.approx(t1, rel=1e-2)
        # zero-delay area from the overlapping tails, by quadrature of the model
        from scipy import integrate
        f = lambda x: g2_hbt_model(x, t1, 40.0, "peak")
        a0 = integrate.quad(f, -20, 20, points=[0])[0]
        a2 = integrate.quad(f, 60, 100, points=[80])[0]
        assert r.g2_zero_area == pytest.approx(a0 / a2, abs=2e-3)


def test_hbt_needs_side_peaks():
    K = 150
    h = CorrelationHistogram(np.ones(2 * K + 1), 500, -K * 500)
    with pytest.raises(ValueError):
        fit_hbt(h, 40.0)


def test_hbt_preset_statistics():
    cfg = SimConfig(mode=Mode.HBT, emitters=[EmitterParams(4.25, fwhm=45.0)], period=40.0,
                    emission_prob=1.6e-3, duration=360.0, detector_jitter=170.0, rng_seed=425)
    r = fit_hbt(cross_correlate(merged(cfg), CorrelationConfig(500, 700.0)), cfg.period,
                jitter=cfg.detector_jitter)
    assert abs(r.t1 - 4.25) <= 0.06 and r.t1_err <= 0.06
    assert abs(r.g2_zero_area) < 0.02
    assert 0.7 < r.chi2_per_dof < 1.3


# --- HOM ----------------------------------------------------------------------

TRUTH = dict(detuning=354.0, v_factor=0.95, t1_1=4.0, t1_2=4.0, t2_1=6.0, t2_2=6.0, sigma_joint=20.0,
             amplitude=40.0, offset=0.5)


def model_hist(truth, resolution, jitter_ps=170.0, w=500, lag=250.0, period=50.0):
    K = int((2 * lag * 1000 - w) // (2 * w))
    x = np.arange(-K, K + 1) * w / 1000
    m = HomHistogramModel(x, w / 1000, period, math.sqrt(2) * jitter_ps / 1000, resolution)
    return m(np.array([truth[k] for k in HOM_PARAMS])), K


@pytest.mark.parametrize("resolution", ["none", "bin", "full"])
def test_hom_noiseless_identity(resolution):
    mu, K = model_hist(TRUTH, resolution)
    r = fit_hom(CorrelationHistogram(mu, 500, -K * 500), 50.0, jitter=170.0, resolution=resolution)
    for k in HOM_PARAMS:
        assert getattr(r, k) == pytest.approx(TRUTH[k], rel=1e-4), k
    assert r.chi2_per_dof < 1e-6


def test_hom_noiseless_with_fixed_unequal_lifetimes():
    truth = dict(TRUTH, t1_1=4.25, t1_2=3.88, detuning=500.0)
    mu, K = model_hist(truth, "bin")
    r = fit_hom(CorrelationHistogram(mu, 500, -K * 500), 50.0, fixed={"t1_1": 4.25, "t1_2": 3.88},
                resolution="bin")
    assert r.t1_1 == 4.25 and r.t1_2 == 3.88 and r.errors["t1_1"] == 0.0
    for k in ("detuning", "v_factor", "t2_1", "sigma_joint", "amplitude"):
        assert getattr(r, k) == pytest.approx(truth[k], rel=1e-4), k
    assert "t1_1" not in r.free


def test_hom_requires_side_peaks():
    mu, K = model_hist(TRUTH, "none", lag=200.0)
    with pytest.raises(ValueError, match="side peaks"):
        fit_hom(CorrelationHistogram(mu[K - 300:K + 301], 500, -300 * 500), 50.0)


def test_hom_result_exports(tmp_path):
    mu, K = model_hist(TRUTH, "none")
    r = fit_hom(CorrelationHistogram(mu, 500, -K * 500), 50.0, resolution="none")
    r.to_json(tmp_path / "f.json")
    d = json.loads((tmp_path / "f.json").read_text())
    assert d["detuning"] == pytest.approx(354.0) and "covariance" in d and "chi2_per_dof" in d
    r.to_csv(tmp_path / "f.csv")
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "parameter,value,error"
    assert any(row.startswith("detuning,") for row in rows)
    assert all(e >= 0 for e in r.errors.values())


def test_monotone_washout_in_bin_width():
    for det in (300.0, 500.0, 800.0):
        vs = []
        for w in (100, 250, 500):
            truth = dict(TRUTH, detuning=det, sigma_joint=0.0)
            mu, K = model_hist(truth, "full", jitter_ps=60.0, w=w)
            r = fit_hom(CorrelationHistogram(mu, w, -K * w), 50.0, resolution="none",
                        fixed={"sigma_joint": 0.0})
            vs.append(r.v_factor)
        assert vs[0] >= vs[1] >= vs[2], (det, vs)
        assert vs[2] < TRUTH["v_factor"]


def test_detuning_coverage():
    # Poisson resamples of a fixed expectation at 30-s window statistics
    mu, K = model_hist(TRUTH, "bin")
    rng = np.random.default_rng(2024)
    hits = 0
    n = 200
    for _ in range(n):
        r = fit_hom(CorrelationHistogram(rng.poisson(mu), 500, -K * 500), 50.0, resolution="bin")
        hits += abs(r.detuning - TRUTH["detuning"]) <= r.errors["detuning"]
    assert 0.60 <= hits / n <= 0.75, hits / n


def window_sim(detuning, seed):
    e1 = EmitterParams(4.25, fwhm=59.0, center_freq=detuning)
    e2 = EmitterParams(3.88, fwhm=63.0)
    d = [SpectralDiffusionParams(10.0, 1e-9), SpectralDiffusionParams(10.0, 1e-9)]
    cfg = SimConfig(mode=Mode.HOM_DISTINCT, emitters=[e1, e2], diffusion=d, period=50.0, emission_prob=1e-3,
                    duration=30.0, detector_jitter=170.0, v_factor=0.96, rng_seed=seed)
    return cross_correlate(merged(cfg), CorrelationConfig(500, 700.0)), cfg


def fit_window(h, cfg):
    # lifetimes and coherence times held at independently measured values
    e1, e2 = cfg.emitters
    return fit_hom(h, cfg.period, jitter=cfg.detector_jitter,
                   fixed=dict(t1_1=e1.t1, t1_2=e2.t1, t2_1=e1.t2, t2_2=e2.t2))


@pytest.mark.parametrize("det", [150.0, 354.0, 630.0, 800.0])
def test_detuning_sensitivity(det):
    errs = [abs(fit_window(*window_sim(det, 1000 + seed)).detuning - det) for seed in range(9)]
    assert np.median(errs) <= 20.0, errs


@pytest.mark.parametrize("det", [0.0, 50.0])
def test_small_detuning_flagged_unidentifiable(det):
    r = fit_window(*window_sim(det, 2000))
    assert not r.detuning_identifiable, (r.detuning, r.errors["detuning"])


# --- visibility error -----------------------------------------------------------

def test_visibility_error_formula_and_monte_carlo():
    a0, side = 100.0, np.full(10, 200.0)
    err = propagate_visibility_error(a0, side)
    assert err == pytest.approx(2 * math.sqrt((math.sqrt(100) / 200) ** 2 + (100 / 200**2) ** 2 * (200 / 10)))
    rng = np.random.default_rng(0)
    A0 = rng.poisson(a0, 100_000)
    S = rng.poisson(200.0, (100_000, 10)).mean(axis=1)
    V = (S - 2 * A0) / S
    assert np.std(V) == pytest.approx(err, rel=0.02)


def test_visibility_error_scaling_and_edges():
    e1 = propagate_visibility_error(100.0, np.full(10, 200.0))
    e4 = propagate_visibility_error(400.0, np.full(10, 800.0))
    assert e4 == pytest.approx(e1 / 2, rel=1e-12)
    # with no zero-delay counts both terms carry a factor A0
    assert propagate_visibility_error(0.0, np.full(10, 200.0)) == 0.0
    with pytest.raises(ValueError):
        propagate_visibility_error(10.0, np.zeros(10))
    with pytest.raises(ValueError):
        propagate_visibility_error(-1.0, np.full(10, 200.0))


@pytest.mark.parametrize("resolution", ["full", "bin", "none"])
def test_histogram_jacobian_matches_central_differences(resolution):
    rng = np.random.default_rng(7)
    x = np.arange(-280, 281) * 0.5
    model = HomHistogramModel(x, 0.5, 50.0, math.sqrt(2) * 0.17, resolution, 6)
    worst = 0.0
    for _ in range(10):
        t1a, t1b = rng.uniform(2, 6, 2)
        p = np.array([rng.uniform(50, 900), rng.uniform(0.1, 1), t1a, t1b, rng.uniform(0.3, 2) * t1a,
                      rng.uniform(0.3, 2) * t1b, rng.uniform(1, 80), rng.uniform(10, 1e3), rng.uniform(-5, 5)])
        _, jac = model.jacobian(p)
        for i in range(9):
            h = 1e-5 * max(1.0, abs(p[i]))
            up, dn = p.copy(), p.copy()
            up[i] += h
            dn[i] -= h
            fd = (model(up) - model(dn)) / (2 * h)
            scale = max(np.max(np.abs(fd)), 1e-3)
            worst = max(worst, np.max(np.abs(jac[:, i] - fd)) / scale)
    assert worst <= 1e-5, f"max relative Jacobian mismatch {worst:.2e}"
