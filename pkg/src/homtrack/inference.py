"""Weighted least-squares fits of scans and coincidence histograms."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, signal

from .correlator import CorrelationHistogram, peak_areas
from .model import g2_hbt_model, g2_hom_eval, g2_hom_jacobian

RESOLUTION_MODES = ("full", "bin", "none")
HOM_PARAMS = ("detuning", "v_factor", "t1_1", "t1_2", "t2_1", "t2_2", "sigma_joint", "amplitude", "offset")
UNIDENTIFIABLE_BELOW_MHZ = 100.0


class FitError(RuntimeError):
    """The optimiser failed or the data cannot constrain the model."""


# ---------------------------------------------------------------------------
# Lorentzian scans
# ---------------------------------------------------------------------------

@dataclass
class LorentzianFit:
    center: float
    fwhm: float
    amplitude: float
    offset: float
    covariance: np.ndarray
    chi2_per_dof: float = math.nan

    @property
    def errors(self) -> np.ndarray:
        return np.array([_std(self.covariance, i) for i in range(4)])


def _lorentz(p, f):
    c, fwhm, a, off = p
    hw = 0.5 * fwhm
    den = (f - c) ** 2 + hw**2
    return off + a * hw**2 / den


def _lorentz_jac(p, f):
    c, fwhm, a, off = p
    hw = 0.5 * fwhm
    x = f - c
    den = x**2 + hw**2
    j = np.empty((f.size, 4))
    j[:, 0] = a * hw**2 * 2 * x / den**2
    j[:, 1] = a * (hw * x**2 / den**2)            # d/dfwhm = 0.5 * d/dhw
    j[:, 2] = hw**2 / den
    j[:, 3] = 1.0
    return j


def fit_lorentzian(freqs, counts) -> LorentzianFit:
    """Fit ``offset + amplitude * hw^2/((f - center)^2 + hw^2)`` with Poisson weights."""
    f = np.asarray(freqs, dtype=float)
    y = np.asarray(counts, dtype=float)
    if f.size < 8:
        raise ValueError("need at least 8 scan points")
    if np.ptp(y) == 0:
        raise FitError("degenerate scan: counts are flat")
    sig = np.sqrt(np.maximum(y, 1.0))
    smooth = np.convolve(y, np.ones(3) / 3, mode="same")
    off0 = float(np.percentile(y, 10))
    a0 = float(smooth.max() - off0)
    c0 = float(f[np.argmax(smooth)])
    step = abs(f[1] - f[0])
    w0 = max(2 * step, step * np.count_nonzero(smooth > off0 + a0 / 2))
    res = optimize.least_squares(
        lambda p: (_lorentz(p, f) - y) / sig, [c0, w0, a0, off0],
        jac=lambda p: _lorentz_jac(p, f) / sig[:, None],
        bounds=([f.min(), step / 10, 0, -np.inf], [f.max(), 10 * np.ptp(f), np.inf, np.inf]),
        method="trf", x_scale="jac", ftol=1e-12, xtol=1e-12, gtol=1e-12, max_nfev=200)
    if res.status <= 0:
        raise FitError(f"Lorentzian fit did not converge: {res.message}")
    c, fwhm, a, off = res.x
    if a <= 0:
        raise FitError("no line found in scan")
    if np.ptp(f) <= 2 * fwhm:
        raise FitError("scan does not span twice the fitted linewidth")
    cov = _covariance(res.jac)
    dof = max(1, f.size - 4)
    return LorentzianFit(float(c), float(fwhm), float(a), float(off), cov, float(2 * res.cost / dof))


@dataclass
class WanderingStats:
    sigma: float
    sigma_err: float
    mean: float
    counts: np.ndarray
    edges: np.ndarray


def wandering_stats(fits, bins=10) -> WanderingStats:
    """Spread of fitted line centres with a jackknife error on the std."""
    centers = np.array([f.center for f in fits], dtype=float)
    n = centers.size
    if n < 10:
        raise ValueError(f"need at least 10 fitted rows, got {n}")
    sigma = float(np.std(centers, ddof=1))
    loo = np.array([np.std(np.delete(centers, i), ddof=1) for i in range(n)])
    err = float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    counts, edges = np.histogram(centers, bins=bins)
    return WanderingStats(sigma, err, float(centers.mean()), counts, edges)


# ---------------------------------------------------------------------------
# histogram models
# ---------------------------------------------------------------------------

class BinnedModel:
    """Maps a model sampled on a fine delay grid to expected counts per bin.

    ``resolution``: ``"full"`` integrates over each bin and convolves with the
    Gaussian timing jitter of the delay, ``"bin"`` only integrates over bins,
    ``"none"`` samples the model at bin centres.
    """

    def __init__(self, centers_ns, bin_width_ns, jitter_ns=0.0, resolution="full", n_sub=10):
        if resolution not in RESOLUTION_MODES:
            raise ValueError(f"resolution must be one of {RESOLUTION_MODES}")
        self.centers = np.asarray(centers_ns, dtype=float)
        self.w = float(bin_width_ns)
        self.resolution = resolution
        if resolution == "none":
            self.n_sub, self.pad, self.kernel = 1, 0, None
            self.grid = self.centers
            return
        self.n_sub = n_sub
        h = self.w / n_sub
        sigma = jitter_ns if resolution == "full" else 0.0
        self.pad = int(math.ceil(6 * sigma / h)) if sigma > 0 else 0
        sub = (np.arange(n_sub) + 0.5) * h - self.w / 2
        fine = (self.centers[:, None] + sub[None, :]).ravel()
        if self.pad:
            ext = h * np.arange(1, self.pad + 1)
            fine = np.concatenate([fine[0] - ext[::-1], fine, fine[-1] + ext])
            x = h * np.arange(-self.pad, self.pad + 1)
            k = np.exp(-0.5 * (x / sigma) ** 2)
            self.kernel = k / k.sum()
        else:
            self.kernel = None
        self.grid = fine

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Reduce fine-grid ``values`` (first axis) to bins."""
        if self.resolution == "none":
            return values
        if self.kernel is not None:
            k = self.kernel if values.ndim == 1 else self.kernel[:, None]
            values = signal.fftconvolve(values, k, mode="valid", axes=0)
        shape = (self.centers.size, self.n_sub) + values.shape[1:]
        return values.reshape(shape).mean(axis=1)


def _covariance(jac: np.ndarray) -> np.ndarray:
    """``(J^T J)^-1`` of a weighted Jacobian.

    Columns with no local sensitivity (a parameter pinned where its derivative
    vanishes, such as a zero linewidth broadening) get infinite variance and
    are left out of the inversion of the others.
    """
    n = jac.shape[1]
    norms = np.linalg.norm(jac, axis=0)
    live = norms > 1e-10 * max(norms.max(initial=0.0), 1e-300)
    cov = np.zeros((n, n))
    cov[~live, :] = np.nan
    cov[:, ~live] = np.nan
    cov[~live, ~live] = np.inf
    if live.any():
        cov[np.ix_(live, live)] = np.linalg.pinv(jac[:, live].T @ jac[:, live])
    return cov


def _std(cov: np.ndarray, i: int) -> float:
    v = cov[i, i]
    return math.sqrt(v) if np.isfinite(v) and v >= 0 else math.inf


# ---------------------------------------------------------------------------
# HBT
# ---------------------------------------------------------------------------

@dataclass
class HbtFitResult:
    t1: float
    t1_err: float
    g2_zero_area: float
    g2_zero_err: float
    amplitude: float
    offset: float
    chi2_per_dof: float


def _poisson_sigma(y):
    return np.sqrt(np.maximum(y, 1.0))


def fit_hbt(hist: CorrelationHistogram, period: float, jitter: float = 0.0,
            n_max: int = 13, resolution: str = "full", t1_guess: float = 4.0) -> HbtFitResult:
    """Lifetime from the side peaks and the normalised zero-delay area.

    ``jitter`` is the per-detector timing std (ps); the delay jitter is
    ``sqrt(2)`` times larger.  The zero-delay area is normalised to the mean of
    all other peaks.
    """
    x = hist.delays_ns
    y = hist.counts.astype(float)
    side = np.abs(x) > period / 2
    if np.count_nonzero(np.abs(x) > period / 2 + 0.0) < 5 * period / hist.bin_width_ns:
        raise ValueError("need at least 5 side peaks")
    # the jitter convolution needs the contiguous grid; the central peak is dropped afterwards
    bm = BinnedModel(x, hist.bin_width_ns, math.sqrt(2) * jitter / 1000, resolution)
    ys = y[side]

    def model(p):
        t1, a, off = p
        return (a * bm.apply(g2_hbt_model(bm.grid, t1, period, "peak")) + off)[side]

    a0 = max(1.0, float(np.percentile(ys, 99)))
    p0 = [t1_guess, a0, float(np.percentile(ys, 5))]
    sig = _poisson_sigma(ys)
    # data-based weights first, then twice with the model as the variance
    for _ in range(3):
        res = optimize.least_squares(lambda p: (model(p) - ys) / sig, p0,
                                     bounds=([0.05, 0, -np.inf], [period, np.inf, np.inf]),
                                     method="trf", x_scale="jac", max_nfev=400)
        if res.status <= 0:
            raise FitError(f"HBT fit did not converge: {res.message}")
        p0 = res.x
        sig = _poisson_sigma(model(res.x))
    cov = _covariance(res.jac)
    n_max = min(n_max, int(x.max() / period - 0.5))
    pa = peak_areas(hist, period, n_max)
    others = [v for n, v in pa.areas.items() if n != 0]
    m = sum(a for a, _ in others) / len(others)
    if m <= 0:
        raise FitError("no side-peak counts")
    a0c = pa.areas[0][0]
    g0 = a0c / m
    var_m = sum(a for a, _ in others) / len(others) ** 2
    g0_err = math.sqrt(a0c / m**2 + a0c**2 / m**4 * var_m)
    dof = max(1, ys.size - 3)
    chi2 = float(np.sum((ys - model(res.x)) ** 2 / sig**2))
    return HbtFitResult(float(res.x[0]), _std(cov, 0), g0, g0_err,
                        float(res.x[1]), float(res.x[2]), chi2 / dof)


# ---------------------------------------------------------------------------
# HOM
# ---------------------------------------------------------------------------

@dataclass
class HomFitResult:
    detuning: float
    v_factor: float
    t1_1: float
    t1_2: float
    t2_1: float
    t2_2: float
    sigma_joint: float
    amplitude: float
    offset: float
    errors: dict
    chi2_per_dof: float
    free: list
    covariance: np.ndarray
    resolution: str = "full"
    resolution_limited: bool = False
    detuning_identifiable: bool = True
    alias_delta_chi2: float = math.inf
    detuning_interval: tuple = (math.nan, math.nan)

    def value(self, name):
        return getattr(self, name)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["covariance"] = [[float(c) if math.isfinite(c) else None for c in row] for row in self.covariance]
        d["errors"] = {k: (v if math.isfinite(v) else None) for k, v in self.errors.items()}
        if not math.isfinite(d["alias_delta_chi2"]):
            d["alias_delta_chi2"] = None
        d["detuning_interval"] = [v if math.isfinite(v) else None for v in self.detuning_interval]
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "value", "error"])
            for name in HOM_PARAMS:
                err = self.errors.get(name, 0.0)
                w.writerow([name, f"{getattr(self, name):.9g}", f"{err:.6g}"])
            w.writerow(["chi2_per_dof", f"{self.chi2_per_dof:.6g}", ""])
            w.writerow(["resolution_limited", int(self.resolution_limited), ""])
            w.writerow(["detuning_identifiable", int(self.detuning_identifiable), ""])


class HomHistogramModel:
    """Expected counts per bin from the distinct-emitter HOM function.

    ``counts = amplitude * g2(delay) + offset`` reduced to bins by
    :class:`BinnedModel`.  Parameters are handled as the full vector ordered
    like :data:`HOM_PARAMS`.
    """

    def __init__(self, centers_ns, bin_width_ns, period, jitter_ns=0.0, resolution="full", n_sub=10):
        self.period = period
        self.bm = BinnedModel(centers_ns, bin_width_ns, jitter_ns, resolution, n_sub)

    def __call__(self, full):
        d, v, t11, t12, t21, t22, s, a, off = full
        val = g2_hom_eval(self.bm.grid, t11, t12, t21, t22, s, d, v, self.period)
        return a * self.bm.apply(val) + off

    def jacobian(self, full):
        d, v, t11, t12, t21, t22, s, a, off = full
        val, jac = g2_hom_jacobian(self.bm.grid, t11, t12, t21, t22, s, d, v, self.period)
        both = self.bm.apply(np.column_stack([val, jac]))
        out = np.empty((both.shape[0], 9))
        out[:, :7] = a * both[:, 1:]
        out[:, 7] = both[:, 0]
        out[:, 8] = 1.0
        return a * both[:, 0] + off, out


_LOWER = {"detuning": 0.0, "v_factor": 0.0, "t1_1": 0.1, "t1_2": 0.1, "t2_1": 0.05, "t2_2": 0.05,
          "sigma_joint": 0.0, "amplitude": 0.0, "offset": -np.inf}
_UPPER = {"v_factor": 1.0, "t1_1": 50.0, "t1_2": 50.0, "t2_1": 200.0, "t2_2": 200.0,
          "sigma_joint": 5000.0, "amplitude": np.inf, "offset": np.inf}


class _Parametrisation:
    """Free parameter groups; tied members share one free value."""

    def __init__(self, fixed: dict):
        unknown = set(fixed) - set(HOM_PARAMS)
        if unknown:
            raise ValueError(f"cannot fix unknown parameters {sorted(unknown)}")
        self.fixed = dict(fixed)
        groups = []
        for a, b in (("t1_1", "t1_2"), ("t2_1", "t2_2")):
            if a not in fixed and b not in fixed:
                groups.append((a, b))
        tied = {m for g in groups for m in g}
        for name in HOM_PARAMS:
            if name not in fixed and name not in tied:
                groups.append((name,))
        order = {n: i for i, n in enumerate(HOM_PARAMS)}
        self.groups = sorted(groups, key=lambda g: order[g[0]])
        self.index = [[order[m] for m in g] for g in self.groups]

    @property
    def names(self):
        return ["_".join(g) if len(g) == 1 else g[0].rsplit("_", 1)[0] for g in self.groups]

    def full(self, free, base):
        x = np.array([base[n] for n in HOM_PARAMS], dtype=float)
        for n, val in self.fixed.items():
            x[HOM_PARAMS.index(n)] = val
        for idx, val in zip(self.index, free):
            x[idx] = val
        return x

    def initial(self, base):
        return np.array([base[g[0]] for g in self.groups], dtype=float)

    def reduce(self, jac_full):
        return np.column_stack([jac_full[:, idx].sum(axis=1) for idx in self.index])

    def bounds(self, upper_detuning):
        lo = [_LOWER[g[0]] for g in self.groups]
        hi = [upper_detuning if g[0] == "detuning" else _UPPER[g[0]] for g in self.groups]
        return lo, hi


def _run(model, y, sig, par, base, upper_detuning, max_nfev, rows=None):
    """Fit ``model`` to ``y[rows]``; the model's bins must already match ``rows``."""
    rows = slice(None) if rows is None else rows
    ys, ss = y[rows], sig[rows]

    def resid(free):
        return (model(par.full(free, base)) - ys) / ss

    def jac(free):
        _, jf = model.jacobian(par.full(free, base))
        return par.reduce(jf) / ss[:, None]

    lo, hi = par.bounds(upper_detuning)
    lo_a, hi_a = np.array(lo), np.array(hi)
    margin = 1e-9 * np.where(np.isfinite(hi_a - lo_a), hi_a - lo_a, 1.0)
    x0 = np.minimum(np.maximum(par.initial(base), lo_a + margin), hi_a - margin)
    return optimize.least_squares(resid, x0, jac=jac, bounds=(lo, hi), method="trf",
                                  x_scale="jac", ftol=1e-12, xtol=1e-12, gtol=1e-12,
                                  max_nfev=max_nfev)


def _values(par, res, base):
    full = par.full(res.x, base)
    return dict(zip(HOM_PARAMS, full))


def _side_estimates(x, y, period, t1_guess):
    """Amplitude, offset and lifetime from the non-central peaks."""
    far = np.abs(x) > period / 2
    frac = np.abs(np.mod(x + period / 2, period) - period / 2)   # distance to nearest peak
    tops = far & (frac <= 0.26)
    gaps = far & (frac >= 0.45 * period)
    off = float(np.median(y[gaps])) if np.any(gaps) else 0.0
    amp = max(1.0, float(np.mean(y[tops])) - off) if np.any(tops) else max(1.0, float(y.max()))
    # side-peak area / height gives 2*t1 for exponential peaks
    area = np.sum(np.clip(y[far] - off, 0, None)) * (x[1] - x[0])
    n_peaks = max(1, int(round(np.ptp(x[far]) / period)))
    t1 = area / n_peaks / (2 * amp) if amp > 0 else t1_guess
    if not 0.3 < t1 < 0.5 * period:
        t1 = t1_guess
    return amp, off, t1


def _refine(model, y, par, start, upper, max_nfev, reweight=2):
    """Fit with data-based weights, then re-fit with weights from the model.

    Weights from the observed counts bias peak shapes low when bins hold few
    counts; using ``max(model, 1)`` as the variance removes that bias.
    Returns ``(values, result, chi2)`` with Pearson's chi-square.
    """
    sig = _poisson_sigma(y)
    vals = start
    for _ in range(reweight + 1):
        r = _run(model, y, sig, par, vals, upper, max_nfev)
        vals = _values(par, r, vals)
        mu = model(par.full(r.x, vals))
        sig = _poisson_sigma(mu)
    chi2 = float(np.sum((y - mu) ** 2 / np.maximum(mu, 1.0)))
    return vals, r, chi2


def _profile_interval(model, y, fixed, vals, upper, err0, max_nfev=100):
    """Detuning offsets ``(below, above)`` where the profile chi-square rises by 1.

    Weights are frozen at the best-fit model so the profile is one weighted
    least-squares surface; the other free parameters are re-minimised at every
    detuning, bounds included.
    """
    sig = _poisson_sigma(model(np.array([vals[n] for n in HOM_PARAMS])))
    par = _Parametrisation(fixed)
    r = _run(model, y, sig, par, vals, upper, max_nfev)
    vals = _values(par, r, vals)
    c0, d0 = 2 * r.cost, vals["detuning"]

    def rise(d):
        p = _Parametrisation(dict(fixed, detuning=d))
        return 2 * _run(model, y, sig, p, dict(vals, detuning=d), upper, max_nfev).cost - c0

    step0 = err0 if math.isfinite(err0) and err0 > 0 else 0.01 * upper
    out = []
    for sign, room in ((-1, d0), (1, upper - d0)):
        a, fa, b = 0.0, 0.0, min(step0, room)
        fb = rise(d0 + sign * b) if b > 0 else 0.0
        while fb < 1 and b < room and b < 20 * step0:
            a, fa, b = b, fb, min(2 * b, room)
            fb = rise(d0 + sign * b)
        if fb < 1:
            out.append(b)
            continue
        for _ in range(8):
            m = a + (b - a) * (1 - fa) / (fb - fa) if fb > fa else 0.5 * (a + b)
            m = min(max(m, a + 0.05 * (b - a)), b - 0.05 * (b - a))
            fm = rise(d0 + sign * m)
            if abs(fm - 1) < 0.02:
                a = b = m
                break
            if fm < 1:
                a, fa = m, fm
            else:
                b, fb = m, fm
        out.append(0.5 * (a + b))
    return out[0], out[1]


def fit_hom(hist: CorrelationHistogram, period: float, fixed: dict | None = None,
            jitter: float = 0.0, resolution: str = "full", detuning_step: float = 25.0,
            detuning_grid=None, n_sub: int = 10, max_nfev: int = 300) -> HomFitResult:
    """Fit the distinct-emitter HOM function to a coincidence histogram.

    ``fixed`` maps names in :data:`HOM_PARAMS` to values held constant.  When
    neither lifetime (or neither coherence time) is fixed the pair is fitted as
    one shared value: the model is symmetric under exchanging the emitters and
    depends on the coherence times only through ``1/t2_1 + 1/t2_2``.

    The detuning is multi-started on a grid up to the Nyquist frequency of the
    bins, ``1/(2*bin_width)``; the fitted value is flagged
    ``resolution_limited`` when it sits at that limit or when its mirror
    image about the limit fits statistically as well.  The detuning error is
    the half-width of the profile-likelihood interval (delta chi2 = 1, kept in
    ``detuning_interval``), which stays honest when other parameters sit on
    their bounds.  ``jitter`` is the per-detector timing std in ps.
    """
    fixed = dict(fixed or {})
    x = hist.delays_ns
    y = hist.counts.astype(float)
    if x.max() < 4.5 * period or x.min() > -4.5 * period:
        raise ValueError("histogram must contain the central peak and at least 4 side peaks on each side")
    sig = _poisson_sigma(y)
    f_nyq = 1e3 / (2 * hist.bin_width_ns)
    # sampled at bin centres the model cannot tell a detuning from its mirror about f_nyq
    upper = f_nyq if resolution == "none" else 2 * f_nyq
    model = HomHistogramModel(x, hist.bin_width_ns, period, math.sqrt(2) * jitter / 1000, resolution, n_sub)

    amp, off, t1 = _side_estimates(x, y, period, fixed.get("t1_1", fixed.get("t1_2", 4.0)))
    base = {"detuning": 0.0, "v_factor": 0.9, "t1_1": t1, "t1_2": t1, "t2_1": 1.3 * t1, "t2_2": 1.3 * t1,
            "sigma_joint": 30.0, "amplitude": amp, "offset": off}
    base.update(fixed)

    # lifetime, amplitude and offset with the interference terms at their start values
    side_par = _Parametrisation({k: base[k] for k in HOM_PARAMS
                                 if k not in ("t1_1", "t1_2", "amplitude", "offset") or k in fixed})
    r = _run(model, y, sig, side_par, base, upper, 100)
    base.update(_values(side_par, r, base))

    # multi-start on the detuning, central peak only, shape parameters free
    central = np.abs(x) <= period / 2
    central_model = HomHistogramModel(x[central], hist.bin_width_ns, period,
                                      math.sqrt(2) * jitter / 1000, resolution, min(n_sub, 4))
    shape_fixed = {k: base[k] for k in ("t1_1", "t1_2", "amplitude", "offset")}
    shape_fixed.update(fixed)
    shape_par = _Parametrisation(shape_fixed)
    if detuning_grid is None:
        detuning_grid = np.arange(0.0, f_nyq + 1e-9, detuning_step)
    if "detuning" in fixed:
        detuning_grid = [fixed["detuning"]]
    trials = []
    for d0 in detuning_grid:
        b = dict(base, detuning=float(d0))
        r = _run(central_model, y, sig, shape_par, b, upper, 20, central)
        trials.append((r.cost, _values(shape_par, r, b)))
    trials.sort(key=lambda t: t[0])

    par = _Parametrisation(fixed)
    best, tried = None, []
    for _, start in trials[:3]:
        if any(abs(start["detuning"] - d) < 5.0 for d in tried):
            continue
        tried.append(start["detuning"])
        cand = _refine(model, y, par, start, upper, max_nfev)
        if best is None or cand[2] < best[2]:
            best = cand
    vals, best_res, chi2 = best

    # profile test at the mirror frequency about the Nyquist limit
    alias_dchi2 = math.inf
    if resolution != "none" and "detuning" not in fixed:
        mirror = 2 * f_nyq - vals["detuning"]
        if 0 <= mirror <= upper and abs(mirror - vals["detuning"]) > 0.05 * f_nyq:
            mpar = _Parametrisation(dict(fixed, detuning=mirror))
            start = dict(vals, detuning=mirror, v_factor=0.95)
            alt_chi2 = _refine(model, y, mpar, start, upper, 60, reweight=1)[2]
            alias_dchi2 = alt_chi2 - chi2
            if alias_dchi2 < 0:
                alt = _refine(model, y, par, dict(start, detuning=mirror), upper, max_nfev)
                if alt[2] < chi2:
                    vals, best_res, chi2 = alt
                    alias_dchi2 = -alias_dchi2
    resolution_limited = bool(vals["detuning"] >= 0.95 * f_nyq or alias_dchi2 < 4.0)

    cov = _covariance(best_res.jac)
    errs = {n: 0.0 for n in HOM_PARAMS}
    for i, g in enumerate(par.groups):
        e = _std(cov, i)
        for m in g:
            errs[m] = e
    interval = (math.nan, math.nan)
    if "detuning" not in fixed:
        below, above = _profile_interval(model, y, fixed, vals, upper, errs["detuning"])
        interval = (vals["detuning"] - below, vals["detuning"] + above)
        errs["detuning"] = 0.5 * (below + above)
    dof = max(1, y.size - len(par.groups))
    d, d_err = vals["detuning"], errs["detuning"]
    identifiable = bool(d >= UNIDENTIFIABLE_BELOW_MHZ and d_err < 0.5 * d)
    return HomFitResult(
        **{n: float(vals[n]) for n in HOM_PARAMS}, errors=errs,
        chi2_per_dof=float(chi2 / dof), free=par.names, covariance=cov,
        resolution=resolution, resolution_limited=resolution_limited,
        detuning_identifiable=identifiable, alias_delta_chi2=float(alias_dchi2),
        detuning_interval=(float(interval[0]), float(interval[1])))


def propagate_visibility_error(a0: float, side_counts) -> float:
    """First-order Poisson error of ``V = (<A_n> - 2 A0)/<A_n>`` from raw counts."""
    side = np.asarray(side_counts, dtype=float)
    if a0 < 0 or np.any(side < 0):
        raise ValueError("counts must be >= 0")
    m = side.mean() if side.size else 0.0
    if m <= 0:
        raise ValueError("side peaks have zero counts")
    n = side.size
    return float(2.0 * math.sqrt(a0 / m**2 + (a0 / m**2) ** 2 * side.sum() / n**2))
