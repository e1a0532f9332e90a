"""Closed-form photon correlation functions and visibility estimators.

Units throughout this module: times in ns, frequencies in MHz.  The only
place where the two meet is :data:`MHZ_NS`; a phase ``2*pi*f*tau`` with ``f``
in MHz and ``tau`` in ns is ``2*pi*MHZ_NS*f*tau`` radians.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import integrate

#: MHz * ns -> dimensionless cycles
MHZ_NS = 1e-3
TWO_PI_MHZ_NS = 2.0 * math.pi * MHZ_NS


class NonPhysicalWarning(UserWarning):
    """An estimator returned a value outside its physical range."""


@dataclass(frozen=True)
class EmitterParams:
    """Lifetime and coherence of one emitter.

    Give either ``t2`` or ``fwhm`` (or both, if they agree); the other one is
    derived through ``t2 = 1/(pi*fwhm)``.
    """

    t1: float
    t2: float | None = None
    fwhm: float | None = None
    center_freq: float = 0.0

    def __post_init__(self):
        if not self.t1 > 0:
            raise ValueError(f"t1 must be > 0, got {self.t1}")
        t2, fwhm = self.t2, self.fwhm
        if t2 is None and fwhm is None:
            raise ValueError("one of t2 or fwhm is required")
        if t2 is None:
            t2 = t2_from_fwhm(fwhm)
        elif fwhm is None:
            fwhm = fwhm_from_t2(t2)
        elif abs(t2 - t2_from_fwhm(fwhm)) / t2 >= 1e-9:
            raise ValueError(f"t2={t2} ns and fwhm={fwhm} MHz are inconsistent")
        if not t2 > 0:
            raise ValueError(f"t2 must be > 0, got {t2}")
        if t2 > 2.0 * self.t1 * (1 + 1e-12):
            raise ValueError(f"t2={t2} exceeds the coherence bound 2*t1={2 * self.t1}")
        object.__setattr__(self, "t2", float(t2))
        object.__setattr__(self, "fwhm", float(fwhm))

    @property
    def t2_star(self) -> float:
        return dephasing_time(self.t1, self.t2)


@dataclass(frozen=True)
class HomModelParams:
    """Parameters of the distinct-emitter HOM correlation function."""

    emitter1: EmitterParams
    emitter2: EmitterParams
    detuning: float = 0.0
    v_factor: float = 1.0
    sigma1: float = 0.0
    sigma2: float = 0.0
    period: float = 50.0

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be > 0")
        if not 0.0 <= self.v_factor <= 1.0:
            raise ValueError(f"v_factor must lie in [0, 1], got {self.v_factor}")
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ValueError("sigma1 and sigma2 must be >= 0")

    @property
    def sigma_joint(self) -> float:
        return math.hypot(self.sigma1, self.sigma2)


@dataclass
class PeakAreas:
    """Integrated coincidence peaks keyed by peak index ``n`` (delay ``n*period``).

    ``areas[n] = (area, error)``.  ``heights`` optionally holds the counts of
    the bin containing ``n*period`` (same layout), used for the v-factor.
    """

    areas: dict[int, tuple[float, float]]
    period: float
    integration_halfwidth: float
    heights: dict[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for n, (a, err) in self.areas.items():
            if a < 0:
                raise ValueError(f"peak {n} has negative area {a}")


@dataclass(frozen=True)
class VisibilityEstimate:
    visibility: float
    v_factor: float
    visibility_err: float
    v_factor_err: float


# ---------------------------------------------------------------------------
# coherence relations
# ---------------------------------------------------------------------------

def t2_from_fwhm(fwhm):
    """Coherence time (ns) of a Lorentzian line of width ``fwhm`` (MHz)."""
    fwhm = np.asarray(fwhm, dtype=float)
    if np.any(fwhm <= 0):
        raise ValueError("fwhm must be > 0")
    out = 1.0 / (math.pi * fwhm * MHZ_NS)
    return float(out) if out.ndim == 0 else out


def fwhm_from_t2(t2):
    """Inverse of :func:`t2_from_fwhm`."""
    t2 = np.asarray(t2, dtype=float)
    if np.any(t2 <= 0):
        raise ValueError("t2 must be > 0")
    out = 1.0 / (math.pi * t2 * MHZ_NS)
    return float(out) if out.ndim == 0 else out


def dephasing_time(t1: float, t2: float) -> float:
    """Pure dephasing time from ``1/t2 = 1/(2 t1) + 1/t2*``.

    Returns ``math.inf`` for a lifetime-limited emitter (``t2 == 2*t1``).
    """
    if t1 <= 0 or t2 <= 0:
        raise ValueError("t1 and t2 must be > 0")
    rate = 1.0 / t2 - 1.0 / (2.0 * t1)
    if abs(rate) <= 1e-12 / t2:
        return math.inf
    if rate < 0:
        raise ValueError(f"t2={t2} > 2*t1={2 * t1}: no finite dephasing time")
    return 1.0 / rate


def max_visibility(t1: float, t2: float) -> float:
    """Upper bound ``t2/(2 t1)`` on single-emitter HOM visibility."""
    return float(min(1.0, max(0.0, t2 / (2.0 * t1))))


def g1_envelope(tau, emitter: EmitterParams):
    """First-order coherence magnitude ``exp(-|tau|/t2)``."""
    return np.exp(-np.abs(tau) / emitter.t2)


# ---------------------------------------------------------------------------
# pulsed correlation functions
# ---------------------------------------------------------------------------

def _comb(tau, t1, period):
    """``(1 - e^{-T/t1}) * sum_k exp(-|tau + k T|/t1)`` over all integers k.

    Closed form of the infinite sum: reduce ``tau`` into one period.
    """
    u = np.mod(tau, period)
    return np.exp(-u / t1) + np.exp(-(period - u) / t1)


def _comb_dt1(tau, t1, period):
    u = np.mod(tau, period)
    w = period - u
    return (u * np.exp(-u / t1) + w * np.exp(-w / t1)) / t1**2


def g2_hbt_model(tau, t1: float, period: float, normalization: str = "area"):
    """Pulsed HBT autocorrelation of an ideal single-photon source.

    Side peaks ``exp(-|tau - kT|/t1)`` for every ``k != 0``.

    normalization
        ``"area"``: each side peak has unit area over the real line
        (prefactor ``1/(2 t1)``).
        ``"peak"``: the periodic-comb normalisation shared with
        :func:`g2_hom_distinct`, ``(1 - e^{-T/t1}) * sum_{k!=0} ...``, which gives
        side peaks of height ~1.
    """
    if t1 <= 0 or period <= 0:
        raise ValueError("t1 and period must be > 0")
    tau = np.asarray(tau, dtype=float)
    q = math.exp(-period / t1)
    comb_no_zero = _comb(tau, t1, period) - (1.0 - q) * np.exp(-np.abs(tau) / t1)
    if normalization == "peak":
        return comb_no_zero
    if normalization == "area":
        return comb_no_zero / ((1.0 - q) * 2.0 * t1)
    raise ValueError(f"unknown normalization {normalization!r}")


def _hom_parts(tau, t1_1, t1_2, t2_1, t2_2, sigma_joint, detuning, v, period):
    tau = np.asarray(tau, dtype=float)
    t1m = 0.5 * (t1_1 + t1_2)
    hbt = g2_hbt_model(tau, t1_1, period, "peak") + g2_hbt_model(tau, t1_2, period, "peak")
    cross = 2.0 * _comb(tau, t1m, period)
    env = np.exp(-np.abs(tau) * (1.0 / t2_1 + 1.0 / t2_2)
                 - 2.0 * math.pi**2 * (sigma_joint * MHZ_NS) ** 2 * tau**2)
    phase = TWO_PI_MHZ_NS * detuning * tau
    interf = 2.0 * v * env * np.cos(phase)
    return tau, hbt, cross, env, phase, interf


def g2_hom_eval(tau, t1_1, t1_2, t2_1, t2_2, sigma_joint, detuning, v, period):
    """Distinct-emitter HOM correlation from raw parameters (vectorised)."""
    _, hbt, cross, _, _, interf = _hom_parts(
        tau, t1_1, t1_2, t2_1, t2_2, sigma_joint, detuning, v, period)
    return 0.25 * (hbt + cross - interf)


def g2_hom_jacobian(tau, t1_1, t1_2, t2_1, t2_2, sigma_joint, detuning, v, period):
    """Value and partial derivatives of :func:`g2_hom_eval`.

    Returns ``(value, jac)`` with ``jac`` of shape ``(len(tau), 7)`` ordered as
    ``(detuning, v, t1_1, t1_2, t2_1, t2_2, sigma_joint)``.
    """
    tau, hbt, cross, env, phase, interf = _hom_parts(
        tau, t1_1, t1_2, t2_1, t2_2, sigma_joint, detuning, v, period)
    value = 0.25 * (hbt + cross - interf)
    atau = np.abs(tau)
    t1m = 0.5 * (t1_1 + t1_2)
    d_cross = _comb_dt1(tau, t1m, period)  # 2 * dcomb/dt1m * 1/2

    def d_hbt(t1):
        q = math.exp(-period / t1)
        e = np.exp(-atau / t1)
        return _comb_dt1(tau, t1, period) + (period / t1**2) * q * e - (1.0 - q) * (atau / t1**2) * e

    jac = np.empty(tau.shape + (7,))
    jac[..., 0] = 0.25 * 2.0 * v * env * np.sin(phase) * TWO_PI_MHZ_NS * tau
    jac[..., 1] = -0.25 * 2.0 * env * np.cos(phase)
    jac[..., 2] = 0.25 * (d_hbt(t1_1) + d_cross)
    jac[..., 3] = 0.25 * (d_hbt(t1_2) + d_cross)
    jac[..., 4] = -0.25 * interf * atau / t2_1**2
    jac[..., 5] = -0.25 * interf * atau / t2_2**2
    jac[..., 6] = 0.25 * interf * 4.0 * math.pi**2 * sigma_joint * MHZ_NS**2 * tau**2
    return value, jac


def g2_hom_distinct(tau, params: HomModelParams):
    """HOM coincidence function for photons from two distinct emitters.

    Sum of the two HBT terms, the non-interfering cross term with the mean
    lifetime of the two emitters, and the interference term damped by both
    coherence envelopes and by the slow frequency wander of each emitter.
    Side peaks have height ~1; the zero-delay value is ``(1 - v)/2`` for
    identical, Fourier-limited, resonant emitters.
    """
    e1, e2 = params.emitter1, params.emitter2
    return g2_hom_eval(tau, e1.t1, e2.t1, e1.t2, e2.t2, params.sigma_joint,
                       params.detuning, params.v_factor, params.period)


def hom_peak_area(params: HomModelParams, n: int) -> float:
    """Area of the ``n``-th peak of :func:`g2_hom_distinct` over one full period."""
    T = params.period
    lo, hi = n * T - T / 2, n * T + T / 2
    f = lambda x: float(g2_hom_distinct(x, params))
    val, _ = integrate.quad(f, lo, hi, points=[n * T], limit=400,
                            epsabs=0.0, epsrel=1e-11)
    return val


def _far_peak_index(params: HomModelParams) -> int:
    t1 = max(params.emitter1.t1, params.emitter2.t1)
    return max(2, int(math.ceil(40.0 * t1 / params.period)) + 1)


def predict_visibility(params: HomModelParams) -> float:
    """Visibility expected from the HOM model using peak areas.

    The central peak is integrated over one period around zero delay and
    normalised to a side peak far enough away for the interference term and
    the missing zero-delay HBT peak to be irrelevant.
    """
    a0 = hom_peak_area(params, 0)
    an = hom_peak_area(params, _far_peak_index(params))
    return (an - 2.0 * a0) / an


# ---------------------------------------------------------------------------
# estimators on measured peaks
# ---------------------------------------------------------------------------

def _ratio_with_error(x0, e0, side: Iterable[tuple[float, float]]):
    """``x0/mean(side)`` and its first-order error."""
    side = list(side)
    n = len(side)
    m = sum(a for a, _ in side) / n
    if m <= 0:
        raise ValueError("mean side-peak value must be > 0")
    var_m = sum(e**2 for _, e in side) / n**2
    r = x0 / m
    err = math.sqrt((e0 / m) ** 2 + (x0 / m**2) ** 2 * var_m)
    return r, err


def _side_peaks(table: Mapping[int, tuple[float, float]], exclude):
    keys = [n for n in table if abs(n) > 1 and n not in exclude]
    return [table[n] for n in sorted(keys)]


def visibility_from_areas(areas: PeakAreas, exclude=frozenset({-1, 1})) -> VisibilityEstimate:
    """Visibility ``(<A_n> - 2 A_0)/<A_n>`` from integrated peaks.

    ``<A_n>`` averages the peaks with ``|n| > 1`` not in ``exclude``.  The
    v-factor ``1 - 2 g2(0)`` uses ``areas.heights`` when present (NaN
    otherwise).  Errors are first-order propagation of the per-peak errors.
    Negative visibilities are returned as is.
    """
    if 0 not in areas.areas:
        raise ValueError("zero-delay peak missing")
    side = _side_peaks(areas.areas, exclude)
    if not side:
        raise ValueError("no side peaks with |n| > 1 to normalise to")
    a0, e0 = areas.areas[0]
    r, r_err = _ratio_with_error(a0, e0, side)
    vis, vis_err = 1.0 - 2.0 * r, 2.0 * r_err

    v, v_err = math.nan, math.nan
    if 0 in areas.heights:
        hside = _side_peaks(areas.heights, exclude)
        if hside and sum(h for h, _ in hside) > 0:
            h0, he0 = areas.heights[0]
            g0, g0_err = _ratio_with_error(h0, he0, hside)
            v, v_err = 1.0 - 2.0 * g0, 2.0 * g0_err
    return VisibilityEstimate(vis, v, vis_err, v_err)


def v_factor_from_zero(g2_hom_at_zero: float) -> float:
    """Post-selected visibility ``1 - 2 g2(0)``; negative results are kept."""
    if g2_hom_at_zero < 0:
        raise ValueError("g2(0) must be >= 0")
    v = 1.0 - 2.0 * g2_hom_at_zero
    if v < 0:
        warnings.warn(f"non-physical v-factor {v:.3f}", NonPhysicalWarning, stacklevel=2)
    return v


def polarization_visibility(g2_perp_area: float, g2_par_area: float) -> float:
    """HOM visibility from crossed vs parallel polarisation zero-delay peaks."""
    if g2_perp_area == 0:
        raise ZeroDivisionError("orthogonal-polarisation peak area is zero")
    if g2_perp_area < 0:
        raise ValueError("orthogonal-polarisation peak area must be > 0")
    return (g2_perp_area - g2_par_area) / g2_perp_area
