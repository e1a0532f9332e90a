"""Laser-induced Stark tuning of two emitters into resonance."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import EmitterParams

MAX_INITIAL_DETUNING_MHZ = 100e3
TRANSCRIPT_COLUMNS = ("step", "dose", "nu1_MHz", "nu2_MHz", "measured_detuning_MHz")


@dataclass(frozen=True)
class StarkShiftParams:
    """Saturating shift ``sign * max_shift * (1 - exp(-dose/dose_scale))``.

    ``max_shift`` in GHz, dose in arbitrary cumulative units.  ``valid_range``
    is the window of plausible saturation shifts (GHz) that ``max_shift`` is
    checked against.
    """

    max_shift: float = 75.0
    dose_scale: float = 1.0
    sign: int = -1
    valid_range: tuple[float, float] = (50.0, 100.0)

    def __post_init__(self):
        if not self.max_shift > 0 or not self.dose_scale > 0:
            raise ValueError("max_shift and dose_scale must be > 0")
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")

    @property
    def in_valid_range(self) -> bool:
        lo, hi = self.valid_range
        return lo <= self.max_shift <= hi


def stark_shift(dose, params: StarkShiftParams):
    """Frequency shift in GHz after cumulative ``dose``."""
    d = np.asarray(dose, dtype=float)
    if np.any(d < 0):
        raise ValueError("dose must be >= 0")
    out = params.sign * params.max_shift * -np.expm1(-d / params.dose_scale)
    return float(out) if out.ndim == 0 else out


def _dose_for(shift_ghz: float, params: StarkShiftParams) -> float:
    """Cumulative dose that produces ``|shift_ghz|``; inf if out of reach."""
    frac = abs(shift_ghz) / params.max_shift
    if frac >= 1.0:
        return math.inf
    return -params.dose_scale * math.log1p(-frac)


@dataclass
class TuningStep:
    step: int
    dose: float                 # dose applied after this probe
    nu1: float                  # measured MHz
    nu2: float
    measured_detuning: float
    true_detuning: float
    shifted: int                # emitter that received the dose (0, 1) or -1


@dataclass
class TuningResult:
    success: bool
    steps: list[TuningStep]
    doses: tuple[float, float]
    final_detuning: float       # true MHz after the last step
    reason: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRANSCRIPT_COLUMNS)
            for s in self.steps:
                w.writerow([s.step, f"{s.dose:.9g}", f"{s.nu1:.6f}", f"{s.nu2:.6f}",
                            f"{s.measured_detuning:.6f}"])


def auto_tune(e1: EmitterParams, e2: EmitterParams, shift_params: StarkShiftParams | None = None,
              probe_noise: float = 0.0, step_dose: float = 0.05, rng=None, *,
              tolerance: float = 50.0, dose_budget: float = 5.0, max_steps: int = 500,
              probe_repeats: int = 4) -> TuningResult:
    """Alternate frequency probes and shift doses until the pair is resonant.

    Each probe measures both line centres ``probe_repeats`` times with
    Gaussian error ``probe_noise`` (MHz) and averages.  The dose goes to
    whichever emitter the shift moves toward the other, sized from the known
    saturation law to cancel the measured detuning but capped at
    ``step_dose``.  Stops when ``|measured detuning| < tolerance``; fails when
    the total dose would exceed ``dose_budget`` or after ``max_steps`` probes.
    """
    p = shift_params or StarkShiftParams()
    if step_dose <= 0 or dose_budget < 0 or probe_repeats < 1:
        raise ValueError("step_dose must be > 0, dose_budget >= 0, probe_repeats >= 1")
    if abs(e1.center_freq - e2.center_freq) > MAX_INITIAL_DETUNING_MHZ:
        raise ValueError("initial detuning exceeds 100 GHz")
    rng = np.random.default_rng(rng)
    base = (e1.center_freq, e2.center_freq)
    doses = [0.0, 0.0]

    def true_freqs():
        return tuple(base[i] + 1e3 * stark_shift(doses[i], p) for i in (0, 1))

    steps: list[TuningStep] = []
    for k in range(max_steps):
        nu = true_freqs()
        noise = rng.normal(0.0, probe_noise, (2, probe_repeats)).mean(axis=1) if probe_noise > 0 else (0.0, 0.0)
        m1, m2 = nu[0] + noise[0], nu[1] + noise[1]
        meas = m1 - m2
        if abs(meas) < tolerance:
            steps.append(TuningStep(k, 0.0, m1, m2, meas, nu[0] - nu[1], -1))
            return TuningResult(True, steps, tuple(doses), nu[0] - nu[1], "converged")
        # the emitter the shift direction moves toward the other one
        i = 0 if (meas > 0) == (p.sign < 0) else 1
        current = stark_shift(doses[i], p)
        target = _dose_for(current + p.sign * abs(meas) / 1e3, p)
        inc = min(target - doses[i], step_dose)
        if sum(doses) + inc > dose_budget:
            steps.append(TuningStep(k, 0.0, m1, m2, meas, nu[0] - nu[1], -1))
            return TuningResult(False, steps, tuple(doses), nu[0] - nu[1], "dose budget exhausted")
        steps.append(TuningStep(k, inc, m1, m2, meas, nu[0] - nu[1], i))
        doses[i] += inc
    nu = true_freqs()
    return TuningResult(False, steps, tuple(doses), nu[0] - nu[1], "step limit reached")
