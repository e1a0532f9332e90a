"""Seeded Monte Carlo of pulsed single-photon emitters seen by two detectors.

Three configurations are supported: HBT (one emitter split 50/50), HOM_SINGLE
(consecutive photons of one emitter overlapped in an unbalanced
interferometer with a delay of one period) and HOM_DISTINCT (one photon
stream per input port of the beam splitter).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numba
import numpy as np

from .model import TWO_PI_MHZ_NS, EmitterParams
from .tagio import TimeTagStream

PS_PER_NS = 1000
NS_PER_S = 1e9

#: wander std (MHz) under non-resonant pumping, keyed by pump power (uW)
PUMP_WANDER_MHZ = {0.0: 8.0, 2.0: 84.0, 5.0: 71.0}


class Mode(str, Enum):
    HBT = "HBT"
    HOM_SINGLE = "HOM_SINGLE"
    HOM_DISTINCT = "HOM_DISTINCT"


class ConfigError(ValueError):
    """Inconsistent simulation configuration."""


@dataclass(frozen=True)
class SpectralDiffusionParams:
    sigma: float = 0.0          # MHz, stationary std of the ZPL centre
    corr_time: float = 200.0    # s

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.corr_time > 0:
            raise ValueError("corr_time must be > 0")


@dataclass
class SimConfig:
    mode: Mode = Mode.HOM_DISTINCT
    emitters: list[EmitterParams] = field(default_factory=lambda: [EmitterParams(4.0, 8.0)])
    diffusion: list[SpectralDiffusionParams] = field(default_factory=list)
    period: float = 50.0            # ns
    emission_prob: float = 1e-3     # detected photons per pulse per emitter
    duration: float = 1.0           # s
    detector_jitter: float = 0.0    # ps, Gaussian std per tag
    dead_time: float = 0.0          # ps
    background_rate: float = 0.0    # counts/s per channel
    rng_seed: int = 0
    bin_resolution: int = 1         # ps
    v_factor: float = 1.0           # mode overlap of the two input photons

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.emitters = [e if isinstance(e, EmitterParams) else EmitterParams(**e) for e in self.emitters]
        if not self.diffusion:
            self.diffusion = [SpectralDiffusionParams() for _ in self.emitters]
        self.diffusion = [d if isinstance(d, SpectralDiffusionParams) else SpectralDiffusionParams(**d)
                          for d in self.diffusion]
        self.validate()

    def validate(self):
        need = 2 if self.mode is Mode.HOM_DISTINCT else 1
        if len(self.emitters) != need:
            raise ConfigError(f"{self.mode.value} mode needs {need} emitter(s), got {len(self.emitters)}")
        if len(self.diffusion) != len(self.emitters):
            raise ConfigError("one diffusion entry per emitter is required")
        if not 0.0 <= self.emission_prob <= 1.0:
            raise ConfigError("emission_prob must lie in [0, 1]")
        if self.duration < 0:
            raise ConfigError("duration must be >= 0")
        if not self.period > 0:
            raise ConfigError("period must be > 0")
        if abs(self.period * PS_PER_NS - round(self.period * PS_PER_NS)) > 1e-6:
            raise ConfigError("period must be a whole number of ps")
        if self.detector_jitter < 0 or self.dead_time < 0 or self.background_rate < 0:
            raise ConfigError("jitter, dead_time and background_rate must be >= 0")
        if self.bin_resolution < 1 or int(self.bin_resolution) != self.bin_resolution:
            raise ConfigError("bin_resolution must be a positive integer number of ps")
        if not 0.0 <= self.v_factor <= 1.0:
            raise ConfigError("v_factor must lie in [0, 1]")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ConfigError("rng_seed must be an unsigned 64-bit integer")

    @property
    def n_slots(self) -> int:
        return int(math.floor(self.duration * NS_PER_S / self.period + 1e-9))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# spectral wander
# ---------------------------------------------------------------------------

def ou_step(current_freq, dt, params: SpectralDiffusionParams, rng):
    """Exact Ornstein-Uhlenbeck update over ``dt`` s.

    ``current_freq`` is the offset (MHz) from the mean line position.  With
    ``sigma = 0`` the process is frozen and the input is returned unchanged.
    """
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise ValueError("dt must be >= 0")
    if params.sigma == 0:
        return current_freq
    a = np.exp(-dt / params.corr_time)
    sd = params.sigma * np.sqrt(-np.expm1(-2.0 * dt / params.corr_time))
    shape = np.broadcast(np.asarray(current_freq), a).shape
    noise = rng.standard_normal(shape) if shape else rng.standard_normal()
    return current_freq * a + sd * noise


@numba.njit(cache=True)
def _ou_recursion(x0, decay, scale, z):
    out = np.empty(z.shape[0])
    x = x0
    for i in range(z.shape[0]):
        x = x * decay[i] + scale[i] * z[i]
        out[i] = x
    return out


def ou_path(times, params: SpectralDiffusionParams, rng, x0=None) -> np.ndarray:
    """OU process sampled at increasing ``times`` (s), started from stationarity.

    The first sample is drawn from the stationary law unless ``x0`` is given,
    in which case ``x0`` is the value at ``times[0]``.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.empty(0)
    if params.sigma == 0:
        return np.full(times.shape, 0.0 if x0 is None else float(x0))
    dt = np.diff(times)
    if np.any(dt < 0):
        raise ValueError("times must be non-decreasing")
    start = params.sigma * rng.standard_normal() if x0 is None else float(x0)
    z = rng.standard_normal(dt.size)
    decay = np.exp(-dt / params.corr_time)
    scale = params.sigma * np.sqrt(-np.expm1(-2.0 * dt / params.corr_time))
    return np.concatenate([[start], _ou_recursion(start, decay, scale, z)])


# ---------------------------------------------------------------------------
# detection chain
# ---------------------------------------------------------------------------

def _bernoulli_slots(rng, n_slots: int, p: float) -> np.ndarray:
    """Sorted indices of the slots (out of ``n_slots``) where a p-event occurs."""
    if p <= 0 or n_slots <= 0:
        return np.empty(0, np.int64)
    if p >= 1:
        return np.arange(n_slots, dtype=np.int64)
    parts, pos = [], -1
    mean = n_slots * p
    batch = int(mean + 6 * math.sqrt(mean) + 64)
    while pos < n_slots:
        idx = pos + np.cumsum(rng.geometric(p, size=batch), dtype=np.int64)
        parts.append(idx)
        pos = int(idx[-1])
        batch = max(64, int((n_slots - pos) * p * 1.2) + 64)
    slots = np.concatenate(parts)
    return slots[slots < n_slots]


@numba.njit(cache=True)
def _dead_time_mask(t, dead):
    keep = np.zeros(t.shape[0], np.bool_)
    last = np.int64(-(2**62))
    for i in range(t.shape[0]):
        if t[i] - last >= dead:
            keep[i] = True
            last = t[i]
    return keep



def _interference_rate(e1: EmitterParams, e2: EmitterParams) -> float:
    """``1/T2*_1 + 1/T2*_2`` in 1/ns."""
    return (1.0 / e1.t2 - 0.5 / e1.t1) + (1.0 / e2.t2 - 0.5 / e2.t1)


def _coalesce(rng, dt, detuning, rate, v):
    """True where a two-photon input exits on different detectors."""
    p_split = 0.5 * (1.0 - v * np.exp(-np.abs(dt) * rate) * np.cos(TWO_PI_MHZ_NS * detuning * dt))
    return rng.random(dt.size) < p_split


def _photon_streams(cfg: SimConfig, rng, truth: dict | None):
    """Times (ps, float) and channels of all signal photons before detection."""
    N = cfg.n_slots
    T_ps = int(round(cfg.period * PS_PER_NS))
    p = cfg.emission_prob
    times, chans = [], []

    if cfg.mode is Mode.HBT:
        e = cfg.emitters[0]
        s = _bernoulli_slots(rng, N, p)
        d = rng.exponential(e.t1 * PS_PER_NS, s.size)
        times.append(s * T_ps + d)
        chans.append(rng.integers(0, 2, s.size))

    elif cfg.mode is Mode.HOM_SINGLE:
        e = cfg.emitters[0]
        s = _bernoulli_slots(rng, N, p)
        d = rng.exponential(e.t1 * PS_PER_NS, s.size)
        arrival = s + rng.integers(0, 2, s.size)       # long arm delays by one period
        ch = rng.integers(0, 2, s.size)
        # two photons share an arrival slot only when pulses m (long) and m+1 (short) meet
        pair = np.flatnonzero(np.diff(arrival) == 0)
        if pair.size:
            dt = (d[pair + 1] - d[pair]) / PS_PER_NS
            split = _coalesce(rng, dt, 0.0, 2.0 * (1.0 / e.t2 - 0.5 / e.t1), cfg.v_factor)
            ch[pair + 1] = np.where(split, 1 - ch[pair], ch[pair])
        times.append(arrival * T_ps + d)
        chans.append(ch)

    else:
        e1, e2 = cfg.emitters
        s1 = _bernoulli_slots(rng, N, p)
        s2 = _bernoulli_slots(rng, N, p)
        d1 = rng.exponential(e1.t1 * PS_PER_NS, s1.size)
        d2 = rng.exponential(e2.t1 * PS_PER_NS, s2.size)
        ch1 = rng.integers(0, 2, s1.size)
        ch2 = rng.integers(0, 2, s2.size)
        both, i1, i2 = np.intersect1d(s1, s2, assume_unique=True, return_indices=True)
        t_s = both * (cfg.period / NS_PER_S)
        f1 = e1.center_freq + ou_path(t_s, cfg.diffusion[0], rng)
        f2 = e2.center_freq + ou_path(t_s, cfg.diffusion[1], rng)
        dt = (d2[i2] - d1[i1]) / PS_PER_NS
        split = _coalesce(rng, dt, f1 - f2, _interference_rate(e1, e2), cfg.v_factor)
        ch2[i2] = np.where(split, 1 - ch1[i1], ch1[i1])
        times += [s1 * T_ps + d1, s2 * T_ps + d2]
        chans += [ch1, ch2]
        if truth is not None:
            truth.update(pair_time_s=t_s, nu1=f1, nu2=f2)

    return np.concatenate(times), np.concatenate(chans).astype(np.uint8)


def simulate(config: SimConfig, return_truth: bool = False):
    """Simulate one acquisition; returns ``(ch0_stream, ch1_stream)``.

    With ``return_truth`` a third element carries the instantaneous emitter
    frequencies at every slot where both emitters fired (HOM_DISTINCT only).
    """
    config.validate()
    rng = np.random.default_rng(int(config.rng_seed))
    truth = {} if return_truth else None
    t, ch = _photon_streams(config, rng, truth)
    if config.detector_jitter > 0:
        t = t + rng.normal(0.0, config.detector_jitter, t.size)
    dur_ps = int(round(config.duration * 1e12))
    for c in (0, 1):
        nb = rng.poisson(config.background_rate * config.duration)
        t = np.concatenate([t, rng.uniform(0, dur_ps, nb)])
        ch = np.concatenate([ch, np.full(nb, c, np.uint8)])
    res = int(config.bin_resolution)
    ti = np.floor(t).astype(np.int64)
    ti = (ti // res) * res
    ok = ti >= 0
    ti, ch = ti[ok], ch[ok]

    header = {"sim_config": config.to_dict(), "duration_s": config.duration}
    out = []
    for c in (0, 1):
        tc = np.sort(ti[ch == c])
        if config.dead_time > 0:
            tc = tc[_dead_time_mask(tc, np.int64(math.ceil(config.dead_time)))]
        out.append(TimeTagStream(tc.astype(np.uint64), np.full(tc.size, c, np.uint8),
                                 dict(header, channel=c)))
    if return_truth:
        return out[0], out[1], truth
    return out[0], out[1]


def merged(config: SimConfig) -> TimeTagStream:
    """Both channels of :func:`simulate` as one sorted stream."""
    a, b = simulate(config)
    return TimeTagStream.merge(a, b, header={"sim_config": config.to_dict(),
                                             "duration_s": config.duration})


# ---------------------------------------------------------------------------
# excitation spectroscopy
# ---------------------------------------------------------------------------

@dataclass
class ExcitationScan:
    freqs: np.ndarray             # MHz, laser detuning axis
    counts: np.ndarray            # (n_rows, n_points)
    row_times: np.ndarray         # s
    centers: np.ndarray           # true line centre per row, MHz


def simulate_excitation_scan(emitter: EmitterParams, diffusion: SpectralDiffusionParams,
                             scan_range=(-300.0, 300.0), scan_rate: float = 40.0,
                             n_rows: int = 60, pump_power_tag: float | None = None,
                             n_points: int = 121, peak_counts: float = 150.0,
                             background: float = 2.0, noise: bool = True,
                             wander_map: dict | None = None, seed: int = 0) -> ExcitationScan:
    """Repeated laser scans across the ZPL.

    Each row is a Lorentzian of the emitter linewidth centred on the wandering
    line position at that row; rows are separated by one scan duration
    (``span/scan_rate``).  ``pump_power_tag`` (uW) replaces the wander std by
    the value from ``wander_map``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = scan_range
    freqs = np.linspace(lo, hi, n_points)
    row_dt = (hi - lo) / scan_rate
    row_times = np.arange(n_rows) * row_dt
    if pump_power_tag is not None:
        table = PUMP_WANDER_MHZ if wander_map is None else wander_map
        diffusion = SpectralDiffusionParams(table[float(pump_power_tag)], diffusion.corr_time)
    centers = emitter.center_freq + ou_path(row_times, diffusion, rng)
    hw = 0.5 * emitter.fwhm
    lam = background + peak_counts * hw**2 / ((freqs[None, :] - centers[:, None]) ** 2 + hw**2)
    counts = rng.poisson(lam).astype(float) if noise else lam
    return ExcitationScan(freqs, counts, row_times, centers)


def load_config(path) -> SimConfig:
    """Read a JSON simulation config, reporting the offending line on failure."""
    text = open(path).read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return config_from_json(raw, text, str(path))


def _line_of(text: str, key: str) -> int:
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return 1


def config_from_json(raw: dict, text: str = "", name: str = "<config>") -> SimConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}:1: top level must be an object")
    known = set(SimConfig.__dataclass_fields__)
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}:{_line_of(text, key)}: unknown field {key!r}")
    try:
        emitters = [EmitterParams(**e) for e in raw.get("emitters", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}:{_line_of(text, 'emitters')}: emitters: {exc}") from None
    try:
        diffusion = [SpectralDiffusionParams(**d) for d in raw.get("diffusion", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}:{_line_of(text, 'diffusion')}: diffusion: {exc}") from None
    args = {k: v for k, v in raw.items() if k not in ("emitters", "diffusion")}
    if emitters:
        args["emitters"] = emitters
    args["diffusion"] = diffusion
    try:
        return SimConfig(**args)
    except ConfigError as exc:
        field_name = next((k for k in raw if k in str(exc)), "mode")
        raise ConfigError(f"{name}:{_line_of(text, field_name)}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}:1: {exc}") from None
