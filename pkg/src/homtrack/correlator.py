"""Coincidence histograms, peak integration and sliding-window tracking.

Delays are ``t_b - t_a`` with ``a`` a channel-0 tag and ``b`` a channel-1 tag.
Bin ``k`` collects delays in ``[k*w - w/2, k*w + w/2)`` so that bin 0 is centred
on zero delay; only complete bins inside ``max_lag`` are kept.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numba
import numpy as np

from .model import PeakAreas, VisibilityEstimate, visibility_from_areas
from .tagio import TagFormatError, TimeTagStream

PS_PER_NS = 1000
PS_PER_S = 10**12


@dataclass(frozen=True)
class CorrelationConfig:
    bin_width: int = 500          # ps
    max_lag: float = 700.0        # ns
    window_length: float = 30.0   # s
    window_step: float = 1.0      # s

    def __post_init__(self):
        if self.bin_width <= 0 or int(self.bin_width) != self.bin_width:
            raise ValueError("bin_width must be a positive integer number of ps")
        if self.max_lag * PS_PER_NS < 1.5 * self.bin_width:
            raise ValueError("max_lag must span at least one bin on each side")
        if not 0 < self.window_step <= self.window_length:
            raise ValueError("need 0 < window_step <= window_length")

    @property
    def half_bins(self) -> int:
        """Largest bin index ``K``; bins run from ``-K`` to ``K``."""
        w = int(self.bin_width)
        return (2 * int(round(self.max_lag * PS_PER_NS)) - w) // (2 * w)


@dataclass
class CorrelationHistogram:
    counts: np.ndarray
    bin_width: int                   # ps
    origin: int                      # delay of bin 0 centre, ps
    total_tags: tuple[int, int] = (0, 0)
    wall_span: tuple[float, float] = (0.0, 0.0)

    @property
    def delays_ps(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(len(self.counts), dtype=np.int64)

    @property
    def delays_ns(self) -> np.ndarray:
        return self.delays_ps / PS_PER_NS

    @property
    def bin_width_ns(self) -> float:
        return self.bin_width / PS_PER_NS

    def __add__(self, other: "CorrelationHistogram") -> "CorrelationHistogram":
        if (self.bin_width, self.origin, len(self.counts)) != (other.bin_width, other.origin, len(other.counts)):
            raise ValueError("histograms have different binning")
        tags = (self.total_tags[0] + other.total_tags[0], self.total_tags[1] + other.total_tags[1])
        span = (min(self.wall_span[0], other.wall_span[0]), max(self.wall_span[1], other.wall_span[1]))
        return CorrelationHistogram(self.counts + other.counts, self.bin_width, self.origin, tags, span)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delay_ps", "counts"])
            for d, c in zip(self.delays_ps.tolist(), self.counts.tolist()):
                w.writerow([d, c])

    @classmethod
    def from_csv(cls, path) -> "CorrelationHistogram":
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        delays, counts = data[:, 0], data[:, 1]
        if len(delays) < 2:
            raise ValueError(f"{path}: need at least two histogram bins")
        w = int(delays[1] - delays[0])
        if w <= 0 or np.any(np.diff(delays) != w):
            raise ValueError(f"{path}: delays are not evenly spaced")
        return cls(counts, w, int(delays[0]))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _correlate(t, ch, start, w, K, hist):
    reach = K * w + (w + 1) // 2
    for i in range(start, t.shape[0]):
        ti = t[i]
        ci = ch[i]
        j = i - 1
        while j >= 0 and ti - t[j] <= reach:
            if ch[j] != ci:
                d = ti - t[j] if ci == 1 else t[j] - ti
                k = (2 * d + w) // (2 * w)
                if -K <= k <= K:
                    hist[k + K] += 1
            j -= 1


@numba.njit(cache=True, nogil=True)
def _correlate_sliced(t, ch, w, K, origin, step, hist, up, down):
    reach = K * w + (w + 1) // 2
    n_slices = hist.shape[0]
    for i in range(t.shape[0]):
        ti = t[i]
        ci = ch[i]
        j = i - 1
        while j >= 0 and ti - t[j] <= reach:
            if ch[j] != ci:
                if ci == 1:
                    ta = t[j]
                    tb = ti
                else:
                    ta = ti
                    tb = t[j]
                k = (2 * (tb - ta) + w) // (2 * w)
                if -K <= k <= K:
                    sa = (ta - origin) // step
                    sb = (tb - origin) // step
                    if 0 <= sa < n_slices:
                        hist[sa, k + K] += 1
                        if sb == sa + 1:
                            up[sa, k + K] += 1
                        elif sb == sa - 1:
                            down[sa, k + K] += 1
            j -= 1


def _as_int64(stream: TimeTagStream) -> np.ndarray:
    return stream.timestamps.view(np.int64)


class Correlator:
    """Streaming cross-correlator with a bounded carry-over buffer.

    Feed sorted chunks; only the tags within ``max_lag`` of the newest tag are
    retained between calls.
    """

    def __init__(self, config: CorrelationConfig):
        self.config = config
        self.K = config.half_bins
        self.w = int(config.bin_width)
        self.reach = self.K * self.w + (self.w + 1) // 2
        self.counts = np.zeros(2 * self.K + 1, dtype=np.int64)
        self._t = np.empty(0, np.int64)
        self._ch = np.empty(0, np.uint8)
        self._n = [0, 0]
        self._first = None
        self._last = None

    def feed(self, chunk: TimeTagStream):
        if not len(chunk):
            return
        chunk.check_sorted()
        t = _as_int64(chunk)
        if self._last is not None and t[0] < self._last:
            raise TagFormatError("chunk starts before the end of the previous chunk")
        if self._first is None:
            self._first = int(t[0])
        self._last = int(t[-1])
        n1 = int(np.count_nonzero(chunk.channels))
        self._n[0] += len(chunk) - n1
        self._n[1] += n1
        tt = np.concatenate([self._t, t])
        cc = np.concatenate([self._ch, chunk.channels])
        _correlate(tt, cc, len(self._t), self.w, self.K, self.counts)
        keep = np.searchsorted(tt, tt[-1] - self.reach, side="left")
        self._t, self._ch = tt[keep:].copy(), cc[keep:].copy()

    def histogram(self) -> CorrelationHistogram:
        span = (0.0, 0.0)
        if self._first is not None:
            span = (self._first / PS_PER_S, self._last / PS_PER_S)
        return CorrelationHistogram(self.counts.copy(), self.w, -self.K * self.w,
                                    (self._n[0], self._n[1]), span)


def cross_correlate(tags, config: CorrelationConfig | None = None) -> CorrelationHistogram:
    """Full (all-pairs) cross-correlation histogram of channel 1 vs channel 0.

    ``tags`` is a sorted :class:`TimeTagStream` or an iterable of sorted chunks.
    """
    config = config or CorrelationConfig()
    corr = Correlator(config)
    if isinstance(tags, TimeTagStream):
        tags = [tags]
    for chunk in tags:
        corr.feed(chunk)
    return corr.histogram()


# ---------------------------------------------------------------------------
# peaks
# ---------------------------------------------------------------------------

def peak_areas(hist: CorrelationHistogram, period: float, n_max: int = 13) -> PeakAreas:
    """Integrate peak ``n`` over bins whose centres lie in ``(nT - T/2, nT + T/2]``.

    Errors are Poisson (``sqrt(area)``).  ``heights`` holds the bin containing
    ``n*T`` for each peak.
    """
    T2 = int(round(period * PS_PER_NS * 2))  # 2*T in ps, keeps T/2 integral
    if T2 <= 0:
        raise ValueError("period must be > 0")
    centres = hist.delays_ps
    w = hist.bin_width
    lo_edge, hi_edge = 2 * centres[0] - w, 2 * centres[-1] + w   # doubled units
    need = (2 * n_max + 1) * T2 // 2
    if lo_edge > -need or hi_edge < need:
        raise ValueError(
            f"histogram spans [{lo_edge / 2000:.1f}, {hi_edge / 2000:.1f}] ns, "
            f"need +/-{need / 2000:.1f} ns for n_max={n_max}")
    c2 = 2 * centres
    csum = np.concatenate([[0], np.cumsum(hist.counts)])
    areas, heights = {}, {}
    for n in range(-n_max, n_max + 1):
        lo = np.searchsorted(c2, n * T2 - T2 // 2, side="right")
        hi = np.searchsorted(c2, n * T2 + T2 // 2, side="right")
        a = float(csum[hi] - csum[lo])
        areas[n] = (a, math.sqrt(a))
        k = int(np.searchsorted(c2 + w, n * T2, side="right"))
        h = float(hist.counts[min(k, len(hist.counts) - 1)])
        heights[n] = (h, math.sqrt(h))
    return PeakAreas(areas, period, period / 2, heights)


# ---------------------------------------------------------------------------
# sliding windows
# ---------------------------------------------------------------------------

@dataclass
class VisibilityPoint:
    window_start: float
    estimate: VisibilityEstimate
    fit: object | None = None


@dataclass
class VisibilitySeries:
    points: list[VisibilityPoint] = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def starts(self) -> np.ndarray:
        return np.array([p.window_start for p in self.points])

    @property
    def visibility(self) -> np.ndarray:
        return np.array([p.estimate.visibility for p in self.points])

    @property
    def visibility_err(self) -> np.ndarray:
        return np.array([p.estimate.visibility_err for p in self.points])

    @property
    def v_factor(self) -> np.ndarray:
        return np.array([p.estimate.v_factor for p in self.points])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window_start_s", "visibility", "visibility_err", "v_factor", "v_factor_err"])
            for p in self.points:
                e = p.estimate
                w.writerow([f"{p.window_start:.6f}", f"{e.visibility:.6f}", f"{e.visibility_err:.6f}",
                            f"{e.v_factor:.6f}", f"{e.v_factor_err:.6f}"])


def acquisition_span(tags: TimeTagStream, step_ps: int) -> tuple[int, int]:
    """Window origin and end (ps).

    The origin is the first tag rounded down to the step grid; the end is the
    declared acquisition duration when the stream header carries one,
    otherwise the last tag.
    """
    if not len(tags):
        return 0, 0
    t = _as_int64(tags)
    origin = (int(t[0]) // step_ps) * step_ps
    duration = tags.header.get("duration_s")
    end = int(round(duration * PS_PER_S)) if duration is not None else int(t[-1])
    return origin, max(end, int(t[-1]))


def iter_window_histograms(tags: TimeTagStream, config: CorrelationConfig,
                           span: tuple[int, int] | None = None) -> Iterator[tuple[float, CorrelationHistogram]]:
    """Histograms of tags inside ``[start, start + window_length)`` for each window.

    Per-step partial histograms are accumulated once; each window is obtained
    from the previous one by adding the leading step and dropping the trailing
    one, with an exact correction for pairs straddling the window edges.
    """
    tags.check_sorted()
    step = int(round(config.window_step * PS_PER_S))
    length = int(round(config.window_length * PS_PER_S))
    if length % step:
        raise ValueError("window_length must be a whole multiple of window_step")
    m = length // step
    K, w = config.half_bins, int(config.bin_width)
    if K * w + w > step:
        raise ValueError("window_step must exceed max_lag")
    origin, end = span if span is not None else acquisition_span(tags, step)
    n_windows = (end - origin - length) // step + 1 if end - origin >= length else 0
    if n_windows <= 0:
        return
    n_slices = n_windows + m - 1
    nb = 2 * K + 1
    hist = np.zeros((n_slices, nb), np.int64)
    up = np.zeros((n_slices, nb), np.int64)
    down = np.zeros((n_slices, nb), np.int64)
    _correlate_sliced(_as_int64(tags), tags.channels, w, K, origin, step, hist, up, down)

    t = _as_int64(tags)
    edges = origin + step * np.arange(n_slices + 1, dtype=np.int64)
    idx = np.searchsorted(t, edges, side="left")
    n1_cum = np.concatenate([[0], np.cumsum(tags.channels, dtype=np.int64)])

    window = hist[:m].sum(axis=0) - up[m - 1] - down[0]
    for k in range(n_windows):
        if k:
            window += hist[k + m - 1] - hist[k - 1]
            window += up[k + m - 2] - up[k + m - 1]
            window += down[k - 1] - down[k]
        lo, hi = idx[k], idx[k + m]
        n1 = int(n1_cum[hi] - n1_cum[lo])
        start = int(edges[k])
        yield start / PS_PER_S, CorrelationHistogram(
            window.copy(), w, -K * w, (int(hi - lo) - n1, n1),
            (start / PS_PER_S, (start + length) / PS_PER_S))


def sliding_visibility(tags: TimeTagStream, config: CorrelationConfig, period: float,
                       n_max: int = 13, exclude=frozenset({-1, 1}),
                       span: tuple[int, int] | None = None,
                       fit: Callable[[CorrelationHistogram], object] | None = None) -> VisibilitySeries:
    """Visibility of every ``window_length`` window shifted by ``window_step``.

    Windows without side-peak coincidences carry NaN estimates.
    """
    n_fit = int((config.half_bins * config.bin_width / PS_PER_NS) / period - 0.5)
    n_max = min(n_max, n_fit)
    series = VisibilitySeries()
    for start, h in iter_window_histograms(tags, config, span):
        try:
            est = visibility_from_areas(peak_areas(h, period, n_max), exclude)
        except ValueError:
            if h.counts.sum() and n_max >= 2:
                side = peak_areas(h, period, n_max)
                if any(a for n, (a, _) in side.areas.items() if abs(n) > 1 and n not in exclude):
                    raise
            est = VisibilityEstimate(math.nan, math.nan, math.nan, math.nan)
        series.points.append(VisibilityPoint(start, est, fit(h) if fit else None))
    return series
