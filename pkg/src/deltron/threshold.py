"""V_max distributions, the training thresholds and the recall threshold."""
from __future__ import annotations

from dataclasses import dataclass
import csv
from typing import Optional, Sequence

import numpy as np

from .kernel import KernelParams, as_matrix, batch_vmax, evaluation_length


@dataclass(frozen=True)
class Histogram:
    """Counts on bins centred at integer multiples of ``bin_width``."""

    first_bin: int
    counts: np.ndarray
    bin_width: float

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.ndim != 1 or (counts < 0).any():
            raise ValueError("counts must be a 1-d array of non-negative values")
        object.__setattr__(self, "counts", counts)

    @property
    def centers(self) -> np.ndarray:
        return (self.first_bin + np.arange(self.counts.size)) * self.bin_width

    @property
    def bin_edges(self) -> np.ndarray:
        return (self.first_bin - 0.5 + np.arange(self.counts.size + 1)) * self.bin_width

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def densities(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros_like(self.counts)
        return self.counts / (self.total * self.bin_width)

    def smoothed(self, bandwidth: Optional[float] = None) -> np.ndarray:
        """Smoothed counts.

        Without ``bandwidth``: 3-bin moving average, end bins averaging two
        bins.  With it: Gaussian kernel of that standard deviation applied to
        the binned counts, i.e. a binned kernel density estimate.
        """
        c = self.counts
        if bandwidth is not None:
            if bandwidth <= 0:
                raise ValueError("bandwidth must be positive")
            lag = self.bin_width * np.arange(-c.size + 1, c.size)
            weights = np.exp(-0.5 * (lag / bandwidth) ** 2) * self.bin_width / (np.sqrt(2 * np.pi) * bandwidth)
            return np.convolve(c, weights)[c.size - 1: 2 * c.size - 1]
        if c.size < 2:
            return c.copy()
        sums = c.copy()
        sums[1:] += c[:-1]
        sums[:-1] += c[1:]
        width = np.full(c.size, 3.0)
        width[0] = width[-1] = 2.0
        return sums / width

    def rebinned(self, first_bin: int, n_bins: int) -> "Histogram":
        """Same counts on a wider common grid."""
        if first_bin > self.first_bin or first_bin + n_bins < self.first_bin + self.counts.size:
            raise ValueError("target grid must contain the histogram")
        counts = np.zeros(n_bins)
        start = self.first_bin - first_bin
        counts[start:start + self.counts.size] = self.counts
        return Histogram(first_bin, counts, self.bin_width)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_center", "density"])
            for c, d in zip(self.centers, self.densities):
                writer.writerow([f"{c:.6g}", f"{d:.6g}"])


@dataclass(frozen=True)
class ThresholdSet:
    v_peak: float
    delta_v: float
    v_opt: Optional[float] = None

    @property
    def v_thr(self) -> float:
        return self.v_peak + self.delta_v

    @property
    def v_thr_minus(self) -> float:
        return self.v_peak - self.delta_v


@dataclass(frozen=True)
class VoptResult:
    v_opt: float
    # "crossing", "disjoint", "degenerate" or "no_crossing"
    kind: str


def histogram(values, bin_width: float = 0.1, first_bin: Optional[int] = None,
              n_bins: Optional[int] = None) -> Histogram:
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("cannot build a histogram from no values")
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    idx = np.floor(values / bin_width + 0.5).astype(np.int64)
    lo = int(idx.min()) if first_bin is None else first_bin
    hi = int(idx.max()) + 1 if n_bins is None else lo + n_bins
    if idx.min() < lo or idx.max() >= hi:
        raise ValueError("values fall outside the requested bins")
    counts = np.bincount(idx - lo, minlength=hi - lo).astype(float)
    return Histogram(lo, counts, bin_width)


def common_histograms(a, b, bin_width: float = 0.1, pad: int = 0) -> tuple[Histogram, Histogram]:
    """Histograms of two samples on one shared set of bins, ``pad`` empty bins each side."""
    both = np.concatenate([np.ravel(a), np.ravel(b)])
    idx = np.floor(both / bin_width + 0.5)
    lo, n = int(idx.min()) - pad, int(idx.max() - idx.min()) + 1 + 2 * pad
    return histogram(a, bin_width, lo, n), histogram(b, bin_width, lo, n)


def vmax_values(patterns, delays, params: KernelParams) -> np.ndarray:
    x = as_matrix(patterns) if not isinstance(patterns, np.ndarray) else np.atleast_2d(patterns)
    d = getattr(delays, "delays", delays)
    window = getattr(patterns[0], "window", float(np.nanmax(x)))
    n_samples = evaluation_length(window, float(np.max(d, initial=0.0)), params)
    return batch_vmax(x + d, n_samples, params)[0]


def vmax_distribution(patterns, delays, params: KernelParams, bin_width: float = 0.1) -> Histogram:
    if len(patterns) == 0:
        raise ValueError("empty pattern set")
    return histogram(vmax_values(patterns, delays, params), bin_width)


def estimate_vpeak(hist: Histogram, bandwidth: Optional[float] = None) -> float:
    """Centre of the highest bin after smoothing; ties go to the lower bin.

    See :meth:`Histogram.smoothed` for the meaning of ``bandwidth``.
    """
    if hist.total == 0:
        raise ValueError("histogram is empty")
    return float(hist.centers[int(np.argmax(hist.smoothed(bandwidth)))])


def reference_bandwidth(values) -> float:
    """Normal-reference kernel bandwidth, ``1.06 * sigma * n^(-1/5)``.

    ``sigma`` is the smaller of the standard deviation and the scaled
    interquartile range, which keeps multimodal samples from being
    over-smoothed.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise ValueError("need at least two values")
    q75, q25 = np.percentile(v, [75, 25])
    sigma = min(v.std(ddof=1), (q75 - q25) / 1.349)
    if sigma <= 0:
        sigma = v.std(ddof=1)
    return float(1.06 * sigma * v.size ** -0.2) if sigma > 0 else 0.0


def count_errors(learnt_vmax, background_vmax, threshold: float) -> tuple[int, int]:
    fp = int(np.count_nonzero(np.asarray(background_vmax) > threshold))
    fn = int(np.count_nonzero(np.asarray(learnt_vmax) <= threshold))
    return fp, fn


def _error_rate(learnt, background, threshold) -> float:
    fp, fn = count_errors(learnt, background, threshold)
    return fp / len(background) + fn / len(learnt)


def compute_vopt(hist_learnt: Histogram, hist_background: Histogram,
                 learnt_vmax: Optional[Sequence[float]] = None,
                 background_vmax: Optional[Sequence[float]] = None,
                 bandwidths: tuple[Optional[float], Optional[float]] = (None, None)) -> VoptResult:
    """Threshold where the smoothed learnt and background densities cross.

    Only upward crossings (background dominant below, learnt dominant above)
    are candidates, preferring those between the two modes.  When several
    remain, the one with the smallest FP + FN rate wins; the rates come from
    the raw samples when given, else from the bin centres.  ``bandwidths``
    selects the smoothing of the learnt and background histograms.
    """
    if (hist_learnt.first_bin != hist_background.first_bin
            or hist_learnt.counts.size != hist_background.counts.size
            or hist_learnt.bin_width != hist_background.bin_width):
        raise ValueError("histograms must share bin edges")
    centers = hist_learnt.centers
    if learnt_vmax is None or background_vmax is None:
        learnt_vmax = np.repeat(centers, hist_learnt.counts.astype(int))
        background_vmax = np.repeat(centers, hist_background.counts.astype(int))

    if np.array_equal(hist_learnt.densities, hist_background.densities):
        return VoptResult(estimate_vpeak(hist_background), "degenerate")

    occupied_l = np.flatnonzero(hist_learnt.counts)
    occupied_b = np.flatnonzero(hist_background.counts)
    if occupied_b.max() < occupied_l.min():
        return VoptResult(0.5 * (centers[occupied_b.max()] + centers[occupied_l.min()]), "disjoint")
    if occupied_l.max() < occupied_b.min():
        return VoptResult(0.5 * (centers[occupied_l.max()] + centers[occupied_b.min()]), "disjoint")

    w = hist_learnt.bin_width
    bw_l, bw_b = bandwidths
    diff = (hist_learnt.smoothed(bw_l) / hist_learnt.total
            - hist_background.smoothed(bw_b) / hist_background.total)
    k = np.flatnonzero((diff[:-1] < 0) & (diff[1:] >= 0))
    crossings = centers[k] + w * (-diff[k]) / (diff[k + 1] - diff[k])
    if crossings.size == 0:
        grid = hist_learnt.bin_edges
        rates = [_error_rate(learnt_vmax, background_vmax, g) for g in grid]
        return VoptResult(float(grid[int(np.argmin(rates))]), "no_crossing")

    mode_b, mode_l = estimate_vpeak(hist_background, bw_b), estimate_vpeak(hist_learnt, bw_l)
    lo, hi = min(mode_b, mode_l), max(mode_b, mode_l)
    between = crossings[(crossings >= lo) & (crossings <= hi)]
    if between.size:
        crossings = between
    rates = [_error_rate(learnt_vmax, background_vmax, c) for c in crossings]
    return VoptResult(float(crossings[int(np.argmin(rates))]), "crossing")


def vopt_from_samples(learnt_vmax, background_vmax, bin_width: float = 0.1,
                      smoothing: str = "kde") -> VoptResult:
    """:func:`compute_vopt` on raw samples.

    ``smoothing="kde"`` uses a Gaussian kernel with :func:`reference_bandwidth`
    per sample; ``"moving"`` the 3-bin moving average.
    """
    if smoothing == "kde":
        bws = (reference_bandwidth(learnt_vmax), reference_bandwidth(background_vmax))
        bws = tuple(b if b > 0 else bin_width for b in bws)
        pad = int(np.ceil(3 * max(bws) / bin_width))
    elif smoothing == "moving":
        bws, pad = (None, None), 0
    else:
        raise ValueError(f"unknown smoothing {smoothing!r}")
    h_l, h_b = common_histograms(learnt_vmax, background_vmax, bin_width, pad)
    return compute_vopt(h_l, h_b, learnt_vmax, background_vmax, bws)


def calibrate_vpeak(vmax, bin_width: float = 0.1, smoothing: str = "kde") -> float:
    """Mode of a sample of untrained ``v_max`` values."""
    bw = reference_bandwidth(vmax) if smoothing == "kde" else None
    pad = int(np.ceil(3 * bw / bin_width)) if bw else 0
    h = histogram(vmax, bin_width)
    h = h.rebinned(h.first_bin - pad, h.counts.size + 2 * pad)
    return estimate_vpeak(h, bw)
