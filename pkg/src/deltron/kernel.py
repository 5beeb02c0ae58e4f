"""EPSP kernel, membrane-potential superposition and peak extraction.

Spike patterns are stored as float arrays where ``NaN`` marks an absent
spike.  Traces are sampled on a uniform grid starting at ``t = 0``.

Two evaluation routes exist for the membrane potential:

* :func:`membrane_potential_direct` sums the closed-form kernel for every
  spike at every grid point.  It is slow and is kept as a reference.
* :func:`membrane_potential` and :func:`batch_vmax` use the fact that each
  exponential in the kernel decays geometrically between grid points, so the
  sampled trace is the output of two first-order recursive filters.  The
  samples are identical to the direct sum up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Optional, Sequence

import numba
import numpy as np
from scipy.signal import lfilter

# spike times equal to a grid point (up to this slack) land on that point
_GRID_SLACK = 1e-9


@dataclass(frozen=True)
class KernelParams:
    v0: float = 2.12
    tau: float = 15.0
    tau_s: float = 3.75
    grid_step: float = 0.1

    def __post_init__(self):
        if not (self.tau > self.tau_s > 0):
            raise ValueError(f"need tau > tau_s > 0, got tau={self.tau}, tau_s={self.tau_s}")
        if self.v0 <= 0:
            raise ValueError(f"v0 must be positive, got {self.v0}")
        if self.grid_step <= 0:
            raise ValueError(f"grid_step must be positive, got {self.grid_step}")

    @property
    def peak_time(self) -> float:
        """Time after onset at which the kernel peaks."""
        return self.tau * self.tau_s / (self.tau - self.tau_s) * math.log(self.tau / self.tau_s)

    @property
    def peak_value(self) -> float:
        return float(epsp_kernel(self.peak_time, self))


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpikePattern:
    """One spike per afferent within ``[1, window]``; ``NaN`` is a missing spike."""

    spike_times: np.ndarray
    window: float

    def __post_init__(self):
        times = _frozen_array(
            [np.nan if t is None else t for t in np.ravel(self.spike_times).tolist()]
        )
        object.__setattr__(self, "spike_times", times)
        present = times[~np.isnan(times)]
        if present.size and (present.min() < 1 or present.max() > self.window):
            raise ValueError(f"spike times must lie in [1, {self.window}]")

    def __len__(self):
        return self.spike_times.size

    def __eq__(self, other):
        if not isinstance(other, SpikePattern):
            return NotImplemented
        return self.window == other.window and np.array_equal(
            self.spike_times, other.spike_times, equal_nan=True
        )

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.spike_times)

    @property
    def n_missing(self) -> int:
        return int(np.isnan(self.spike_times).sum())


@dataclass(frozen=True, eq=False)
class DelayVector:
    """Per-afferent delays in ms, each within ``[0, max_delay]``."""

    delays: np.ndarray
    max_delay: float = 400.0

    def __post_init__(self):
        d = _frozen_array(np.ravel(self.delays))
        object.__setattr__(self, "delays", d)
        if d.size and (np.isnan(d).any() or d.min() < 0 or d.max() > self.max_delay):
            raise ValueError(f"delays must lie in [0, {self.max_delay}]")

    def __len__(self):
        return self.delays.size

    def __eq__(self, other):
        if not isinstance(other, DelayVector):
            return NotImplemented
        return self.max_delay == other.max_delay and np.array_equal(self.delays, other.delays)

    @classmethod
    def clipped(cls, delays, max_delay: float) -> "DelayVector":
        return cls(np.clip(delays, 0.0, max_delay), max_delay)


@dataclass(frozen=True)
class MembraneTrace:
    values: np.ndarray
    grid_step: float
    t_start: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.grid_step * np.arange(self.values.size)


@dataclass(frozen=True)
class VmaxResult:
    v_max: float
    t_max: float


@dataclass(frozen=True)
class RecognitionResult:
    n_spk: int
    y: int


def epsp_kernel(t, params: KernelParams):
    """Double-exponential EPSP, zero for negative arguments."""
    t = np.asarray(t, dtype=float)
    ts = np.where(t >= 0, t, 0.0)
    out = params.v0 * (np.exp(-ts / params.tau) - np.exp(-ts / params.tau_s))
    out = np.where(t >= 0, out, 0.0)
    return out if out.ndim else float(out)


def epsp_kernel_derivative(t, params: KernelParams):
    t = np.asarray(t, dtype=float)
    ts = np.where(t >= 0, t, 0.0)
    out = params.v0 * (-np.exp(-ts / params.tau) / params.tau + np.exp(-ts / params.tau_s) / params.tau_s)
    out = np.where(t >= 0, out, 0.0)
    return out if out.ndim else float(out)


def evaluation_length(window: float, max_delay: float, params: KernelParams) -> int:
    """Number of grid samples covering ``[0, window + max_delay + 5 tau]``."""
    horizon = window + max_delay + 5.0 * params.tau
    return int(math.floor(horizon / params.grid_step + _GRID_SLACK)) + 1


def _arrivals(pattern, delays) -> tuple[np.ndarray, float]:
    if isinstance(pattern, SpikePattern):
        x, window = pattern.spike_times, pattern.window
    else:
        x = np.asarray(pattern, dtype=float)
        window = float(np.nanmax(x)) if np.isfinite(x).any() else 1.0
    d = delays.delays if isinstance(delays, DelayVector) else np.asarray(delays, dtype=float)
    if x.shape[-1] != d.shape[-1]:
        raise ValueError(f"pattern has {x.shape[-1]} afferents but {d.shape[-1]} delays were given")
    return x + d, window


def membrane_potential_direct(pattern, delays, params: KernelParams,
                              n_samples: Optional[int] = None) -> MembraneTrace:
    """Reference trace: explicit kernel sum at every grid point."""
    arrival, window = _arrivals(pattern, delays)
    d = delays.delays if isinstance(delays, DelayVector) else np.asarray(delays, dtype=float)
    if n_samples is None:
        n_samples = evaluation_length(window, float(d.max(initial=0.0)), params)
    t = params.grid_step * np.arange(n_samples)
    arrival = arrival[~np.isnan(arrival)]
    lag = t[:, None] - arrival[None, :]
    # grid points that coincide with an arrival are the kernel onset
    lag[np.abs(lag) < _GRID_SLACK * params.grid_step] = 0.0
    values = epsp_kernel(lag, params).sum(axis=1) if arrival.size else np.zeros(n_samples)
    return MembraneTrace(values, params.grid_step)


def _filter_inputs(arrivals: np.ndarray, n_samples: int, params: KernelParams):
    """Per-grid-point impulse weights for the two exponential components.

    ``arrivals`` is (P, N) with NaN for absent spikes.  Returns two (P, G)
    arrays fed to the recursive filters.
    """
    h = params.grid_step
    n_rows = arrivals.shape[0]
    rows, cols = np.nonzero(~np.isnan(arrivals))
    a = arrivals[rows, cols]
    k0 = np.ceil(a / h - _GRID_SLACK).astype(np.int64)
    offset = np.maximum(k0 * h - a, 0.0)
    keep = k0 < n_samples
    flat = rows[keep] * n_samples + k0[keep]
    size = n_rows * n_samples
    u_fall = np.bincount(flat, weights=np.exp(-offset[keep] / params.tau), minlength=size)
    u_rise = np.bincount(flat, weights=np.exp(-offset[keep] / params.tau_s), minlength=size)
    return u_fall.reshape(n_rows, n_samples), u_rise.reshape(n_rows, n_samples)


def batch_traces(arrivals: np.ndarray, n_samples: int, params: KernelParams) -> np.ndarray:
    """Sampled membrane traces for a (P, N) array of arrival times."""
    arrivals = np.atleast_2d(np.asarray(arrivals, dtype=float))
    u_fall, u_rise = _filter_inputs(arrivals, n_samples, params)
    h = params.grid_step
    fall = lfilter([1.0], [1.0, -math.exp(-h / params.tau)], u_fall, axis=-1)
    rise = lfilter([1.0], [1.0, -math.exp(-h / params.tau_s)], u_rise, axis=-1)
    return params.v0 * (fall - rise)


@numba.njit(cache=True)
def _scan_peaks(k0, w_fall, w_rise, n_samples, r_fall, r_rise, inv_tau, inv_tau_s, v0):
    # k0 rows are sorted ascending; absent spikes carry k0 == n_samples
    n_rows, n_aff = k0.shape
    v_best = np.zeros(n_rows)
    k_best = np.zeros(n_rows, dtype=np.int64)
    for p in range(n_rows):
        fall = 0.0
        rise = 0.0
        j = 0
        best = -np.inf
        kb = 0
        for k in range(n_samples):
            fall *= r_fall
            rise *= r_rise
            while j < n_aff and k0[p, j] == k:
                fall += w_fall[p, j]
                rise += w_rise[p, j]
                j += 1
            v = v0 * (fall - rise)
            if v > best:
                best = v
                kb = k
            # past the last arrival a non-positive slope stays non-positive
            if (j == n_aff or k0[p, j] >= n_samples) and rise * inv_tau_s <= fall * inv_tau:
                break
        v_best[p] = best
        k_best[p] = kb
    return v_best, k_best


def batch_vmax(arrivals: np.ndarray, n_samples: int, params: KernelParams):
    """Return ``(v_max, t_max)`` arrays, one entry per row of ``arrivals``.

    Equivalent to taking the earliest argmax of :func:`batch_traces`, without
    materialising the traces.
    """
    arrivals = np.atleast_2d(np.asarray(arrivals, dtype=float))
    h = params.grid_step
    k0 = np.ceil(arrivals / h - _GRID_SLACK)
    absent = np.isnan(k0) | (k0 >= n_samples)
    k0 = np.where(absent, n_samples, k0).astype(np.int64)
    offset = np.where(absent, 0.0, np.maximum(k0 * h - np.nan_to_num(arrivals), 0.0))
    order = np.argsort(k0, axis=1, kind="stable")
    k0 = np.take_along_axis(k0, order, axis=1)
    offset = np.take_along_axis(offset, order, axis=1)
    v_max, k_max = _scan_peaks(
        k0, np.exp(-offset / params.tau), np.exp(-offset / params.tau_s), n_samples,
        math.exp(-h / params.tau), math.exp(-h / params.tau_s),
        1.0 / params.tau, 1.0 / params.tau_s, params.v0,
    )
    return v_max, k_max * h


def membrane_potential(pattern, delays, params: KernelParams,
                       n_samples: Optional[int] = None) -> MembraneTrace:
    arrival, window = _arrivals(pattern, delays)
    if n_samples is None:
        d = delays.delays if isinstance(delays, DelayVector) else np.asarray(delays, dtype=float)
        n_samples = evaluation_length(window, float(d.max(initial=0.0)), params)
    values = batch_traces(arrival[None, :], n_samples, params)[0]
    return MembraneTrace(values, params.grid_step)


def find_vmax(trace: MembraneTrace) -> VmaxResult:
    """Earliest global maximum of the trace."""
    if trace.values.size == 0:
        raise ValueError("cannot take the maximum of an empty trace")
    k = int(np.argmax(trace.values))
    return VmaxResult(float(trace.values[k]), trace.t_start + k * trace.grid_step)


def recognize(trace: MembraneTrace, v_thr: float) -> RecognitionResult:
    """Threshold decision on a non-resetting trace.

    ``n_spk`` counts upward crossings of ``v_thr``; the pattern is recognized
    whenever at least one crossing occurs, i.e. whenever ``v_max > v_thr``.
    """
    above = trace.values > v_thr
    if not above.any():
        return RecognitionResult(0, 0)
    n_spk = int(above[0]) + int(np.count_nonzero(above[1:] & ~above[:-1]))
    return RecognitionResult(n_spk, 1)


def as_matrix(patterns: Sequence[SpikePattern]) -> np.ndarray:
    """Stack patterns into a (P, N) float array."""
    if not patterns:
        raise ValueError("empty pattern set")
    return np.vstack([p.spike_times for p in patterns])
