"""Behavioural model of the mixed-signal implementation.

Input spikes drive an EPSC with the same double-exponential shape as the
idealized EPSP.  A leaky integrate-and-fire neuron integrates that current;
while learning, its threshold is set low so it fires bursts, and ``t_max`` is
read off as the midpoint of the shortest inter-spike interval.

Membrane units are mV, currents nA, time ms.  ``gain`` converts current into
membrane drive (mV per nA·ms) and is not recoverable from the circuit
description; :func:`calibrate_gain` derives it from the requirement that
untrained random patterns always reach the low learning threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import math
from typing import Optional, Sequence

import numba
import numpy as np
from scipy.signal import lfilter

from .kernel import (
    KernelParams,
    MembraneTrace,
    SpikePattern,
    as_matrix,
    batch_vmax,
    evaluation_length,
    membrane_potential,
    _GRID_SLACK,
)
from .learning import LearnConfig, TrainReport, run_training
from .threshold import calibrate_vpeak, vmax_values

# calibrate_gain(generate_patterns(1000, 100, 400, seed=2024), U(0, 50) delays from
# default_rng(2025)); fresh draws of 1000 untrained patterns peak no lower than ~67 mV
DEFAULT_GAIN = 1.863509
# hw_thresholds on the same sample: LIF peak mode 88.0 mV against the idealized 10.2
DEFAULT_VOLTAGE_SCALE = 8.62745
DEFAULT_V_THR_HIGH = 92.3137


@dataclass(frozen=True)
class LIFParams:
    tau_n: float = 5.0
    i0: float = 2.12
    gain: float = DEFAULT_GAIN
    v_thr_low: float = 36.0
    v_thr_high: float = DEFAULT_V_THR_HIGH
    reset_to_zero: bool = True

    def __post_init__(self):
        if self.tau_n <= 0 or self.gain <= 0:
            raise ValueError("tau_n and gain must be positive")
        if not self.v_thr_low < self.v_thr_high:
            raise ValueError("v_thr_low must be below v_thr_high")


@dataclass(frozen=True)
class SpikeTrain:
    spike_times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.spike_times, dtype=float).ravel()
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("spike times must be strictly increasing")
        object.__setattr__(self, "spike_times", t)

    def __len__(self):
        return self.spike_times.size

    @property
    def isi(self) -> np.ndarray:
        return np.diff(self.spike_times)


class InsufficientSpikes(ValueError):
    """Fewer than two output spikes: no interval to measure."""


def epsc_kernel_params(lif: LIFParams, kernel: KernelParams) -> KernelParams:
    return replace(kernel, v0=lif.i0)


def epsc_current(pattern, delays, lif: LIFParams = LIFParams(),
                 kernel: KernelParams = KernelParams(), n_samples: Optional[int] = None) -> MembraneTrace:
    """Summed EPSC in nA; same kernel as the EPSP with amplitude ``i0``."""
    return membrane_potential(pattern, delays, epsc_kernel_params(lif, kernel), n_samples)


@numba.njit(cache=True)
def _integrate(current, decay, drive, threshold, reset, euler, h, tau_n):
    n = current.size
    spikes = np.empty(n, dtype=np.int64)
    n_spk = 0
    v = 0.0
    v_peak = 0.0
    for k in range(n - 1):
        if euler:
            v = v + h * (-v / tau_n) + drive * current[k]
        else:
            v = v * decay + drive * current[k]
        if v > v_peak:
            v_peak = v
        if v > threshold:
            spikes[n_spk] = k + 1
            n_spk += 1
            if reset:
                v = 0.0
    return spikes[:n_spk], v_peak


def lif_simulate(current: MembraneTrace, lif: LIFParams = LIFParams(),
                 threshold: Optional[float] = None, method: str = "exact"):
    """Integrate ``dV/dt = -V/tau_n + gain * I(t)`` with reset to zero.

    The current is held constant over each grid step.  ``method="exact"``
    uses the exponential integrator for that step, ``"euler"`` plain forward
    Euler.  Returns the spike train and the largest membrane value reached.
    """
    if method not in ("exact", "euler"):
        raise ValueError(f"unknown integration method {method!r}")
    h = current.grid_step
    decay = math.exp(-h / lif.tau_n)
    if method == "exact":
        drive = lif.gain * lif.tau_n * (1.0 - decay)
    else:
        drive = lif.gain * h
    thr = lif.v_thr_low if threshold is None else threshold
    values = np.ascontiguousarray(current.values, dtype=float)
    idx, v_peak = _integrate(values, decay, drive, thr, lif.reset_to_zero,
                             method == "euler", h, lif.tau_n)
    return SpikeTrain(current.t_start + idx * h), float(v_peak)


def estimate_tmax(train: SpikeTrain) -> float:
    """Midpoint of the shortest inter-spike interval (earliest on ties)."""
    if len(train) < 2:
        raise InsufficientSpikes(f"need at least 2 spikes, got {len(train)}")
    k = int(np.argmin(train.isi))
    return 0.5 * (train.spike_times[k] + train.spike_times[k + 1])


@numba.njit(cache=True)
def _scan_lif_peaks(k0, w_fall, w_rise, n_samples, r_fall, r_rise, decay, drive, i0, tail):
    # non-resetting LIF driven by the summed EPSC; rows of k0 sorted ascending
    n_rows, n_aff = k0.shape
    v_best = np.zeros(n_rows)
    for p in range(n_rows):
        fall = 0.0
        rise = 0.0
        v = 0.0
        best = 0.0
        j = 0
        last = -1
        for q in range(n_aff):
            if k0[p, q] < n_samples:
                last = k0[p, q]
        stop = min(n_samples, last + tail) if last >= 0 else 0
        for k in range(stop):
            v = v * decay + drive * i0 * (fall - rise)
            fall *= r_fall
            rise *= r_rise
            while j < n_aff and k0[p, j] == k:
                fall += w_fall[p, j]
                rise += w_rise[p, j]
                j += 1
            if v > best:
                best = v
        v_best[p] = best
    return v_best


def _lif_tail_steps(lif: LIFParams, kernel: KernelParams) -> int:
    """Grid steps after the last input beyond which the membrane only decays."""
    h = kernel.grid_step
    t = h * np.arange(int(math.ceil(10 * kernel.tau / h)))
    epsc = np.exp(-t / kernel.tau) - np.exp(-t / kernel.tau_s)
    response = lfilter([0.0, 1.0], [1.0, -math.exp(-h / lif.tau_n)], epsc)
    return int(np.argmax(response)) + 2


def lif_vmax(x: np.ndarray, delays: np.ndarray, lif: LIFParams, kernel: KernelParams,
             n_samples: Optional[int] = None) -> np.ndarray:
    """Peak membrane voltage of a non-resetting LIF neuron for each row of ``x``.

    A neuron with threshold ``v`` fires at least once iff this peak exceeds ``v``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    delays = np.asarray(getattr(delays, "delays", delays), dtype=float)
    h = kernel.grid_step
    if n_samples is None:
        n_samples = evaluation_length(float(np.nanmax(x)), float(np.max(delays, initial=0.0)), kernel)
    arrivals = x + delays
    k0 = np.ceil(arrivals / h - _GRID_SLACK)
    absent = np.isnan(k0) | (k0 >= n_samples)
    k0 = np.where(absent, n_samples, k0).astype(np.int64)
    offset = np.where(absent, 0.0, np.maximum(k0 * h - np.nan_to_num(arrivals), 0.0))
    order = np.argsort(k0, axis=1, kind="stable")
    k0 = np.take_along_axis(k0, order, axis=1)
    offset = np.take_along_axis(offset, order, axis=1)
    decay = math.exp(-h / lif.tau_n)
    drive = lif.gain * lif.tau_n * (1.0 - decay)
    return _scan_lif_peaks(
        k0, np.exp(-offset / kernel.tau), np.exp(-offset / kernel.tau_s), n_samples,
        math.exp(-h / kernel.tau), math.exp(-h / kernel.tau_s), decay, drive, lif.i0,
        _lif_tail_steps(lif, kernel),
    )


def calibrate_gain(patterns: Sequence[SpikePattern], delays, lif: LIFParams = LIFParams(),
                   kernel: KernelParams = KernelParams(), quantile: float = 0.005,
                   margin: float = 2.0) -> float:
    """Gain putting the ``quantile`` of untrained peak voltages at ``margin * v_thr_low``.

    ``margin=1`` is the smallest gain for which almost every untrained
    pattern fires at ``v_thr_low``.  At that gain a kernel-wide bump in the
    current holds only one or two spikes, which makes the shortest-ISI
    estimate of ``t_max`` coarse; doubling it gives several spikes per bump.
    """
    unit = replace(lif, gain=1.0)
    v = lif_vmax(as_matrix(patterns), np.asarray(getattr(delays, "delays", delays)), unit, kernel)
    return float(margin * lif.v_thr_low / np.quantile(v, quantile))


def hw_thresholds(patterns: Sequence[SpikePattern], delays, delta_v: float,
                  lif: LIFParams = LIFParams(), kernel: KernelParams = KernelParams(),
                  bin_width: float = 0.1) -> tuple[float, float]:
    """Mode of the untrained LIF peak voltages and the matching high threshold.

    ``delta_v`` is given in idealized membrane units and is rescaled by the
    ratio of the two distributions' modes, so the margin sits at the same
    relative position in the hardware distribution.
    """
    x = as_matrix(patterns)
    d = np.asarray(getattr(delays, "delays", delays))
    mode_hw = calibrate_vpeak(lif_vmax(x, d, lif, kernel), bin_width)
    mode_ideal = calibrate_vpeak(vmax_values(patterns, d, kernel), bin_width)
    return mode_hw, mode_hw + delta_v * mode_hw / mode_ideal


class HardwareEvaluator:
    """Learnt test on the LIF neuron at ``v_thr_high``; ``t_max`` from the burst at ``v_thr_low``."""

    def __init__(self, x: np.ndarray, window: float, lif: LIFParams, kernel: KernelParams,
                 max_lowering: int = 4):
        self.x = x
        self.window = window
        self.lif = lif
        self.kernel = kernel
        self.epsc = epsc_kernel_params(lif, kernel)
        self.n_samples = evaluation_length(window, window, kernel)
        self.max_lowering = max_lowering
        self.last_pair: Optional[tuple[float, float]] = None

    def peaks(self, delays: np.ndarray):
        v = lif_vmax(self.x, delays, self.lif, self.kernel, self.n_samples)
        return v, np.zeros_like(v)

    def target_time(self, index: int, delays: np.ndarray, t_trace: float) -> Optional[float]:
        current = epsc_current(self.x[index], delays, self.lif, self.kernel, self.n_samples)
        t_act = float(np.argmax(current.values)) * current.grid_step
        threshold = self.lif.v_thr_low
        for _ in range(self.max_lowering + 1):
            train, _ = lif_simulate(current, self.lif, threshold)
            if len(train) >= 2:
                t_est = estimate_tmax(train)
                self.last_pair = (t_est, t_act)
                return t_est
            threshold *= 0.5
        return None


def hw_train_memorize(patterns: Sequence[SpikePattern], cfg: LearnConfig = LearnConfig(),
                      lif: LIFParams = LIFParams(), kernel: KernelParams = KernelParams()) -> TrainReport:
    """Memorization with the LIF neuron in the loop.

    A pattern is learnt when the neuron fires at ``lif.v_thr_high``; for the
    others the gradient step uses the ISI estimate of ``t_max`` at
    ``lif.v_thr_low``.  ``cfg.v_thr`` is ignored.
    """
    x = as_matrix(patterns)
    window = patterns[0].window
    v_high = lif.v_thr_high
    evaluator = HardwareEvaluator(x, window, lif, kernel)
    return run_training(
        x, window, np.ones(len(patterns)),
        needs_update=lambda v: v <= v_high,
        score=lambda v: int(np.count_nonzero(v > v_high)),
        order=None, cfg=cfg, params=epsc_kernel_params(lif, kernel), evaluator=evaluator,
    )
