"""Clock-level model of the digital blocks: delay lines, t_max estimator, LUT learning.

One clock tick is one time unit of the pattern lattice (1 ms by default).
Each block is a small mutable state object advanced by a ``*_tick`` function,
mirroring how the registers would be updated on every clock edge.
"""
from __future__ import annotations

from dataclasses import dataclass
import csv
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .kernel import KernelParams, epsp_kernel_derivative

ISI_RESET = 2 ** 31 - 1


@dataclass
class DelayLineState:
    """Per-axon delay register ``r1`` and scheduled fire time ``r2``; ``t_s`` is the system time."""

    r1: np.ndarray
    r2: np.ndarray = None
    armed: np.ndarray = None
    t_s: int = 0

    def __post_init__(self):
        self.r1 = np.asarray(self.r1, dtype=np.int64)
        if (self.r1 < 0).any():
            raise ValueError("delay registers must be non-negative")
        if self.r2 is None:
            self.r2 = np.zeros_like(self.r1)
        if self.armed is None:
            self.armed = np.zeros(self.r1.shape, dtype=bool)


def delay_line_tick(state: DelayLineState, input_events: Iterable[int] = ()) -> list[int]:
    """Advance all delay lines by one clock; return the axons that fire this tick.

    An input on axon ``i`` loads ``r2[i] = t_s + r1[i]``; every armed axon
    whose ``r2`` equals ``t_s`` emits an output event.
    """
    for i in input_events:
        state.r2[i] = state.t_s + state.r1[i]
        state.armed[i] = True
    fire = np.flatnonzero(state.armed & (state.r2 == state.t_s))
    state.armed[fire] = False
    state.t_s += 1
    return fire.tolist()


def run_delay_lines(spike_ticks: Sequence[Optional[int]], r1: Sequence[int],
                    n_ticks: Optional[int] = None, log: Optional[list] = None) -> np.ndarray:
    """Clock one pattern through the delay lines.

    Returns the output tick of each axon (``-1`` if it never fired).  When
    ``log`` is given, ``(tick, axon, kind)`` tuples are appended to it with
    ``kind`` ``"in"`` or ``"out"``.
    """
    state = DelayLineState(np.asarray(r1))
    inputs: dict[int, list[int]] = {}
    for axon, tick in enumerate(spike_ticks):
        if tick is not None and not (isinstance(tick, float) and np.isnan(tick)):
            inputs.setdefault(int(tick), []).append(axon)
    if n_ticks is None:
        n_ticks = max(inputs, default=0) + int(state.r1.max(initial=0)) + 1
    out = np.full(state.r1.size, -1, dtype=np.int64)
    for tick in range(n_ticks):
        arriving = inputs.get(tick, [])
        if log is not None:
            log.extend((tick, a, "in") for a in arriving)
        fired = delay_line_tick(state, arriving)
        out[fired] = tick
        if log is not None:
            log.extend((tick, a, "out") for a in fired)
    return out


def write_event_log(log: Sequence[tuple[int, int, str]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tick", "axon", "kind"])
        writer.writerows(log)


@dataclass
class TmaxEstimatorState:
    """Registers of the t_max estimator.

    Fields may be scalars or equally shaped arrays; with arrays each element
    is an independent estimator and one tick clocks all of them.
    """

    c1: Any = 0
    c2: Any = 0
    c1_running: Any = False
    c2_running: Any = False
    isi: Any = ISI_RESET
    t_max: Any = 0.0
    n_spikes: Any = 0

    @classmethod
    def batch(cls, n: int) -> "TmaxEstimatorState":
        return cls(np.zeros(n, np.int64), np.zeros(n, np.int64), np.zeros(n, bool), np.zeros(n, bool),
                   np.full(n, ISI_RESET, np.int64), np.zeros(n), np.zeros(n, np.int64))


def _unwrap(value):
    if isinstance(value, np.generic) or (isinstance(value, np.ndarray) and value.ndim == 0):
        return value.item()
    return value


def tmax_estimator_tick(state: TmaxEstimatorState, spike, t_s: int) -> TmaxEstimatorState:
    """One clock of the ISI-based t_max estimator.

    Running counters advance first.  Odd-numbered spikes restart C1 and stop
    C2, even-numbered spikes do the opposite; the counter just stopped holds
    the latest interval, which replaces the stored minimum only if strictly
    smaller, setting ``t_max = t_s - isi / 2``.
    """
    c1 = state.c1 + np.asarray(state.c1_running, dtype=np.int64)
    c2 = state.c2 + np.asarray(state.c2_running, dtype=np.int64)
    spike = np.asarray(spike, dtype=bool)
    n = state.n_spikes + spike
    odd = spike & (n % 2 == 1)
    even = spike & (n % 2 == 0)
    held = np.where(odd, c2, c1)
    # the first spike stops a counter that was never started
    better = ((odd & (n > 1)) | even) & (held < state.isi)
    state.isi = _unwrap(np.where(better, held, state.isi))
    state.t_max = _unwrap(np.where(better, t_s - held / 2, state.t_max))
    state.c1 = _unwrap(np.where(odd, 0, c1))
    state.c2 = _unwrap(np.where(even, 0, c2))
    state.c1_running = _unwrap(np.where(odd, True, np.where(even, False, state.c1_running)))
    state.c2_running = _unwrap(np.where(even, True, np.where(odd, False, state.c2_running)))
    state.n_spikes = _unwrap(n)
    return state


def run_tmax_estimator(spike_ticks: Iterable[int], n_ticks: Optional[int] = None) -> TmaxEstimatorState:
    ticks = set(int(t) for t in spike_ticks)
    if n_ticks is None:
        n_ticks = max(ticks, default=-1) + 1
    state = TmaxEstimatorState()
    for t_s in range(n_ticks):
        tmax_estimator_tick(state, t_s in ticks, t_s)
    return state


def run_tmax_estimator_batch(spikes: np.ndarray) -> TmaxEstimatorState:
    """Clock a batch of spike rasters (rows of booleans, one column per tick)."""
    spikes = np.asarray(spikes, dtype=bool)
    state = TmaxEstimatorState.batch(spikes.shape[0])
    for t_s in range(spikes.shape[1]):
        tmax_estimator_tick(state, spikes[:, t_s], t_s)
    return state


def build_lut(params: KernelParams, eta: float, n_entries: int, tick: float = 1.0,
              quantum: Optional[float] = None) -> np.ndarray:
    """Delay increments ``-eta * K'(k * tick)`` indexed by lag in ticks.

    The sign makes the entry the value added to the delay register.  With
    ``quantum`` the entries are rounded to multiples of it (fixed point).
    """
    lut = -eta * epsp_kernel_derivative(tick * np.arange(n_entries), params)
    if quantum is not None:
        lut = np.round(lut / quantum) * quantum
    return lut


def lut_update(delays: Sequence[float], t_max: int, arrivals: Sequence[Optional[int]],
               lut: np.ndarray, max_delay: float) -> np.ndarray:
    """Serial delay update from the look-up table.

    Only axons whose spike arrived strictly before ``t_max`` are touched;
    lags beyond the table are treated as the kernel tail (no change).
    """
    r1 = np.array(delays, dtype=float)
    for axon, arrival in enumerate(arrivals):
        if arrival is None or (isinstance(arrival, float) and np.isnan(arrival)):
            continue
        lag = int(t_max - arrival)
        if lag <= 0:
            continue
        step = lut[lag] if lag < lut.size else 0.0
        r1[axon] = min(max(r1[axon] + step, 0.0), max_delay)
    return r1


def write_lut(lut: np.ndarray, path, tick: float = 1.0) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lag", "delay_step"])
        for k, value in enumerate(lut):
            writer.writerow([f"{k * tick:.6g}", f"{value:.6g}"])
