"""Gradient-descent delay learning for memorization and two-class classification.

Both variants share one state machine (:func:`run_training`):

1. every pattern is presented in turn;
2. a pattern that already meets its training target is skipped;
3. otherwise the delays take a tentative step ``eta * sign * grad_delta`` at
   the pattern's own ``t_max`` and the step is kept if the score over the
   whole training set increases;
4. after ``stall_window`` consecutive steps without an increase the current
   step is applied anyway and one local-minimum event is recorded; until the
   score next increases, steps that leave it unchanged are kept as well
   (``LearnConfig.acceptance`` selects stricter or looser variants);
5. training stops once every pattern meets its target or the local-minimum
   budget is spent; the delays of the best score seen are returned.

Without gating (the classification default) every step of 3. is kept and a
local minimum is ``stall_window`` presentations without a new best score.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
import json
from typing import Callable, Optional, Sequence

import numpy as np

from .kernel import (
    DelayVector,
    KernelParams,
    SpikePattern,
    as_matrix,
    batch_vmax,
    epsp_kernel_derivative,
    evaluation_length,
)

ALL_LEARNT = "all_learnt"
MINIMA_BUDGET = "minima_budget"
ITERATION_CAP = "iteration_cap"

MEMORIZE_DEFAULTS = {"gated": True, "minima_mode": "total"}
# gating stalls classification near 80 % correct; ungated runs need the
# minima budget to restart on progress or they stop before converging
CLASSIFY_DEFAULTS = {"gated": False, "minima_mode": "consecutive"}


@dataclass(frozen=True)
class LearnConfig:
    eta0: float = 5.0
    eta_decrement: float = 0.5
    eta_period: int = 500
    eta_floor: float = 0.5
    d_init: float = 50.0
    stall_window: int = 20
    max_local_minima: int = 100
    # "total": every local minimum counts; "consecutive": the count restarts
    # whenever the best score improves; None picks the task default
    minima_mode: Optional[str] = None
    v_thr: float = 10.7
    v_thr_minus: float = 9.7
    presentation: str = "round_robin"
    # keep only steps that raise the score; None picks the task default
    # (gated for memorization, ungated for classification)
    gated: Optional[bool] = None
    # which non-improving steps are kept besides the forced one at a local minimum:
    # "strict" none, "escape" equal-score steps after a local minimum until the
    # score rises again, "non_decreasing" every equal-score step
    acceptance: str = "escape"
    max_iterations: int = 200_000
    tmax_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.eta0 <= 0 or self.eta_floor <= 0:
            raise ValueError("eta0 and eta_floor must be positive")
        if self.stall_window < 1 or self.max_local_minima < 1:
            raise ValueError("stall_window and max_local_minima must be >= 1")
        if self.eta_period < 1 or self.eta_decrement < 0:
            raise ValueError("invalid learning-rate schedule")
        if self.d_init < 0 or self.tmax_sigma < 0:
            raise ValueError("d_init and tmax_sigma must be non-negative")
        if self.minima_mode not in (None, "total", "consecutive"):
            raise ValueError(f"unknown minima_mode {self.minima_mode!r}")
        if self.acceptance not in ("strict", "escape", "non_decreasing"):
            raise ValueError(f"unknown acceptance rule {self.acceptance!r}")
        if self.presentation not in ("round_robin", "random"):
            raise ValueError(f"unknown presentation order {self.presentation!r}")

    @property
    def v_peak(self) -> float:
        """Decision threshold for classification, midway between the two training thresholds."""
        return 0.5 * (self.v_thr + self.v_thr_minus)

    def resolved(self, **task_defaults) -> "LearnConfig":
        """Copy with every field left at None replaced by ``task_defaults``."""
        return replace(self, **{k: v for k, v in task_defaults.items() if getattr(self, k) is None})

    def eta(self, iteration: int) -> float:
        steps = iteration // self.eta_period
        return max(self.eta_floor, self.eta0 - self.eta_decrement * steps)


@dataclass
class TrainReport:
    best_delays: DelayVector
    best_count: int
    learnt_history: list[int]
    best_history: list[int]
    local_minimum_events: int
    exit_reason: str
    final_eta: float
    iterations: int
    n_patterns: int
    # (estimated t_max, trace t_max) per gradient step, filled by the hardware path
    tmax_pairs: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["best_delays"] = self.best_delays.delays.tolist()
        out["max_delay"] = self.best_delays.max_delay
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data: dict) -> "TrainReport":
        data = dict(data)
        data["best_delays"] = DelayVector(data.pop("best_delays"), data.pop("max_delay"))
        data["tmax_pairs"] = [tuple(p) for p in data.get("tmax_pairs", [])]
        return cls(**data)


@dataclass(frozen=True)
class RecallResult:
    fraction: float
    recalled: np.ndarray
    v_max: np.ndarray


def grad_delta(pattern, delays, t_max: float, params: KernelParams) -> np.ndarray:
    """Delay change that raises V at ``t_max``: ``-K'(t_max - x_i - d_i)``.

    Absent spikes and spikes arriving after ``t_max`` get zero.
    """
    x = getattr(pattern, "spike_times", pattern)
    d = getattr(delays, "delays", delays)
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if x.shape != d.shape:
        raise ValueError("pattern and delays differ in length")
    lag = t_max - x - d
    return -np.nan_to_num(epsp_kernel_derivative(np.nan_to_num(lag, nan=-1.0), params), nan=0.0)


def init_delays(n: int, cfg: LearnConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.0, cfg.d_init, size=n)


def presentation_order(n: int, cfg: LearnConfig, rng: np.random.Generator):
    """Yield pattern indices forever."""
    if cfg.presentation == "round_robin":
        while True:
            yield from range(n)
    while True:
        yield from rng.permutation(n)


class PeakEvaluator:
    """Idealized peak detector: ``(v_max, t_max)`` of every training pattern."""

    def __init__(self, x: np.ndarray, window: float, params: KernelParams):
        self.x = x
        self.window = window
        self.params = params
        self.n_samples = evaluation_length(window, window, params)

    def peaks(self, delays: np.ndarray):
        return batch_vmax(self.x + delays, self.n_samples, self.params)

    def target_time(self, index: int, delays: np.ndarray, t_trace: float) -> float:
        return t_trace


def run_training(x: np.ndarray, window: float, signs: np.ndarray,
                 needs_update: Callable[[np.ndarray], np.ndarray],
                 score: Callable[[np.ndarray], int],
                 order: Optional[Sequence[int]],
                 cfg: LearnConfig, params: KernelParams,
                 evaluator=None, rng: Optional[np.random.Generator] = None) -> TrainReport:
    """Shared training loop.

    ``needs_update(v_max)`` flags patterns below their training target,
    ``score(v_max)`` is the count that gates acceptance and ``signs`` is +1
    for patterns to be driven up and -1 for patterns to be driven down.
    ``order`` optionally fixes the cyclic presentation sequence.  Fields of
    ``cfg`` left at None take the memorization defaults.

    Presentations of patterns that already meet their target are skipped and
    do not count as iterations, neither for the learning-rate schedule nor
    for stall detection.
    """
    rng = np.random.default_rng(cfg.rng_seed) if rng is None else rng
    cfg = cfg.resolved(**MEMORIZE_DEFAULTS)
    gated = cfg.gated
    evaluator = PeakEvaluator(x, window, params) if evaluator is None else evaluator
    n_patterns, n_aff = x.shape
    delays = init_delays(n_aff, cfg, rng)
    if order is None:
        order = np.arange(n_patterns)
    order = np.asarray(order)
    order_iter = presentation_order(order.size, cfg, rng)

    v, t = evaluator.peaks(delays)
    count = score(v)
    best_count, best_delays = count, delays.copy()
    learnt_history: list[int] = []
    best_history: list[int] = []
    tmax_pairs: list[tuple[float, float]] = []
    stall = minima = iteration = 0
    escaping = False

    while True:
        pending = needs_update(v)
        if not pending.any():
            exit_reason = ALL_LEARNT
            break
        if minima >= cfg.max_local_minima:
            exit_reason = MINIMA_BUDGET
            break
        if iteration >= cfg.max_iterations:
            exit_reason = ITERATION_CAP
            break
        i = int(order[next(order_iter)])
        if not pending[i]:
            continue
        eta = cfg.eta(iteration)
        iteration += 1

        t_max = evaluator.target_time(i, delays, float(t[i]))
        if t_max is None:
            # no usable estimate of t_max: nothing to try this iteration
            trial = None
        else:
            if getattr(evaluator, "last_pair", None) is not None:
                tmax_pairs.append(evaluator.last_pair)
            if cfg.tmax_sigma > 0:
                t_max += rng.normal(0.0, cfg.tmax_sigma)
            step = signs[i] * eta * grad_delta(x[i], delays, t_max, params)
            trial = np.clip(delays + step, 0.0, window)
            v_new, t_new = evaluator.peaks(trial)
            new_count = score(v_new)

        if trial is not None and not gated:
            # ungated: every step is kept; a stall is a presentation without a new best
            delays, v, t, count = trial, v_new, t_new, new_count
            if count > best_count:
                best_count, best_delays = count, delays.copy()
                stall = 0
                if cfg.minima_mode == "consecutive":
                    minima = 0
            else:
                stall += 1
                if stall >= cfg.stall_window:
                    stall = 0
                    minima += 1
        elif trial is not None and new_count > count:
            delays, v, t, count = trial, v_new, t_new, new_count
            stall = 0
            escaping = False
            if count > best_count:
                best_count, best_delays = count, delays.copy()
                if cfg.minima_mode == "consecutive":
                    minima = 0
        else:
            stall += 1
            if trial is not None and new_count == count and (
                    cfg.acceptance == "non_decreasing" or (cfg.acceptance == "escape" and escaping)):
                delays, v, t = trial, v_new, t_new
            if stall >= cfg.stall_window:
                # local minimum: remember it if it is the best so far, then move anyway
                if count >= best_count:
                    best_count, best_delays = count, delays.copy()
                if trial is not None:
                    delays, v, t, count = trial, v_new, t_new, new_count
                stall = 0
                minima += 1
                escaping = True
        learnt_history.append(count)
        best_history.append(best_count)

    if count >= best_count:
        best_count, best_delays = count, delays.copy()
    return TrainReport(
        best_delays=DelayVector(best_delays, window),
        best_count=int(best_count),
        learnt_history=[int(c) for c in learnt_history],
        best_history=[int(c) for c in best_history],
        local_minimum_events=minima,
        exit_reason=exit_reason,
        final_eta=cfg.eta(max(iteration - 1, 0)),
        iterations=iteration,
        n_patterns=n_patterns,
        tmax_pairs=tmax_pairs,
    )


def _check_patterns(patterns: Sequence[SpikePattern]) -> tuple[np.ndarray, float]:
    x = as_matrix(patterns)
    windows = {p.window for p in patterns}
    if len(windows) != 1:
        raise ValueError("all patterns must share one window length")
    return x, windows.pop()


def train_memorize(patterns: Sequence[SpikePattern], cfg: LearnConfig = LearnConfig(),
                   params: KernelParams = KernelParams(), evaluator=None) -> TrainReport:
    """Memorize ``patterns``: drive every ``v_max`` above ``cfg.v_thr``."""
    x, window = _check_patterns(patterns)
    v_thr = cfg.v_thr
    return run_training(
        x, window, np.ones(len(patterns)),
        needs_update=lambda v: v <= v_thr,
        score=lambda v: int(np.count_nonzero(v > v_thr)),
        order=None, cfg=cfg, params=params, evaluator=evaluator,
    )


def interleave(n1: int, n2: int) -> list[int]:
    """Indices into ``class1 + class2`` alternating between the classes."""
    out = []
    for k in range(max(n1, n2)):
        if k < n1:
            out.append(k)
        if k < n2:
            out.append(n1 + k)
    return out


def train_classify(class1: Sequence[SpikePattern], class2: Sequence[SpikePattern],
                   cfg: LearnConfig = LearnConfig(), params: KernelParams = KernelParams()) -> TrainReport:
    """Raise class-1 ``v_max`` above ``cfg.v_thr`` and push class-2 below ``cfg.v_thr_minus``.

    The score is the number of patterns on the correct side of
    ``cfg.v_peak``.  Unless ``cfg`` says otherwise every step is kept (no
    gating) and the local-minimum budget restarts whenever the best score
    improves; see ``CLASSIFY_DEFAULTS``.
    """
    x, window = _check_patterns(list(class1) + list(class2))
    n1 = len(class1)
    is1 = np.arange(x.shape[0]) < n1
    signs = np.where(is1, 1.0, -1.0)
    v_thr, v_minus, v_peak = cfg.v_thr, cfg.v_thr_minus, cfg.v_peak

    def needs_update(v):
        return np.where(is1, v <= v_thr, v >= v_minus)

    def score(v):
        return int(np.count_nonzero(np.where(is1, v > v_peak, v < v_peak)))

    return run_training(x, window, signs, needs_update, score,
                        order=interleave(n1, x.shape[0] - n1),
                        cfg=cfg.resolved(**CLASSIFY_DEFAULTS), params=params)


def recall(patterns, delays, threshold: float, params: KernelParams = KernelParams()) -> RecallResult:
    """Fraction of patterns whose ``v_max`` exceeds ``threshold``."""
    from .threshold import vmax_values

    v = vmax_values(patterns, delays, params)
    recalled = v > threshold
    return RecallResult(float(recalled.mean()), recalled, v)


def classification_accuracy(class1, class2, delays, threshold: float,
                            params: KernelParams = KernelParams()) -> float:
    from .threshold import vmax_values

    v1 = vmax_values(class1, delays, params)
    v2 = vmax_values(class2, delays, params) if len(class2) else np.empty(0)
    correct = np.count_nonzero(v1 > threshold) + np.count_nonzero(v2 < threshold)
    return correct / (v1.size + v2.size)
