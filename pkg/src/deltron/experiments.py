"""Seeded experiment runners that emit plot data as CSV and JSON.

Every experiment maps a configuration onto training and evaluation runs,
one per (parameter point, repetition), and writes

* ``runs.csv``: one row per run,
* ``summary.csv``: means and standard deviations per parameter point,
* ``summary.json``: the same numbers plus exit-reason tallies and the
  configuration hash.

Random streams are derived from ``base_seed`` and a fixed key per stream
(see :func:`derive_seed`), so adding repetitions or parameter points never
changes the runs already defined.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
import csv
import functools
import hashlib
import io
import json
import math
from pathlib import Path
import time
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr
import yaml

from .hardware import LIFParams, hw_train_memorize, lif_vmax
from .kernel import KernelParams, SpikePattern, as_matrix, batch_vmax, evaluation_length
from .learning import LearnConfig, init_delays, train_classify, train_memorize
from .patterns import CategoryParams, category_count, generate_patterns, jitter
from .threshold import calibrate_vpeak, count_errors, histogram, vmax_values, vopt_from_samples

EXPERIMENTS = (
    "vmax-dist", "tmax-dist", "memorize", "total-error", "classify", "load-sweep",
    "tmax-noise", "jitter-recall", "missing-spikes", "hw-compare", "category-count",
)

# stream ids for derive_seed
_PATTERNS, _BACKGROUND, _LEARN, _JITTER, _MISSING, _CLASSES, _CALIBRATION = range(1, 8)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class KernelSection:
    v0: float = 2.12
    tau: float = 15.0
    tau_s: float = 3.75
    grid_step: float = 0.1


@dataclass(frozen=True)
class LearnSection:
    eta0: float = 5.0
    eta_decrement: float = 0.5
    eta_period: int = 500
    eta_floor: float = 0.5
    d_init: float = 50.0
    stall_window: int = 20
    max_local_minima: int = 100
    minima_mode: Optional[str] = None
    presentation: str = "round_robin"
    gated: Optional[bool] = None
    acceptance: str = "escape"
    max_iterations: int = 200_000


@dataclass(frozen=True)
class DistSection:
    p: int = 100
    delta_v: float = 1.5
    tmax_delta_v: float = 0.5
    tmax_bin: float = 20.0


@dataclass(frozen=True)
class NoiseSection:
    tmax_sigma: tuple = (0.0, 2.0, 5.0, 10.0)
    tmax_p_list: tuple = (10, 20, 30, 50)
    tmax_delta_v: float = 0.5
    jitter_sigma: float = 1.5
    jitter_delta_v: tuple = (0.5, 1.5)
    jitter_margin: float = 0.2
    missing: tuple = (0, 1, 2, 3, 4, 5)
    missing_p: int = 50
    missing_delta_v: float = 1.5


@dataclass(frozen=True)
class ClassifySection:
    p_per_class: tuple = (10, 30, 50, 70, 100)
    delta_v: tuple = (0.0, 0.2, 0.4)
    n_list: tuple = (50, 100, 200)
    alpha: tuple = (0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class HardwareSection:
    tau_n: float = LIFParams.tau_n
    i0: float = LIFParams.i0
    gain: float = LIFParams.gain
    v_thr_low: float = LIFParams.v_thr_low
    v_thr_high: float = LIFParams.v_thr_high
    p_list: tuple = (10, 50, 100)
    delta_v: float = 0.5


@dataclass(frozen=True)
class CategorySection:
    n: int = 2
    t: int = 4
    s: int = 1
    max_missing: int = 0
    per_missing_exponent: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "memorize"
    n_afferents: int = 100
    window: int = 400
    p_list: tuple = (10, 20, 30, 50, 70, 100)
    delta_v: tuple = (0.5, 1.0, 1.5)
    seeds: int = 10
    base_seed: int = 0
    v_peak: float = 10.2
    n_background: int = 1000
    bin_width: float = 0.1
    workers: int = 1
    out: Optional[str] = None
    kernel: KernelSection = KernelSection()
    learn: LearnSection = LearnSection()
    dist: DistSection = DistSection()
    noise: NoiseSection = NoiseSection()
    classify: ClassifySection = ClassifySection()
    hw: HardwareSection = HardwareSection()
    category: CategorySection = CategorySection()

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment id {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.n_afferents < 1 or self.window < 1:
            raise ConfigError("n_afferents and window must be >= 1")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.n_background < 2:
            raise ConfigError("n_background must be >= 2")
        if any(p < 1 for p in self.p_list):
            raise ConfigError("every P must be >= 1")
        if self.noise.missing_p < 1 or any(m < 0 or m > self.n_afferents for m in self.noise.missing):
            raise ConfigError("missing-spike counts must lie in [0, N]")
        try:
            self.kernel_params()
            self.lif_params()
            self.learn_config(v_thr=self.v_peak)
            CategoryParams(self.category.n, self.category.t, self.category.s, self.category.max_missing)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def kernel_params(self) -> KernelParams:
        return KernelParams(**asdict(self.kernel))

    def lif_params(self) -> LIFParams:
        hw = self.hw
        return LIFParams(tau_n=hw.tau_n, i0=hw.i0, gain=hw.gain,
                         v_thr_low=hw.v_thr_low, v_thr_high=hw.v_thr_high)

    def learn_config(self, v_thr: float, v_thr_minus: Optional[float] = None,
                     tmax_sigma: float = 0.0, rng_seed: int = 0) -> LearnConfig:
        return LearnConfig(
            v_thr=v_thr, v_thr_minus=v_thr if v_thr_minus is None else v_thr_minus,
            tmax_sigma=tmax_sigma, rng_seed=rng_seed, **asdict(self.learn),
        )

    def digest(self) -> str:
        """Hash of everything that affects results (the output path excluded)."""
        data = asdict(self)
        data.pop("out")
        data.pop("workers")
        text = json.dumps(data, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _build(cls, data: dict, where: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where or 'root'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(sorted(unknown))}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value or {}, f"{where}{name}.")
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _set_dotted(data: dict, key: str, value) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {key}: {part} is not a section")
    node[parts[-1]] = value


def load_config(path=None, experiment: Optional[str] = None, overrides: Sequence[str] = (),
                **updates) -> ExperimentConfig:
    """Build a config from an optional YAML file, ``key=value`` overrides and keyword updates.

    Override keys use dots for nested sections (``learn.eta0=3``); values
    are parsed as YAML, so ``p_list=[10,20]`` gives a list.
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a mapping")
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        _set_dotted(data, key.strip(), yaml.safe_load(value))
    for key, value in updates.items():
        if value is not None:
            data[key] = value
    if experiment is not None:
        data["experiment"] = experiment
    try:
        return _build(ExperimentConfig, data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def derive_seed(cfg: ExperimentConfig, stream: int, *key: int) -> int:
    """Seed for one random stream, a fixed function of ``base_seed`` and the key."""
    seq = np.random.SeedSequence(cfg.base_seed, spawn_key=(stream, *[int(k) for k in key]))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)


def _milli(value: float) -> int:
    return int(round(value * 1000))


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[list[Any]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(f"row has {len(row)} cells, expected {len(self.columns)}")

    def add(self, *cells) -> None:
        if len(cells) != len(self.columns):
            raise ValueError(f"row has {len(cells)} cells, expected {len(self.columns)}")
        self.rows.append(list(cells))

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [row[k] for row in self.rows]


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return f"{float(value):.6g}"
    return str(value)


def render_csv(table: ResultTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(c) for c in row])
    return buf.getvalue()


def emit_plotdata(table: ResultTable, path) -> Path:
    """Write ``table`` as CSV: header row, floats at 6 significant digits, rows as given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(table))
    return path


@dataclass
class ExperimentResult:
    runs: ResultTable
    summary: ResultTable
    extra: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)


def _mean_sd(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def _summarize(runs: ResultTable, keys: Sequence[str], metrics: Sequence[str],
               tally: Optional[str] = "exit_reason") -> tuple[ResultTable, list[dict]]:
    groups: dict = {}
    for row in runs.rows:
        rec = dict(zip(runs.columns, row))
        groups.setdefault(tuple(rec[k] for k in keys), []).append(rec)
    columns = list(keys) + [f"{s}_{m}" for m in metrics for s in ("mean", "sd")] + ["n_runs"]
    table = ResultTable(columns)
    records = []
    for key in sorted(groups):
        recs = groups[key]
        cells = list(key)
        entry = dict(zip(keys, key))
        for m in metrics:
            mean, sd = _mean_sd([r[m] for r in recs])
            cells += [mean, sd]
            entry[f"mean_{m}"], entry[f"sd_{m}"] = mean, sd
        cells.append(len(recs))
        entry["n_runs"] = len(recs)
        if tally is not None:
            counts: dict = {}
            for r in recs:
                counts[r[tally]] = counts.get(r[tally], 0) + 1
            entry["exit_reasons"] = dict(sorted(counts.items()))
        table.add(*cells)
        records.append(entry)
    return table, records


def _map(cfg: ExperimentConfig, fn: Callable, tasks: list) -> list:
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# ---------------------------------------------------------------- shared runs

def training_patterns(cfg: ExperimentConfig, p: int, rep: int, n_afferents: Optional[int] = None):
    n = cfg.n_afferents if n_afferents is None else n_afferents
    return generate_patterns(p, n, cfg.window, seed=derive_seed(cfg, _PATTERNS, p, rep, n))


def background_patterns(cfg: ExperimentConfig, rep: int, n_afferents: Optional[int] = None):
    n = cfg.n_afferents if n_afferents is None else n_afferents
    return generate_patterns(cfg.n_background, n, cfg.window, seed=derive_seed(cfg, _BACKGROUND, rep, n))


@dataclass
class MemorizeRun:
    p: int
    delta_v: float
    rep: int
    tmax_sigma: float
    v_thr: float
    learn: LearnConfig
    patterns: list
    report: Any
    learnt_vmax: np.ndarray
    background_vmax: np.ndarray
    v_opt: float

    def rates(self, threshold: float) -> tuple[float, float]:
        fp, fn = count_errors(self.learnt_vmax, self.background_vmax, threshold)
        return fp / self.background_vmax.size, fn / self.learnt_vmax.size


@functools.lru_cache(maxsize=256)
def _memorize_cached(cfg: ExperimentConfig, p: int, delta_v: float, rep: int,
                     tmax_sigma: float) -> MemorizeRun:
    params = cfg.kernel_params()
    patterns = training_patterns(cfg, p, rep)
    seed = derive_seed(cfg, _LEARN, p, _milli(delta_v), rep, _milli(tmax_sigma))
    learn = cfg.learn_config(cfg.v_peak + delta_v, tmax_sigma=tmax_sigma, rng_seed=seed)
    report = train_memorize(patterns, learn, params)
    learnt = vmax_values(patterns, report.best_delays, params)
    background = vmax_values(background_patterns(cfg, rep), report.best_delays, params)
    v_opt = vopt_from_samples(learnt, background, cfg.bin_width).v_opt
    return MemorizeRun(p, delta_v, rep, tmax_sigma, learn.v_thr, learn, patterns, report,
                       learnt, background, v_opt)


def memorize_run(cfg: ExperimentConfig, p: int, delta_v: float, rep: int,
                 tmax_sigma: float = 0.0) -> MemorizeRun:
    """One seeded memorization run, evaluated at its own ``v_opt``; cached per process."""
    return _memorize_cached(replace(cfg, out=None, workers=1, experiment="memorize"),
                            int(p), float(delta_v), int(rep), float(tmax_sigma))


def _memorize_task(args):
    cfg, p, dv, rep, sigma = args
    run = memorize_run(cfg, p, dv, rep, sigma)
    fp, fn = run.rates(run.v_opt)
    rep_ = run.report
    return [p, dv, sigma, rep, rep_.exit_reason, rep_.iterations, rep_.best_count,
            run.v_opt, 1.0 - fn, fp, fn, fp + fn]


_MEMORIZE_COLUMNS = ["P", "delta_v", "tmax_sigma", "seed", "exit_reason", "iterations", "best_count",
                     "v_opt", "recall", "fp", "fn", "total_error"]


def _memorize_grid(cfg: ExperimentConfig, ps, dvs, sigmas=(0.0,)) -> ResultTable:
    tasks = [(cfg, p, dv, rep, s) for p in ps for dv in dvs for s in sigmas for rep in range(cfg.seeds)]
    return ResultTable(list(_MEMORIZE_COLUMNS), _map(cfg, _memorize_task, tasks))


# ---------------------------------------------------------------- experiments

def _exp_memorize(cfg: ExperimentConfig) -> ExperimentResult:
    runs = _memorize_grid(cfg, cfg.p_list, cfg.delta_v)
    summary, records = _summarize(runs, ["P", "delta_v"], ["recall", "fp", "fn"])
    # declared plot schema
    table = ResultTable(["P", "delta_v", "mean_recall", "sd_recall", "mean_fp", "mean_fn"])
    for r in records:
        table.add(r["P"], r["delta_v"], r["mean_recall"], r["sd_recall"], r["mean_fp"], r["mean_fn"])
    return ExperimentResult(runs, table, {"groups": records})


def _exp_total_error(cfg: ExperimentConfig) -> ExperimentResult:
    runs = _memorize_grid(cfg, cfg.p_list, cfg.delta_v)
    summary, records = _summarize(runs, ["P", "delta_v"], ["total_error", "fp", "fn"])
    return ExperimentResult(runs, summary, {"groups": records})


def _exp_tmax_noise(cfg: ExperimentConfig) -> ExperimentResult:
    n = cfg.noise
    runs = _memorize_grid(cfg, n.tmax_p_list, (n.tmax_delta_v,), n.tmax_sigma)
    summary, records = _summarize(runs, ["P", "tmax_sigma"], ["recall", "fp", "fn"])
    return ExperimentResult(runs, summary, {"groups": records})


def _jitter_task(args):
    cfg, p, dv, rep = args
    run = memorize_run(cfg, p, dv, rep)
    params = cfg.kernel_params()
    rng = np.random.default_rng(derive_seed(cfg, _JITTER, p, _milli(dv), rep))
    noisy = [jitter(x, cfg.noise.jitter_sigma, rng) for x in run.patterns]
    threshold = min(run.v_thr - cfg.noise.jitter_margin, run.v_opt)
    v_noisy = vmax_values(noisy, run.report.best_delays, params)
    clean = float(np.mean(run.learnt_vmax > run.v_opt))
    noisy_recall = float(np.mean(v_noisy > threshold))
    fp = float(np.mean(run.background_vmax > threshold))
    return [p, dv, rep, run.report.exit_reason, run.v_opt, threshold, clean, noisy_recall,
            clean - noisy_recall, fp]


def _exp_jitter(cfg: ExperimentConfig) -> ExperimentResult:
    tasks = [(cfg, p, dv, rep) for p in cfg.p_list for dv in cfg.noise.jitter_delta_v
             for rep in range(cfg.seeds)]
    runs = ResultTable(["P", "delta_v", "seed", "exit_reason", "v_opt", "threshold", "clean_recall",
                        "jitter_recall", "drop", "fp"], _map(cfg, _jitter_task, tasks))
    summary, records = _summarize(runs, ["P", "delta_v"], ["clean_recall", "jitter_recall", "drop", "fp"])
    return ExperimentResult(runs, summary, {"groups": records})


def drop_nested(pattern: SpikePattern, counts: Sequence[int], rng) -> list[SpikePattern]:
    """Copies of ``pattern`` missing ``m`` spikes for each ``m`` in ``counts``.

    Removed afferents are a prefix of one random permutation, so a copy
    with more missing spikes lacks every spike the smaller ones lack.
    """
    present = np.flatnonzero(pattern.present)
    if max(counts, default=0) > present.size:
        raise ValueError("cannot remove more spikes than are present")
    order = rng.permutation(present)
    out = []
    for m in counts:
        x = pattern.spike_times.copy()
        x[order[:m]] = np.nan
        out.append(SpikePattern(x, pattern.window))
    return out


def _missing_task(args):
    cfg, rep = args
    n = cfg.noise
    run = memorize_run(cfg, n.missing_p, n.missing_delta_v, rep)
    params = cfg.kernel_params()
    rng = np.random.default_rng(derive_seed(cfg, _MISSING, n.missing_p, rep))
    copies = [drop_nested(x, n.missing, rng) for x in run.patterns]
    threshold = min(run.v_thr - n.jitter_margin, run.v_opt)
    rows = []
    for k, m in enumerate(n.missing):
        v = vmax_values([c[k] for c in copies], run.report.best_delays, params)
        rows.append([m, rep, run.report.exit_reason, threshold, float(np.mean(v > threshold))])
    return rows


def _exp_missing(cfg: ExperimentConfig) -> ExperimentResult:
    rows = [r for chunk in _map(cfg, _missing_task, [(cfg, rep) for rep in range(cfg.seeds)]) for r in chunk]
    runs = ResultTable(["n_missing", "seed", "exit_reason", "threshold", "recall"], rows)
    summary, records = _summarize(runs, ["n_missing"], ["recall"])
    return ExperimentResult(runs, summary, {"groups": records})


def calibrated_vpeak(cfg: ExperimentConfig, n_afferents: int) -> float:
    """``v_peak`` for ``n_afferents`` inputs: the configured value at the default N, else measured."""
    if n_afferents == cfg.n_afferents:
        return cfg.v_peak
    params = cfg.kernel_params()
    seed = derive_seed(cfg, _CALIBRATION, n_afferents)
    rng = np.random.default_rng(seed)
    patterns = generate_patterns(cfg.n_background, n_afferents, cfg.window, rng)
    delays = rng.uniform(0.0, cfg.learn.d_init, n_afferents)
    return calibrate_vpeak(vmax_values(patterns, delays, params), cfg.bin_width)


def classify_run(cfg: ExperimentConfig, n_afferents: int, p_total: int, delta_v: float, rep: int) -> dict:
    params = cfg.kernel_params()
    v_peak = calibrated_vpeak(cfg, n_afferents)
    pats = generate_patterns(p_total, n_afferents, cfg.window,
                             seed=derive_seed(cfg, _CLASSES, n_afferents, p_total, rep))
    c1, c2 = pats[:p_total // 2], pats[p_total // 2:]
    seed = derive_seed(cfg, _LEARN, n_afferents, p_total, _milli(delta_v), rep)
    report = train_classify(c1, c2, cfg.learn_config(v_peak + delta_v, v_peak - delta_v, rng_seed=seed), params)
    v1 = vmax_values(c1, report.best_delays, params)
    v2 = vmax_values(c2, report.best_delays, params) if c2 else np.empty(0)
    correct = np.count_nonzero(v1 > v_peak) + np.count_nonzero(v2 < v_peak)
    return {
        "N": n_afferents, "P": p_total, "alpha": p_total / n_afferents, "delta_v": delta_v, "seed": rep,
        "exit_reason": report.exit_reason, "iterations": report.iterations, "v_peak": v_peak,
        "accuracy": correct / p_total,
        "mean_vmax_class1": float(v1.mean()), "mean_vmax_class2": float(v2.mean()) if v2.size else float("nan"),
    }


_CLASSIFY_COLUMNS = ["N", "P", "alpha", "delta_v", "seed", "exit_reason", "iterations", "v_peak",
                     "accuracy", "mean_vmax_class1", "mean_vmax_class2"]


def _classify_task(args):
    rec = classify_run(*args)
    return [rec[c] for c in _CLASSIFY_COLUMNS]


def _exp_classify(cfg: ExperimentConfig) -> ExperimentResult:
    c = cfg.classify
    tasks = [(cfg, cfg.n_afferents, 2 * p, dv, rep) for p in c.p_per_class for dv in c.delta_v
             for rep in range(cfg.seeds)]
    runs = ResultTable(list(_CLASSIFY_COLUMNS), _map(cfg, _classify_task, tasks))
    summary, records = _summarize(runs, ["P", "delta_v"], ["accuracy", "mean_vmax_class1", "mean_vmax_class2"])
    return ExperimentResult(runs, summary, {"groups": records})


def _exp_load_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    c = cfg.classify
    tasks = [(cfg, n, max(2, int(round(a * n))), 0.0, rep) for n in c.n_list for a in c.alpha
             for rep in range(cfg.seeds)]
    runs = ResultTable(list(_CLASSIFY_COLUMNS), _map(cfg, _classify_task, tasks))
    summary, records = _summarize(runs, ["N", "alpha"], ["accuracy"])
    return ExperimentResult(runs, summary, {"groups": records})


def _exp_vmax_dist(cfg: ExperimentConfig) -> ExperimentResult:
    params = cfg.kernel_params()
    runs = ResultTable(["seed", "v_peak", "v_opt", "exit_reason"])
    hist_rows = ResultTable(["seed", "population", "bin_center", "density"])
    for rep in range(cfg.seeds):
        rng = np.random.default_rng(derive_seed(cfg, _CALIBRATION, cfg.n_afferents, rep))
        untrained_delays = rng.uniform(0.0, cfg.learn.d_init, cfg.n_afferents)
        untrained = vmax_values(background_patterns(cfg, rep), untrained_delays, params)
        v_peak = calibrate_vpeak(untrained, cfg.bin_width)
        run = memorize_run(cfg, cfg.dist.p, cfg.dist.delta_v, rep)
        for name, values in (("untrained", untrained), ("learnt", run.learnt_vmax),
                             ("background", run.background_vmax)):
            h = histogram(values, cfg.bin_width)
            for center, density in zip(h.centers, h.densities):
                hist_rows.add(rep, name, center, density)
        runs.add(rep, v_peak, run.v_opt, run.report.exit_reason)
    summary, records = _summarize(runs, [], ["v_peak", "v_opt"])
    return ExperimentResult(runs, summary, {"groups": records}, {"histograms.csv": hist_rows})


def _exp_tmax_dist(cfg: ExperimentConfig) -> ExperimentResult:
    params = cfg.kernel_params()
    runs = ResultTable(["seed", "pattern", "t_max_before", "t_max_after", "shift"])
    p = cfg.dist.p
    for rep in range(cfg.seeds):
        run = memorize_run(cfg, p, cfg.dist.tmax_delta_v, rep)
        # the delays the training run started from
        d0 = init_delays(cfg.n_afferents, run.learn, np.random.default_rng(run.learn.rng_seed))
        x = as_matrix(run.patterns)
        n_samples = evaluation_length(cfg.window, cfg.window, params)
        t0 = batch_vmax(x + d0, n_samples, params)[1]
        t1 = batch_vmax(x + run.report.best_delays.delays, n_samples, params)[1]
        for k in range(p):
            runs.add(rep, k, t0[k], t1[k], t1[k] - t0[k])
    edges = np.arange(0.0, 2 * cfg.window + cfg.dist.tmax_bin, cfg.dist.tmax_bin)
    before = np.histogram(runs.column("t_max_before"), edges)[0]
    after = np.histogram(runs.column("t_max_after"), edges)[0]
    summary = ResultTable(["bin_start", "count_before", "count_after"])
    for k in range(edges.size - 1):
        summary.add(edges[k], int(before[k]), int(after[k]))
    shifts = np.abs(np.asarray(runs.column("shift"), dtype=float))
    extra = {"median_abs_shift": float(np.median(shifts)),
             "fraction_within_tau": float(np.mean(shifts <= cfg.kernel.tau))}
    return ExperimentResult(runs, summary, extra)


def hw_run(cfg: ExperimentConfig, p: int, rep: int) -> dict:
    """Hardware-path memorization next to the idealized run on the same patterns."""
    params, lif = cfg.kernel_params(), cfg.lif_params()
    ideal = memorize_run(cfg, p, cfg.hw.delta_v, rep)
    report = hw_train_memorize(ideal.patterns, ideal.learn, lif, params)
    x_bg = as_matrix(background_patterns(cfg, rep))
    learnt = lif_vmax(as_matrix(ideal.patterns), report.best_delays, lif, params)
    background = lif_vmax(x_bg, report.best_delays, lif, params)
    v_opt = vopt_from_samples(learnt, background, cfg.bin_width).v_opt
    pairs = np.asarray(report.tmax_pairs, dtype=float).reshape(-1, 2)
    return {
        "P": p, "seed": rep, "exit_reason": report.exit_reason, "iterations": report.iterations,
        "hw_recall": float(np.mean(learnt > v_opt)), "hw_v_opt": v_opt,
        "ideal_recall": float(np.mean(ideal.learnt_vmax > ideal.v_opt)),
        "pairs": pairs,
    }


def _hw_task(args):
    return hw_run(*args)


def _exp_hw_compare(cfg: ExperimentConfig) -> ExperimentResult:
    results = _map(cfg, _hw_task, [(cfg, p, rep) for p in cfg.hw.p_list for rep in range(cfg.seeds)])
    runs = ResultTable(["P", "seed", "exit_reason", "iterations", "hw_v_opt", "hw_recall", "ideal_recall",
                        "tmax_spearman", "tmax_within_tau"])
    pairs_table = ResultTable(["P", "seed", "iteration", "t_est", "t_act"])
    tau = cfg.kernel.tau
    for r in results:
        pairs = r["pairs"]
        rho = float(spearmanr(pairs[:, 0], pairs[:, 1]).statistic) if len(pairs) > 2 else float("nan")
        within = float(np.mean(np.abs(pairs[:, 0] - pairs[:, 1]) <= tau)) if len(pairs) else float("nan")
        runs.add(r["P"], r["seed"], r["exit_reason"], r["iterations"], r["hw_v_opt"], r["hw_recall"],
                 r["ideal_recall"], rho, within)
        for k, (est, act) in enumerate(pairs):
            pairs_table.add(r["P"], r["seed"], k, est, act)
    summary, records = _summarize(runs, ["P"], ["hw_recall", "ideal_recall", "tmax_spearman", "tmax_within_tau"])
    est, act = np.asarray(pairs_table.column("t_est")), np.asarray(pairs_table.column("t_act"))
    extra = {"groups": records}
    if est.size > 2:
        extra["pooled_tmax_spearman"] = float(spearmanr(est, act).statistic)
        extra["pooled_tmax_within_tau"] = float(np.mean(np.abs(est - act) <= tau))
    return ExperimentResult(runs, summary, extra, {"tmax_pairs.csv": pairs_table})


def _exp_category_count(cfg: ExperimentConfig) -> ExperimentResult:
    c = cfg.category
    p_cat, p_c = category_count(CategoryParams(c.n, c.t, c.s, c.max_missing), c.per_missing_exponent)
    runs = ResultTable(["N", "T", "s", "max_missing", "P_T", "P_cat", "P_C"])
    runs.add(c.n, c.t, c.s, c.max_missing, str(c.t ** c.n), str(p_cat), str(p_c))
    return ExperimentResult(runs, runs, {"P_T": str(c.t ** c.n), "P_cat": str(p_cat), "P_C": str(p_c)})


_RUNNERS = {
    "vmax-dist": _exp_vmax_dist,
    "tmax-dist": _exp_tmax_dist,
    "memorize": _exp_memorize,
    "total-error": _exp_total_error,
    "classify": _exp_classify,
    "load-sweep": _exp_load_sweep,
    "tmax-noise": _exp_tmax_noise,
    "jitter-recall": _exp_jitter,
    "missing-spikes": _exp_missing,
    "hw-compare": _exp_hw_compare,
    "category-count": _exp_category_count,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if math.isnan(f) else float(f"{f:.6g}")
    return obj


def run_experiment(cfg: ExperimentConfig, out: Optional[str] = None) -> ExperimentResult:
    """Run ``cfg.experiment`` and, when an output directory is known, write its files.

    Files: ``runs.csv``, ``summary.csv``, any experiment-specific tables,
    ``summary.json`` (deterministic) and ``run_info.json`` (wall time).
    """
    out = out if out is not None else cfg.out
    out_dir = None
    if out is not None:
        out_dir = Path(out)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    start = time.perf_counter()
    result = _RUNNERS[cfg.experiment](cfg)
    elapsed = time.perf_counter() - start
    meta = {"experiment": cfg.experiment, "config_hash": cfg.digest(), "base_seed": cfg.base_seed,
            "seeds": cfg.seeds}
    for table in (result.runs, result.summary, *result.tables.values()):
        table.metadata.update(meta)
    if out_dir is not None:
        emit_plotdata(result.runs, out_dir / "runs.csv")
        emit_plotdata(result.summary, out_dir / "summary.csv")
        for name, table in result.tables.items():
            emit_plotdata(table, out_dir / name)
        summary = dict(meta, config=asdict(cfg), **result.extra)
        summary["config"].pop("out")
        summary["config"].pop("workers")
        (out_dir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        (out_dir / "run_info.json").write_text(json.dumps({"runtime_s": round(elapsed, 3)}) + "\n")
    return result
