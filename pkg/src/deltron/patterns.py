"""Random spike patterns, perturbations, pattern files and category counting."""
from __future__ import annotations

from dataclasses import dataclass
import io
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .kernel import SpikePattern

ABSENT = "*"


@dataclass(frozen=True)
class CategoryParams:
    n: int
    t: int
    s: int = 0
    max_missing: int = 0

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("similarity radius s must be >= 0")
        if not 0 <= self.max_missing <= self.n:
            raise ValueError("max_missing must lie in [0, N]")
        if self.t < 1:
            raise ValueError("T must be >= 1")


@dataclass(frozen=True)
class NoiseConfig:
    jitter_sigma: float = 0.0
    n_missing: int = 0
    tmax_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.jitter_sigma, self.n_missing, self.tmax_sigma) < 0:
            raise ValueError("noise parameters must be non-negative")


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_patterns(n: int, n_afferents: int, window: int, seed=None) -> list[SpikePattern]:
    """``n`` patterns with spike times iid uniform on the integers ``1..window``."""
    rng = _rng(seed)
    times = rng.integers(1, window + 1, size=(n, n_afferents)).astype(float)
    return [SpikePattern(row, window) for row in times]


def jitter(pattern: SpikePattern, sigma: float, seed=None) -> SpikePattern:
    """Add Gaussian noise to every present spike, clipped back into ``[1, T]``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return pattern
    rng = _rng(seed)
    x = pattern.spike_times
    noisy = np.clip(x + rng.normal(0.0, sigma, size=x.shape), 1.0, pattern.window)
    return SpikePattern(noisy, pattern.window)


def drop_spikes(pattern: SpikePattern, m: int, seed=None) -> SpikePattern:
    """Remove exactly ``m`` present spikes chosen uniformly at random."""
    present = np.flatnonzero(pattern.present)
    if m < 0 or m > present.size:
        raise ValueError(f"cannot drop {m} spikes from a pattern with {present.size} present")
    if m == 0:
        return pattern
    rng = _rng(seed)
    x = pattern.spike_times.copy()
    x[rng.choice(present, size=m, replace=False)] = np.nan
    return SpikePattern(x, pattern.window)


def category_count(params: CategoryParams, per_missing_exponent: bool = False) -> tuple[int, int]:
    """Exact category size and number of categories.

    Returns ``(p_cat, p_c)`` with ``p_cat = sum_m C(N, m) (2s+1)^N`` for
    ``m = 0..M`` and ``p_c = T^N // p_cat``.  With ``per_missing_exponent``
    the jitter factor becomes ``(2s+1)^(N-m)``, counting only the surviving
    spikes.
    """
    n, width = params.n, 2 * params.s + 1
    p_cat = sum(
        comb(n, m) * width ** ((n - m) if per_missing_exponent else n)
        for m in range(params.max_missing + 1)
    )
    return p_cat, params.t ** n // p_cat


def write_patterns(patterns: Sequence[SpikePattern], path) -> None:
    """Write patterns one per line; ``*`` marks a missing spike."""
    Path(path).write_text(dumps_patterns(patterns))


def dumps_patterns(patterns: Sequence[SpikePattern]) -> str:
    if not patterns:
        raise ValueError("empty pattern set")
    n, window = len(patterns[0]), patterns[0].window
    out = io.StringIO()
    out.write(f"# N={n} T={_fmt(window)}\n")
    for p in patterns:
        if len(p) != n or p.window != window:
            raise ValueError("all patterns in a file must share N and T")
        out.write(",".join(ABSENT if np.isnan(t) else _fmt(t) for t in p.spike_times) + "\n")
    return out.getvalue()


def read_patterns(path) -> list[SpikePattern]:
    return loads_patterns(Path(path).read_text())


def loads_patterns(text: str) -> list[SpikePattern]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ValueError("pattern file must start with a '# N=.. T=..' header")
    header = dict(tok.split("=", 1) for tok in lines[0].lstrip("#").split())
    n, window = int(header["N"]), float(header["T"])
    patterns = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n:
            raise ValueError(f"line {lineno}: expected {n} spike times, got {len(cells)}")
        patterns.append(SpikePattern([None if c == ABSENT else float(c) for c in cells], window))
    return patterns


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))
