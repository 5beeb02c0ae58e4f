import json

import numpy as np
import pytest

from deltron.kernel import KernelParams, SpikePattern, epsp_kernel, epsp_kernel_derivative
from deltron.learning import (ALL_LEARNT, LearnConfig, TrainReport, grad_delta, interleave, recall,
                              train_classify, train_memorize)
from deltron.patterns import generate_patterns

P = KernelParams()


def test_grad_delta_examples():
    x = SpikePattern([10.0, 10.0, 30.0, None], 400)
    d = np.zeros(4)
    g = grad_delta(x, d, 10.0 + P.peak_time, P)
    assert g[0] == pytest.approx(0.0, abs=1e-12)
    assert g[2] == 0.0 and g[3] == 0.0     # late and absent spikes
    g0 = grad_delta(x, d, 10.0 + 1e-9, P)
    assert g0[0] == pytest.approx(-0.424, abs=1e-6)


def test_grad_delta_raises_potential_at_tmax():
    # a small step along the gradient increases V(t_max)
    rng = np.random.default_rng(0)
    x, d = rng.uniform(1, 400, 100), rng.uniform(0, 50, 100)
    t = 250.0
    v = lambda dd: np.sum(epsp_kernel(t - x - dd, P))
    g = grad_delta(SpikePattern(x, 400), d, t, P)
    assert v(d + 1e-3 * g) > v(d)
    assert np.allclose(g, -np.where(t - x - d >= 0, epsp_kernel_derivative(t - x - d, P), 0.0))


def test_single_pattern_is_learnt():
    rep = train_memorize(generate_patterns(1, 100, 400, seed=1), LearnConfig(rng_seed=1), P)
    assert rep.exit_reason == ALL_LEARNT
    assert rep.best_count == 1
    assert rep.iterations < 500


def test_training_is_deterministic_and_bounded():
    pats = generate_patterns(15, 100, 400, seed=2)
    a = train_memorize(pats, LearnConfig(rng_seed=4), P)
    b = train_memorize(pats, LearnConfig(rng_seed=4), P)
    assert a.to_json() == b.to_json()
    assert a.best_delays.delays.min() >= 0 and a.best_delays.delays.max() <= 400
    assert all(np.diff(a.best_history) >= 0)


def test_report_json_roundtrip(tmp_path):
    rep = train_memorize(generate_patterns(3, 50, 400, seed=3), LearnConfig(rng_seed=0), P)
    path = tmp_path / "r.json"
    rep.to_json(path)
    back = TrainReport.from_dict(json.loads(path.read_text()))
    assert back == rep


def test_learnt_patterns_pass_recall_at_training_threshold():
    pats = generate_patterns(10, 100, 400, seed=5)
    rep = train_memorize(pats, LearnConfig(rng_seed=5), P)
    assert recall(pats, rep.best_delays, 10.7, P).fraction == rep.best_count / 10
    assert recall(pats, rep.best_delays, 0.0, P).fraction == 1.0


def test_empty_class2_matches_memorization_score():
    pats = generate_patterns(5, 100, 400, seed=6)
    cfg = LearnConfig(rng_seed=2, v_thr=10.7, v_thr_minus=9.7, gated=True, minima_mode="total")
    cls = train_classify(pats, [], cfg, P)
    mem = train_memorize(pats, cfg, P)
    assert cls.exit_reason == mem.exit_reason == ALL_LEARNT
    # everything above v_thr is also on the correct side of v_peak
    assert recall(pats, cls.best_delays, cfg.v_thr, P).fraction == 1.0


def test_classification_ungated_default_separates_classes():
    pats = generate_patterns(20, 100, 400, seed=7)
    rep = train_classify(pats[:10], pats[10:], LearnConfig(rng_seed=7, v_thr=10.2, v_thr_minus=10.2), P)
    assert rep.best_count >= 17
    assert rep.exit_reason in ("all_learnt", "minima_budget")


def test_eta_schedule_and_resolution():
    cfg = LearnConfig()
    assert [cfg.eta(i) for i in (0, 499, 500, 4499, 10_000)] == [5.0, 5.0, 4.5, 1.0, 0.5]
    assert cfg.resolved(gated=True, minima_mode="total").gated is True
    assert LearnConfig(gated=False).resolved(gated=True).gated is False
    with pytest.raises(ValueError):
        LearnConfig(minima_mode="sometimes")


def test_interleave():
    assert interleave(3, 1) == [0, 3, 1, 2]
    assert interleave(0, 2) == [0, 1]
