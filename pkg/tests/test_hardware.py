import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from deltron.hardware import (DEFAULT_GAIN, InsufficientSpikes, LIFParams, SpikeTrain, calibrate_gain,
                              epsc_current, estimate_tmax, hw_train_memorize, lif_simulate, lif_vmax)
from deltron.kernel import KernelParams, MembraneTrace, SpikePattern, as_matrix, find_vmax
from deltron.learning import ALL_LEARNT, LearnConfig
from deltron.patterns import generate_patterns

K = KernelParams()
LIF = LIFParams()


def test_epsc_single_and_pair():
    one = epsc_current(SpikePattern([10.0, None], 400), [5.0, 0.0], LIF, K)
    pk = find_vmax(one)
    assert pk.v_max == pytest.approx(1.0, abs=0.01)
    assert pk.t_max == pytest.approx(15.0 + 6.93, abs=0.05)
    two = epsc_current(SpikePattern([10.0, 10.0], 400), [5.0, 5.0], LIF, K, one.values.size)
    np.testing.assert_allclose(two.values, 2 * one.values, atol=1e-13)
    assert not epsc_current(SpikePattern([None], 400), [0.0], LIF, K).values.any()


def test_zero_current_never_fires():
    train, v = lif_simulate(MembraneTrace(np.zeros(1000), 0.1), LIF)
    assert len(train) == 0 and v == 0.0


@pytest.mark.parametrize("current", [8.0, 12.0, 20.0])
def test_constant_current_isi_matches_closed_form(current):
    lif = LIFParams(gain=1.0)
    h = 0.001
    train, _ = lif_simulate(MembraneTrace(np.full(200_000, current), h), lif)
    drive = lif.gain * current * lif.tau_n
    expected = lif.tau_n * math.log(drive / (drive - lif.v_thr_low))
    # one-step quantization of each threshold crossing
    assert np.median(train.isi) == pytest.approx(expected, abs=2 * h)


def test_euler_agrees_with_exact_on_fine_grid():
    cur = MembraneTrace(np.full(50_000, 12.0), 0.001)
    a, _ = lif_simulate(cur, LIFParams(gain=1.0), method="exact")
    b, _ = lif_simulate(cur, LIFParams(gain=1.0), method="euler")
    assert abs(len(a) - len(b)) <= 1


def test_spike_count_monotone_in_current_scale():
    pat = generate_patterns(1, 100, 400, seed=0)[0]
    cur = epsc_current(pat, np.zeros(100), LIF, K)
    counts = [len(lif_simulate(MembraneTrace(s * cur.values, cur.grid_step), LIF)[0]) for s in (0.5, 1, 2, 4)]
    assert counts == sorted(counts)


def test_higher_current_means_shorter_isi():
    rng = np.random.default_rng(1)
    peaks, inv_isi = [], []
    for p in generate_patterns(40, 100, 400, rng):
        cur = epsc_current(p, rng.uniform(0, 50, 100), LIF, K)
        train, _ = lif_simulate(cur, LIF)
        if len(train) >= 2:
            peaks.append(cur.values.max())
            inv_isi.append(1 / train.isi.min())
    assert spearmanr(peaks, inv_isi).statistic > 0


@pytest.mark.parametrize("spikes,expected", [([10, 20, 24, 40], 22.0), ([5, 15], 10.0), ([0, 3, 6, 9], 1.5)])
def test_estimate_tmax(spikes, expected):
    assert estimate_tmax(SpikeTrain(spikes)) == expected


def test_estimate_tmax_needs_two_spikes():
    with pytest.raises(InsufficientSpikes):
        estimate_tmax(SpikeTrain([3.0]))


def test_lif_vmax_matches_simulation_peak():
    rng = np.random.default_rng(2)
    pats = generate_patterns(5, 100, 400, rng)
    d = rng.uniform(0, 50, 100)
    no_reset = LIFParams(reset_to_zero=False)
    fast = lif_vmax(as_matrix(pats), d, no_reset, K)
    slow = [lif_simulate(epsc_current(p, d, no_reset, K), no_reset, threshold=np.inf)[1] for p in pats]
    np.testing.assert_allclose(fast, slow, rtol=1e-9)


def test_default_gain_fires_on_almost_every_untrained_pattern():
    rng = np.random.default_rng(3)
    pats = generate_patterns(1000, 100, 400, rng)
    d = rng.uniform(0, 50, 100)
    v = lif_vmax(as_matrix(pats), d, LIF, K)
    assert np.mean(v <= LIF.v_thr_low) < 0.01
    assert calibrate_gain(pats, d, LIF, K, margin=2.0) == pytest.approx(DEFAULT_GAIN, rel=0.05)


def test_hw_single_pattern_is_learnt():
    rep = hw_train_memorize(generate_patterns(1, 100, 400, seed=4), LearnConfig(rng_seed=4), LIF, K)
    assert rep.exit_reason == ALL_LEARNT
    # one pattern may already fire at V_thrH before any update
    assert len(rep.tmax_pairs) == rep.iterations < 500
