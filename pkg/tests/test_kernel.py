import numpy as np
import pytest

from deltron.kernel import (DelayVector, KernelParams, MembraneTrace, SpikePattern, batch_vmax,
                            epsp_kernel, epsp_kernel_derivative, evaluation_length, find_vmax,
                            membrane_potential, membrane_potential_direct, recognize)

P = KernelParams()


def test_kernel_trivial_values():
    assert epsp_kernel(0.0, P) == 0.0
    assert epsp_kernel(-5.0, P) == 0.0
    assert epsp_kernel_derivative(-1.0, P) == 0.0


def test_kernel_peak_matches_fine_grid_oracle():
    t = np.arange(0.0, 40.0, 0.001)
    k = epsp_kernel(t, P)
    assert P.peak_time == pytest.approx(t[np.argmax(k)], abs=1e-3)
    assert P.peak_time == pytest.approx(6.93, abs=0.01)
    assert P.peak_value == pytest.approx(1.00, abs=0.01)


@pytest.mark.parametrize("t", [0.0, 0.5, 3.0, 6.9314718, 12.0, 40.0])
def test_derivative_matches_finite_difference(t):
    h = 1e-4
    if t == 0.0:
        fd = (epsp_kernel(t + h, P) - epsp_kernel(t, P)) / h   # one-sided at the onset
        tol = 1e-3
    else:
        fd = (epsp_kernel(t + h, P) - epsp_kernel(t - h, P)) / (2 * h)
        tol = 1e-6
    assert epsp_kernel_derivative(t, P) == pytest.approx(fd, abs=tol)


def test_derivative_at_onset_and_peak():
    assert epsp_kernel_derivative(0.0, P) == pytest.approx(2.12 * (1 / 3.75 - 1 / 15), rel=1e-12)
    assert epsp_kernel_derivative(P.peak_time, P) == pytest.approx(0.0, abs=1e-12)


def test_invalid_params():
    with pytest.raises(ValueError):
        KernelParams(tau=3.0, tau_s=3.75)
    with pytest.raises(ValueError):
        KernelParams(v0=-1.0)


def test_empty_pattern_gives_zero_trace():
    trace = membrane_potential(SpikePattern([None, None], 10), [0.0, 0.0], P)
    assert not trace.values.any()
    assert find_vmax(trace) == find_vmax(MembraneTrace(np.zeros(5), 0.1))
    assert find_vmax(trace).t_max == trace.t_start


def test_coincident_spikes_double_the_trace():
    one = membrane_potential(SpikePattern([10.0, None], 400), [0.0, 0.0], P, 600)
    two = membrane_potential(SpikePattern([10.0, 10.0], 400), [0.0, 0.0], P, 600)
    np.testing.assert_allclose(two.values, 2 * one.values, rtol=0, atol=1e-13)


def test_single_spike_peak():
    res = find_vmax(membrane_potential(SpikePattern([10.0], 400), [0.0], P))
    assert res.v_max == pytest.approx(1.00, abs=0.01)
    assert res.t_max == pytest.approx(16.93, abs=0.05)


def test_recursive_filter_matches_direct_sum():
    rng = np.random.default_rng(1)
    x = rng.uniform(1, 400, 100)
    x[rng.choice(100, 7, replace=False)] = np.nan
    d = rng.uniform(0, 50, 100)
    pat = SpikePattern(x, 400)
    fast, slow = membrane_potential(pat, d, P), membrane_potential_direct(pat, d, P)
    np.testing.assert_allclose(fast.values, slow.values, atol=1e-9)
    v, t = batch_vmax((x + d)[None], fast.values.size, P)
    assert v[0] == pytest.approx(fast.values.max(), abs=1e-12)
    assert t[0] == pytest.approx(find_vmax(fast).t_max)


def test_grid_refinement_converges():
    x = np.array([3.37, 11.81, 15.02])
    d = np.zeros(3)
    coarse = find_vmax(membrane_potential(SpikePattern(x, 20), d, P)).v_max
    fine = find_vmax(membrane_potential(SpikePattern(x, 20), d, KernelParams(grid_step=0.001))).v_max
    assert coarse <= fine + 1e-12
    assert fine - coarse < 5e-3


def test_causality_no_potential_before_first_arrival():
    trace = membrane_potential(SpikePattern([50.0, 80.0], 400), [10.0, 0.0], P)
    assert not trace.values[trace.times <= 60.0].any()


def test_find_vmax_ties_go_to_earliest():
    trace = MembraneTrace(np.array([0.0, 2.0, 1.0, 2.0]), 0.5, t_start=1.0)
    assert find_vmax(trace).t_max == 1.5


@pytest.mark.parametrize("peak,v_thr,expected_y", [(10.5, 10.7, 0), (11.0, 10.7, 1), (0.0, 1.0, 0)])
def test_recognize(peak, v_thr, expected_y):
    values = peak * np.sin(np.linspace(0, np.pi, 101))
    res = recognize(MembraneTrace(values, 0.1), v_thr)
    assert res.y == expected_y
    assert (res.n_spk >= 1) == bool(expected_y)


def test_delay_vector_clipping_and_validation():
    assert DelayVector.clipped([-1.0, 5.0, 500.0], 400).delays.tolist() == [0.0, 5.0, 400.0]
    with pytest.raises(ValueError):
        DelayVector([-1.0], 400)


def test_spike_pattern_invariants():
    with pytest.raises(ValueError):
        SpikePattern([0.0, 3.0], 10)
    with pytest.raises(ValueError):
        SpikePattern([11.0], 10)
    p = SpikePattern([1.0, None, 4.0], 10)
    assert p.n_missing == 1 and len(p) == 3


def test_evaluation_length_covers_horizon():
    n = evaluation_length(400, 50, P)
    assert (n - 1) * P.grid_step == pytest.approx(400 + 50 + 5 * P.tau)
