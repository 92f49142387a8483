import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from core.errors import (ComplexSpectrumError, GridMismatchError, InvalidProblemError,
                         NonPositiveNormError, WrongScenarioError)
from features.analysis.analysis import (SLOWEST_MODE, fit_decay, kernel_bounds, kernel_pde_residual,
                                        l2_norm, lyapunov_monitor, modal_rate_oracle, norm_series,
                                        reciprocity_residual, scaled_second_difference)
from features.kernels.kernels import (ObserverSetup, control_kernel, extract_gains, inverse_kernel,
                                      observer_kernel_anticollocated, observer_kernel_collocated)
from features.simulation.simulation import (FieldPair, ICPreset, KernelBundle, Scenario, SimConfig,
                                            run_scenario)


def test_l2_norm_examples():
    x = np.linspace(0.0, 1.0, 201)
    assert l2_norm(FieldPair.zeros(200)) == 0.0
    assert l2_norm(FieldPair(np.ones(201), np.zeros(201))) == pytest.approx(1.0, abs=1e-14)
    assert l2_norm(FieldPair(np.cos(0.5 * np.pi * x), np.zeros(201))) == pytest.approx(math.sqrt(0.5), abs=1e-4)


def test_fit_decay_recovers_exact_rate():
    t = np.linspace(0.0, 2.0, 101)
    fit = fit_decay(t, 3.0 * np.exp(-2.4674 * t))
    assert fit.rate == pytest.approx(2.4674, abs=1e-6)
    assert fit.window == (1.0, 2.0)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.kappa(3.0) == pytest.approx(1.0, rel=1e-9)


def test_fit_decay_rejects_bad_input():
    t = np.linspace(0.0, 1.0, 51)
    norms = np.exp(-t)
    norms[40] = 0.0
    with pytest.raises(NonPositiveNormError):
        fit_decay(t, norms)
    with pytest.raises(InvalidProblemError):
        fit_decay(t[:5], np.exp(-t[:5]))


@pytest.mark.parametrize("lambdas, rate", [((0, 0), -2.4674), ((20, 10), 11.6747), ((1, 1), -1.4674)])
def test_modal_rate_oracle(lambdas, rate):
    assert modal_rate_oracle(*lambdas) == pytest.approx(rate, abs=1e-4)


@given(st.floats(min_value=0, max_value=1e3), st.floats(min_value=0, max_value=1e3))
def test_modal_rate_oracle_is_symmetric(l1, l2):
    assert modal_rate_oracle(l1, l2) == modal_rate_oracle(l2, l1)


def test_modal_rate_oracle_refuses_complex_spectrum():
    with pytest.raises(ComplexSpectrumError):
        modal_rate_oracle(5.0, -1.0)


def test_reciprocity_trivial_and_decoupled():
    assert reciprocity_residual(control_kernel(0, 0, 16), inverse_kernel(0, 0, 16)) == 0.0
    assert reciprocity_residual(control_kernel(20, 0, 64), inverse_kernel(20, 0, 64)) <= 1e-8


def test_reciprocity_converges_second_order(control_pair):
    coarse = reciprocity_residual(*control_pair[128])
    fine = reciprocity_residual(*control_pair[256])
    assert coarse / fine >= 3.5
    assert fine <= 4e-3


def test_reciprocity_requires_matching_grids(control_pair):
    with pytest.raises(GridMismatchError):
        reciprocity_residual(control_pair[128][0], control_pair[256][1])


def test_pde_residual_of_closed_forms():
    assert kernel_pde_residual(control_kernel(0, 0, 32)) == 0.0
    assert kernel_pde_residual(control_kernel(20, 0, 32)) <= 1e-10
    assert kernel_pde_residual(observer_kernel_collocated(0, 10, 32)) <= 1e-10
    with pytest.raises(InvalidProblemError):
        kernel_pde_residual(control_kernel(20, 10, 16))


def test_pde_residual_converges_second_order(control_pair):
    coarse = kernel_pde_residual(control_pair[128][0])
    fine = kernel_pde_residual(control_pair[256][0])
    assert coarse / fine >= 3.5
    coarse = kernel_pde_residual(control_pair[128][1])
    fine = kernel_pde_residual(control_pair[256][1])
    assert coarse / fine >= 3.5


@pytest.mark.parametrize("solver", [observer_kernel_anticollocated, observer_kernel_collocated])
def test_observer_pde_residual_converges(solver):
    coarse = kernel_pde_residual(solver(20.0, 10.0, 128))
    fine = kernel_pde_residual(solver(20.0, 10.0, 256))
    assert coarse / fine >= 3.5


def test_smoothness_of_control_kernel(control_pair):
    coarse = scaled_second_difference(control_pair[128][0].Kuv)
    fine = scaled_second_difference(control_pair[256][0].Kuv)
    assert fine / coarse <= 1.25


def test_kernel_bounds(control_pair):
    K, L = control_pair[128]
    k_inf, l_inf, overshoot = kernel_bounds(K, L)
    assert k_inf >= 10.0 and l_inf >= 10.0
    assert overshoot == pytest.approx((1 + k_inf) * (1 + l_inf))


def _output_feedback_run(lambda1, lambda2, ic, observer_ic, n=32):
    cfg = SimConfig(lambda1, lambda2, Scenario.OUTPUT_FEEDBACK_ANTICOLLOCATED, nx=32, dt=2e-3,
                    t_final=1.0, record_every=10, ic=ic, observer_ic=observer_ic)
    K = control_kernel(lambda1, lambda2, n)
    P = observer_kernel_anticollocated(lambda1, lambda2, n)
    traj = run_scenario(cfg, KernelBundle(control=K, observer=P))
    return traj, K, extract_gains(P, ObserverSetup.ANTI_COLLOCATED), P


def test_lyapunov_zero_state():
    zero = ICPreset("constant", (0.0,))
    report = lyapunov_monitor(*_output_feedback_run(20.0, 10.0, zero, zero))
    assert not report.V.any()
    assert report.bound_ok
    assert report.A == pytest.approx(2 * (report.C ** 2 + report.D ** 2))
    assert report.C >= 0 and report.D >= 0


def test_lyapunov_heat_case():
    report = lyapunov_monitor(*_output_feedback_run(0.0, 0.0, ICPreset("cos_half_pi", (1.0,)),
                                                    ICPreset("constant", (0.0,))))
    assert report.A == 0.0
    assert not report.Q1.any() and not report.Q2.any()
    assert np.all(report.V >= 0)
    assert report.bound_ok
    assert report.monotone


def test_lyapunov_needs_output_feedback_run():
    cfg = SimConfig(0.0, 0.0, Scenario.OPEN_LOOP, nx=32, dt=1e-2, t_final=0.1, record_every=1)
    traj = run_scenario(cfg, KernelBundle())
    K = control_kernel(0.0, 0.0, 32)
    P = observer_kernel_anticollocated(0.0, 0.0, 32)
    with pytest.raises(WrongScenarioError):
        lyapunov_monitor(traj, K, extract_gains(P, ObserverSetup.ANTI_COLLOCATED), P)


def test_norm_series_columns():
    cfg = SimConfig(0.0, 0.0, Scenario.OPEN_LOOP, nx=32, dt=1e-2, t_final=0.1, record_every=1)
    series = norm_series(run_scenario(cfg, KernelBundle()))
    assert list(series) == ["t", "l2_u", "l2_v", "l2_w", "l2_err"]
    assert np.all(np.isnan(series["l2_err"]))
    np.testing.assert_allclose(series["l2_w"] ** 2, series["l2_u"] ** 2 + series["l2_v"] ** 2)


def test_target_rate_constant():
    assert SLOWEST_MODE == pytest.approx(2.4674, abs=1e-4)
