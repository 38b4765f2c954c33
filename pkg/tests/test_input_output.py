import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.signal import argrelmin

from _oracles import trapezoid_filtered
from conftest import MHZ
from photon_portrait._numerics import log_slope, relative_l2
from photon_portrait.core import DrivePulse, FilterParams, QubitParams
from photon_portrait.filter_chain import filter_apply
from photon_portrait.input_output import (
    DrivenQubitConfig,
    SteadyState,
    analytic_filtered_trace,
    analytic_portrait,
    bloch_rhs,
    detuned_fit_model,
    filtered_response,
    free_decay,
    steady_state,
    steady_state_arc,
    unfiltered_output,
)
from photon_portrait.wigner_weisskopf import WWModel, ww_filtered_portrait

GAMMA = 1.5 * MHZ
KAPPA = 2.5 * MHZ
W_Q = 2 * math.pi * 7.3
QUBIT = QubitParams.from_total(W_Q, GAMMA, 1.0)


def config(alpha, beta=1.0, delta_qd=0.0, center=0.0, gain=1.0, noise=0.0, seed=0, gamma=GAMMA):
    q = QubitParams.from_total(W_Q, gamma, beta)
    w_d = W_Q - delta_qd
    return DrivenQubitConfig(q, DrivePulse(alpha, w_d, -1000.0, 0.0), FilterParams(w_d + center, KAPPA, gain, noise, seed))


# -- steady state -------------------------------------------------------------


def test_steady_state_limits():
    ss = steady_state(QUBIT, 0.0)
    assert ss.s0 == 0 and ss.rho0 == 0
    strong = steady_state(QUBIT, 1e4)
    assert strong.rho0 == pytest.approx(0.5, abs=1e-6) and abs(strong.s0) < 1e-4


def test_quarter_population_and_ode_oracle():
    # alpha^2 beta gamma = gamma^2/4 gives rho0 = 1/4; oracle: integrate the Bloch equations
    alpha = math.sqrt(GAMMA / 4)
    ss = steady_state(QUBIT, alpha)
    assert ss.rho0 == pytest.approx(0.25, abs=1e-15)

    def rhs(t, y):
        ds, dr = bloch_rhs(y[0] + 1j * y[1], y[2], QUBIT, alpha)
        return [ds.real, ds.imag, dr]

    sol = solve_ivp(rhs, (0, 60 / GAMMA), [0, 0, 0], method="DOP853", rtol=1e-12, atol=1e-14)
    s_end = sol.y[0, -1] + 1j * sol.y[1, -1]
    assert abs(s_end - ss.s0) < 1e-8 and abs(sol.y[2, -1] - ss.rho0) < 1e-8


@given(
    alpha=st.floats(0.0, 2.0),
    delta=st.floats(-0.2, 0.2),
    beta=st.floats(0.05, 1.0),
    gamma=st.floats(1e-4, 0.1),
)
def test_steady_state_is_fixed_point(alpha, delta, beta, gamma):
    q = QubitParams.from_total(W_Q, gamma, beta)
    ss = steady_state(q, alpha, delta)
    ds, dr = bloch_rhs(ss.s0, ss.rho0, q, alpha, delta)
    assert abs(ds) < 1e-12 and abs(dr) < 1e-12


def test_steady_states_fill_bloch_ball_only():
    alphas = np.linspace(0, 1.0, 50)
    deltas = np.linspace(-0.1, 0.1, 50)
    for a in alphas:
        for d in deltas:
            v = steady_state(QUBIT, a, d).bloch_vector
            assert np.linalg.norm(v) <= 1 + 1e-12


def test_steady_state_validation():
    with pytest.raises(ValueError):
        SteadyState(0.0, 0.7)
    with pytest.raises(ValueError):
        SteadyState(0.6, 0.1)


def test_arc_endpoints_and_sqrt2_pair():
    arc = steady_state_arc(QUBIT, [0.0, 1e4])
    assert np.allclose(arc[0], [0, 0, -1]) and np.allclose(arc[1], [0, 0, 0], atol=1e-4)
    a = 0.6 * math.sqrt(GAMMA)
    pa, pb = steady_state_arc(QUBIT, [a, math.sqrt(2) * a])
    # both on the resonant arc: x = 0 and y^2/2 + (z + 1/2)^2 = 1/4
    for p in (pa, pb):
        assert abs(p[0]) < 1e-15
        assert p[1] ** 2 / 2 + (p[2] + 0.5) ** 2 == pytest.approx(0.25, abs=1e-12)
    assert np.linalg.norm(pb) < np.linalg.norm(pa)


# -- free decay ---------------------------------------------------------------


def test_free_decay_formula_and_half_life():
    ss = steady_state(QUBIT, 0.05)
    t = np.linspace(0, 2000, 2001)
    tr = free_decay(QUBIT, ss, t)
    assert abs(tr.samples[0]) == pytest.approx(math.sqrt(GAMMA / 2) * abs(ss.s0), rel=1e-14)
    half = 2 * math.log(2) / GAMMA
    assert abs(free_decay(QUBIT, ss, [half, half + 1]).samples[0]) == pytest.approx(0.5 * abs(tr.samples[0]), rel=1e-12)
    assert np.all(free_decay(QUBIT, SteadyState(0j, 0.5), t).samples == 0)
    framed = free_decay(QUBIT, ss, t, frame_omega=W_Q - 0.01)
    assert np.allclose(np.abs(framed.samples), np.abs(tr.samples))


def test_unfiltered_output_is_continuous_in_form():
    cfg = config(math.sqrt(GAMMA))
    t = np.arange(-100.0, 500.0, 1.0)
    raw = unfiltered_output(cfg, t)
    ss = steady_state(cfg.qubit, cfg.drive.alpha)
    assert np.allclose(raw.samples[t >= 0], free_decay(cfg.qubit, ss, t[t >= 0]).samples)


# -- closed form ----------------------------------------------------------------


def test_zero_drive_gives_zero_trace():
    tr = analytic_filtered_trace(config(0.0), np.arange(-100.0, 100.0))
    assert np.all(tr.samples == 0)


def test_pole_is_a_domain_error():
    with pytest.raises(ValueError):
        filtered_response(np.zeros(3), 0.1, GAMMA, 1.0, 0.0, 0.0, 0.0, 0.0)


def test_continuity_at_stop():
    for center in (0.0, 3 * MHZ):
        for alpha in (0.01, math.sqrt(GAMMA), 1.0):
            lo, hi = filtered_response(np.array([-1e-12, 1e-12]), alpha, GAMMA, 0.8, 0.2 * MHZ, 0.0, center, KAPPA)
            assert abs(lo - hi) < 1e-10


def test_removable_singularity_is_finite():
    # filter pole coinciding with the emitter pole
    t = np.linspace(0, 500, 11)
    vals = filtered_response(t, 0.1, GAMMA, 1.0, 0.01, 0.0, 0.01, GAMMA / 2)
    near = filtered_response(t, 0.1, GAMMA, 1.0, 0.01, 0.0, 0.01, GAMMA / 2 * (1 + 1e-7))
    assert np.all(np.isfinite(vals))
    assert np.allclose(vals, near, rtol=1e-5)


@pytest.mark.parametrize("center_mhz", [-4.0, 0.0, 2.0])
@pytest.mark.parametrize("alpha_sq_over_gamma", [0.01, 1.0, 5.0])
def test_closed_form_matches_trapezoid_convolution(center_mhz, alpha_sq_over_gamma):
    alpha = math.sqrt(alpha_sq_over_gamma * GAMMA)
    delta_qd = 0.2 * MHZ
    t = np.arange(-100.0, 1500.0, 2.0)
    cfg = config(alpha, beta=0.9, delta_qd=delta_qd, center=center_mhz * MHZ)
    ours = analytic_filtered_trace(cfg, t).samples
    ref = trapezoid_filtered(alpha, GAMMA, 0.9, delta_qd, center_mhz * MHZ, KAPPA, 1.0, t)
    assert relative_l2(ours, ref) < 1e-3


def test_closed_form_matches_exact_filter_of_piecewise_signal():
    # second route: the package's own exact-step filter on the unfiltered field
    cfg = config(math.sqrt(GAMMA), beta=0.9, delta_qd=0.1 * MHZ, center=1 * MHZ)
    t = np.arange(-1000.0, 1500.0, 0.25)
    raw = unfiltered_output(cfg, t)
    filt = FilterParams(1 * MHZ, KAPPA)
    y = filter_apply(raw, filt, prefill=True)
    ref = analytic_filtered_trace(cfg, t)
    assert relative_l2(y.samples, ref.samples) < 1e-3


def test_tail_slope():
    cfg = config(math.sqrt(GAMMA))
    t = np.arange(600.0, 1500.0, 1.0)
    assert log_slope(t, analytic_filtered_trace(cfg, t).samples) == pytest.approx(-GAMMA / 2, rel=0.01)


def test_gain_scales_linearly():
    t = np.arange(-100.0, 500.0)
    a = analytic_filtered_trace(config(0.1, gain=1.0), t).samples
    b = analytic_filtered_trace(config(0.1, gain=2.0), t).samples
    assert np.allclose(b, 2 * a, rtol=1e-15)


def test_noise_is_seeded():
    t = np.arange(-100.0, 500.0)
    a = analytic_filtered_trace(config(0.1, noise=0.01, seed=4), t).samples
    b = analytic_filtered_trace(config(0.1, noise=0.01, seed=4), t).samples
    c = analytic_filtered_trace(config(0.1, noise=0.0), t).samples
    assert np.array_equal(a, b)
    assert np.std(a - c) == pytest.approx(0.01, rel=0.1)


def test_short_drive_warns():
    cfg = DrivenQubitConfig(QUBIT, DrivePulse(0.1, W_Q, -10.0, 0.0), FilterParams(W_Q, KAPPA))
    with pytest.warns(UserWarning):
        analytic_filtered_trace(cfg, np.arange(0.0, 10.0))


def test_missing_filter_is_rejected():
    cfg = DrivenQubitConfig(QUBIT, DrivePulse(0.1, W_Q, -1000.0, 0.0))
    with pytest.raises(ValueError):
        analytic_filtered_trace(cfg, np.arange(3.0))
    with pytest.raises(ValueError):
        analytic_portrait(cfg, [0.0], np.arange(3.0))


# -- portraits and the fit model ----------------------------------------------------


def test_portrait_zero_row_equals_single_trace():
    cfg = config(math.sqrt(GAMMA))
    t = np.arange(-200.0, 800.0, 2.0)
    grid = analytic_portrait(cfg, np.array([-1.0, 0.0, 1.0]) * MHZ, t, normalize=False)
    assert np.allclose(grid.row(0.0).samples, analytic_filtered_trace(cfg, t).samples, rtol=1e-14)
    assert analytic_portrait(cfg, [0.0, 1.0], t).magnitude().max() == pytest.approx(1.0)


def _interior_minima(y):
    return argrelmin(y)[0]


def test_interference_notch_region():
    # strong drive: a deep notch on resonance, none at 0.6-1.2 kappa; far rows
    # only show beat minima spaced by 2 pi / detuning
    alpha = math.sqrt(GAMMA)
    t = np.arange(0.0, 1500.0, 0.5)
    for det_mhz in (0.0, 0.25):
        y = np.abs(filtered_response(t, alpha, GAMMA, 1.0, 0.0, 0.0, det_mhz * MHZ, KAPPA))
        mins = _interior_minima(y)
        assert mins.size == 1 and y[mins[0]] < 0.7 * y[mins[0] :].max()
    for det_mhz in (1.5, 2.0, 2.5, 3.0):
        y = np.abs(filtered_response(t, alpha, GAMMA, 1.0, 0.0, 0.0, det_mhz * MHZ, KAPPA))
        assert _interior_minima(y).size == 0
    y = np.abs(filtered_response(t, alpha, GAMMA, 1.0, 0.0, 0.0, 10 * MHZ, KAPPA))
    mins = _interior_minima(y)
    assert np.diff(t[mins]).mean() == pytest.approx(100.0, rel=0.1)


def test_weak_drive_portrait_matches_ideal_emission():
    # alpha^2 beta gamma = gamma^2 / 1000
    alpha = math.sqrt(GAMMA / 1000)
    t = np.arange(-200.0, 1000.0, 1.0)
    centers = np.linspace(-10, 10, 21) * MHZ
    ours = analytic_portrait(config(alpha), centers, t)
    ww = ww_filtered_portrait(WWModel(0.0, GAMMA), FilterParams(0.0, KAPPA), centers, t).normalized()
    for i in range(centers.size):
        assert relative_l2(ours.magnitude()[i], ww.magnitude()[i]) < 0.05


def test_fit_model_reduces_to_closed_form():
    cfg = config(0.1, beta=0.8)
    t = np.arange(-100.0, 600.0)
    params = dict(alpha=0.1, gamma=GAMMA, beta=0.8, delta_qd=0.0, delta_da=0.0, kappa=KAPPA, gain=1.0)
    assert np.allclose(detuned_fit_model(params, t).samples, analytic_filtered_trace(cfg, t).samples, rtol=1e-14)
    shifted = detuned_fit_model(dict(params, phase=0.5, offset_re=0.1, offset_im=-0.2), t).samples
    assert np.allclose(shifted, analytic_filtered_trace(cfg, t).samples * np.exp(0.5j) + (0.1 - 0.2j))


def test_emitter_detuning_rotates_tail():
    delta = 0.2 * MHZ
    params = dict(alpha=math.sqrt(GAMMA), gamma=GAMMA, beta=1.0, delta_qd=delta, delta_da=0.0, kappa=KAPPA, gain=1.0)
    t = np.arange(800.0, 2000.0, 1.0)
    y = detuned_fit_model(params, t).samples
    rate = -np.polyfit(t, np.unwrap(np.angle(y)), 1)[0]
    assert rate == pytest.approx(delta, rel=0.01)
