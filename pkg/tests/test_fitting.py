import math
import warnings

import numpy as np
import pytest

from conftest import MHZ
from photon_portrait.core import ComplexTrace, PortraitGrid
from photon_portrait.fitting import (
    DegenerateDataError,
    FitProblem,
    RankDeficiencyWarning,
    detuning_map,
    fit,
    fit_portrait,
    initial_guess,
    loss_gradient,
)
from photon_portrait.input_output import detuned_fit_model

GAMMA = 1.5 * MHZ
KAPPA = 2.5 * MHZ
BETA = 0.9
KHZ = 1e-3 * MHZ
TRUTH = {
    "alpha": math.sqrt(GAMMA / BETA),  # alpha^2 beta gamma = gamma^2
    "gamma": GAMMA,
    "beta": BETA,
    "delta_qd": 0.2 * MHZ,
    "delta_da": 0.0,
    "kappa": KAPPA,
    "gain": 1.0,
    "phase": 0.3,
    "offset_re": 0.0,
    "offset_im": 0.0,
}
FIXED = {"beta": BETA, "gain": 1.0}
TIMES = np.arange(-400.0, 1600.0, 2.0)


def synth(params=None, noise=0.0, seed=1, times=TIMES):
    p = dict(TRUTH, **(params or {}))
    clean = detuned_fit_model(p, times)
    if noise == 0:
        return clean
    rng = np.random.default_rng(seed)
    sigma = noise * np.abs(clean.samples).max()
    n = sigma / math.sqrt(2) * (rng.standard_normal(times.size) + 1j * rng.standard_normal(times.size))
    return clean.with_samples(clean.samples + n)


def test_initial_guess_is_close_on_clean_data():
    g = initial_guess(synth(), FIXED)
    for name in ("alpha", "gamma", "kappa"):
        assert g[name] == pytest.approx(TRUTH[name], rel=0.3), name
    assert abs(g["delta_qd"] - TRUTH["delta_qd"]) < 0.3 * GAMMA
    assert g["beta"] == BETA and g["gain"] == 1.0


def test_initial_guess_passes_known_values_through():
    g = initial_guess(synth(), {"gamma": 0.123, "kappa": 0.456})
    assert g["gamma"] == 0.123 and g["kappa"] == 0.456


def test_degenerate_data_is_refused():
    with pytest.raises(DegenerateDataError):
        initial_guess(ComplexTrace(-10.0, 1.0, np.zeros(50, dtype=complex)))
    with pytest.raises(DegenerateDataError):
        initial_guess(ComplexTrace(-10.0, 1.0, np.ones(12, dtype=complex)))


def test_noise_free_fit_is_exact():
    res = fit(FitProblem(synth(), fixed=FIXED))
    assert res.converged
    for name in ("alpha", "gamma", "kappa", "delta_qd", "phase"):
        assert res.params[name] == pytest.approx(TRUTH[name], rel=1e-6, abs=1e-9), name
    assert res.residual < 1e-8


def test_noisy_round_trip():
    res = fit(FitProblem(synth(noise=0.01), fixed=FIXED))
    assert res.params["gamma"] == pytest.approx(GAMMA, rel=0.02)
    assert res.params["kappa"] == pytest.approx(KAPPA, rel=0.02)
    assert abs(res.params["delta_qd"] - TRUTH["delta_qd"]) < 10 * KHZ
    assert res.stderr["gamma"] > 0


def test_start_at_truth_converges_immediately():
    free = ("alpha", "gamma", "kappa", "delta_qd", "phase")
    res = fit(FitProblem(synth(), free, fixed=FIXED, initial={n: TRUTH[n] for n in free}))
    assert res.converged
    assert res.iterations <= 2


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_loss_history_is_monotone(seed):
    res = fit(FitProblem(synth(noise=0.02, seed=seed), fixed=FIXED))
    h = np.array(res.loss_history)
    assert np.all(np.diff(h) <= 0)
    assert h[-1] < h[0]


def test_gradient_matches_finite_differences():
    prob = FitProblem(synth(noise=0.01), fixed=FIXED)
    point = {**TRUTH, "gamma": 1.1 * GAMMA, "kappa": 0.9 * KAPPA, "delta_qd": 0.3 * MHZ, "phase": 0.25}
    grad = loss_gradient(prob, point)
    for name in prob.free:
        h = 1e-6 * max(abs(point[name]), 1e-3)
        up = prob.loss({**point, name: point[name] + h})
        dn = prob.loss({**point, name: point[name] - h})
        assert grad[name] == pytest.approx((up - dn) / (2 * h), rel=1e-4), name


def test_frequency_unit_does_not_change_the_answer():
    data = synth(noise=0.01)
    a = fit(FitProblem(data, fixed=FIXED))
    b = fit(FitProblem(data, fixed=FIXED, frequency_unit="MHz"))
    for name in ("alpha", "gamma", "kappa", "delta_qd", "phase"):
        assert b.params[name] == pytest.approx(a.params[name], rel=1e-5, abs=1e-8), name


def test_problem_validation():
    data = synth()
    with pytest.raises(ValueError, match="beta and gain"):
        FitProblem(data, ("alpha", "beta", "gain"))
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha", "gamma"), bounds={"gamma": (1.0, 0.5)})
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha", "gamma"), bounds={"gamma": (0.0, 1.0)})
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha", "phase"), bounds={"phase": (-math.inf, 1.0)})
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha", "gamma"), initial={"gamma": 20.0})
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha", "nonsense"))
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha", "alpha"))
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha", "gamma"), fixed={"gamma": 0.1})
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha",), weights=np.ones(3))
    with pytest.raises(ValueError):
        FitProblem(data, ("alpha",), frequency_unit="GHz")


def test_magnitude_only_fit():
    data = synth(noise=0.0)
    res = fit(FitProblem(data, ("alpha", "gamma", "kappa"), fixed={**FIXED, "delta_qd": TRUTH["delta_qd"]}, magnitude_only=True))
    assert res.params["gamma"] == pytest.approx(GAMMA, rel=1e-5)
    assert res.params["kappa"] == pytest.approx(KAPPA, rel=1e-5)


def test_rank_deficiency_is_reported():
    # the magnitude does not depend on the global phase
    prob = FitProblem(synth(), ("alpha", "gamma", "kappa", "phase"), fixed={**FIXED, "delta_qd": TRUTH["delta_qd"]}, magnitude_only=True)
    with pytest.warns(RankDeficiencyWarning):
        res = fit(prob)
    assert "phase" in res.rank_deficient


def _portrait(dets, delta_qd_rows=None, noise=0.0):
    rows = []
    for i, d in enumerate(dets):
        dq = TRUTH["delta_qd"] if delta_qd_rows is None else delta_qd_rows[i]
        rows.append(synth({"delta_da": -d, "delta_qd": dq}, noise=noise, seed=10 + i))
    return PortraitGrid.from_rows(np.asarray(dets), rows)


def test_portrait_constant_detuning_map():
    dets = np.linspace(-4, 4, 5) * MHZ
    results = fit_portrait(_portrait(dets), fixed=FIXED)
    vals, errs = detuning_map(results)
    assert np.all(np.abs(vals - TRUTH["delta_qd"]) < 10 * KHZ)
    assert vals.shape == errs.shape == dets.shape
    assert not any(r.low_confidence for r in results)


def test_portrait_flags_far_rows():
    dets = np.array([0.0, 12.0]) * MHZ
    results = fit_portrait(_portrait(dets), fixed=FIXED, low_confidence_factor=2.0)
    assert not results[0].low_confidence
    assert results[1].low_confidence


def test_portrait_refuses_free_drive_detuning():
    with pytest.raises(ValueError):
        fit_portrait(_portrait([0.0]), free=("alpha", "delta_da"))


def test_portrait_is_independent_of_worker_count():
    dets = np.linspace(-3, 3, 4) * MHZ
    grid = _portrait(dets, noise=0.01)
    one = fit_portrait(grid, fixed=FIXED, workers=1)
    many = fit_portrait(grid, fixed=FIXED, workers=3)
    assert [r.to_json() for r in one] == [r.to_json() for r in many]


def test_failed_rows_are_recorded_not_raised():
    grid = PortraitGrid.from_rows(np.array([0.0, 1.0]), [synth(), synth().with_samples(np.zeros(TIMES.size, dtype=complex))])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = fit_portrait(grid, fixed=FIXED, anchor=False)
    assert results[0].converged
    assert results[1].message.startswith("failed")
    assert results[1].low_confidence
