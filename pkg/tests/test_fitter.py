import math

import numpy as np
import pytest

from spinsqueeze import engine, fitter
from spinsqueeze.errors import ConfigurationError
from spinsqueeze.model import TWO_PI, EnsembleModel, ModeParams
from spinsqueeze.traces import PsdTrace

TP = TWO_PI


def slow_mode(zeta=0.01):
    g = TP * 13e3
    return ModeParams(-TP * 1.4e6, g / 11 / 2.8, g, zeta, 0.9)


GRID = TP * np.linspace(1.36e6, 1.44e6, 241)
ANGLES = np.linspace(-0.5, 0.5, 5)
FREE = dict(omega=True, gamma_meas=True, gamma0=True, phi=True)


def model_of(*modes, eta=0.91):
    return EnsembleModel(tuple(modes), eta)


def test_gamma_statistics():
    model = model_of(slow_mode())
    data = fitter.synthesize_dataset(model, [0.2], TP * np.linspace(1.3e6, 1.5e6, 2000), 10 ** 4, 3)
    truth = engine.simulate(model, data[0][0].grid, [0.2])[0].values_sn
    ratio = data[0][0].values_sn / truth
    assert np.std(ratio, ddof=1) == pytest.approx(1e-2, rel=0.1)
    assert data[0][1] == 10 ** 4


def test_synthesis_is_deterministic():
    model = model_of(slow_mode())
    a = fitter.synthesize_dataset(model, ANGLES, GRID, 100, 2 ** 63 + 5)
    b = fitter.synthesize_dataset(model, ANGLES, GRID, 100, 2 ** 63 + 5)
    c = fitter.synthesize_dataset(model, ANGLES, GRID, 100, 6)
    for (x, _), (y, _), (z, _) in zip(a, b, c):
        assert np.array_equal(x.values_sn, y.values_sn)
        assert not np.array_equal(x.values_sn, z.values_sn)
    fitter.synthesize_dataset(model, ANGLES, GRID, 1, -1)  # any 64-bit value is accepted
    with pytest.raises(ConfigurationError):
        fitter.synthesize_dataset(model, ANGLES, GRID, 0, 1)


def test_mean_over_seeds_is_unbiased():
    model = model_of(slow_mode())
    grid = np.array([TP * 1.4e6])
    truth = engine.simulate(model, grid, [0.0])[0].values_sn[0]
    n_avg = 10
    vals = np.array([fitter.synthesize_dataset(model, [0.0], grid, n_avg, s)[0][0].values_sn[0]
                     for s in range(10 ** 4)])
    se = truth / math.sqrt(n_avg) / math.sqrt(len(vals))
    assert abs(vals.mean() - truth) < 3 * se


def test_response_correction():
    trace = PsdTrace(GRID, np.linspace(0.2, 3.0, len(GRID)), 0.1)
    same = fitter.apply_response_correction(trace, np.ones(len(GRID)))
    assert np.array_equal(same.values_sn, trace.values_sn)
    shared = fitter.apply_response_correction(trace, 2.0, sn_gain=2.0)
    assert np.array_equal(shared.values_sn, trace.values_sn)
    gain = fitter.single_pole_gain(5e6)
    measured = PsdTrace(GRID, trace.values_sn * gain(trace.freq_hz), 0.1)
    back = fitter.apply_response_correction(measured, gain)
    assert np.allclose(back.values_sn, trace.values_sn, rtol=1e-12, atol=0)
    with pytest.raises(ConfigurationError):
        fitter.apply_response_correction(trace, np.zeros(len(GRID)))
    with pytest.raises(ConfigurationError):
        fitter.apply_response_correction(trace, -1.0)


def noiseless(model, angles=ANGLES, n_avg=1000):
    return [(t, n_avg) for t in engine.simulate(model, GRID, angles)]


def test_fixed_point_at_truth():
    model = model_of(slow_mode())
    problem = fitter.FitProblem(noiseless(model), model, free=FREE)
    result = fitter.global_fit(problem)
    assert result.converged
    assert result.iterations <= 2
    assert result.cost < 1e-12
    assert result.estimate("gamma_meas[0]") == pytest.approx(model.modes[0].gamma_meas, rel=1e-9)


def test_all_fixed_returns_initial_guess():
    truth = model_of(slow_mode())
    guess = model_of(ModeParams(-TP * 1.401e6, 1e3, 7e4, 0.01, 0.9))
    data = fitter.synthesize_dataset(truth, ANGLES, GRID, 1000, 1)
    problem = fitter.FitProblem(data, guess, free={})
    result = fitter.global_fit(problem)
    assert result.iterations == 0
    assert np.array_equal(result.estimates, problem.initial_vector())
    r = fitter._Evaluator(problem).residuals(problem.initial_vector())
    assert result.cost == pytest.approx(sum(float(np.sum(x * x)) for x in r), rel=1e-15)
    assert np.all(result.standard_errors == 0)


def perturbed_problem(seed=0, n_avg=10 ** 4, angles=ANGLES, free=FREE):
    truth = model_of(slow_mode(zeta=0.0))
    data = fitter.synthesize_dataset(truth, angles, GRID, n_avg, seed)
    m = truth.modes[0]
    guess = model_of(ModeParams(m.omega + TP * 1e3, m.gamma0 * 1.2, m.gamma_meas * 0.8, 0.0, 0.9))
    return truth, fitter.FitProblem(data, guess, free=free)


def test_cost_is_monotone_and_recovers():
    truth, problem = perturbed_problem()
    result = fitter.global_fit(problem)
    assert result.converged
    assert np.all(np.diff(result.cost_history) < 0)
    assert result.cost >= 0
    assert result.estimate("gamma_meas[0]") == pytest.approx(truth.modes[0].gamma_meas, rel=0.02)
    assert len(result.per_trace_residuals) == len(ANGLES)
    # estimates respect the model invariants
    assert result.model.modes[0].gamma0 > 0 and result.model.modes[0].gamma_meas >= 0


def test_permutation_invariance():
    _, problem = perturbed_problem(seed=4)
    order = [3, 0, 4, 2, 1]
    shuffled = fitter.FitProblem([problem.dataset[k] for k in order], problem.initial_model, FREE)
    a = fitter.global_fit(problem)
    b = fitter.global_fit(shuffled)
    for name in ("omega[0]", "gamma_meas[0]", "gamma0[0]"):
        assert b.estimate(name) == pytest.approx(a.estimate(name), rel=1e-6)
    assert [b.estimate(f"phi[{k}]") for k in range(5)] == pytest.approx(
        [a.estimate(f"phi[{k}]") for k in order], abs=1e-7)


def test_standard_errors_scale_with_averaging():
    ratios = []
    for seed in range(3):
        errs = []
        for n_avg in (100, 10 ** 4):
            _, problem = perturbed_problem(seed=seed, n_avg=n_avg)
            errs.append(fitter.global_fit(problem).error("gamma_meas[0]"))
        ratios.append(errs[0] / errs[1])
    assert np.mean(ratios) == pytest.approx(10.0, rel=0.3)


def test_iteration_limit_reports_non_convergence():
    _, problem = perturbed_problem()
    result = fitter.global_fit(problem, max_iterations=1)
    assert not result.converged
    assert result.iterations == 1
    assert result.cost < result.cost_history[0]


def test_unstable_steps_are_rejected():
    # zeta is free and starts close to the anti-damping boundary
    truth = model_of(slow_mode(zeta=0.0))
    data = fitter.synthesize_dataset(truth, ANGLES, GRID, 1000, 9)
    m = truth.modes[0]
    edge = -0.9 * m.gamma0 / (2 * m.gamma_meas)
    guess = model_of(ModeParams(m.omega, m.gamma0, m.gamma_meas, edge, 0.9))
    result = fitter.global_fit(fitter.FitProblem(data, guess, dict(FREE, zeta=True)))
    assert np.all(np.diff(result.cost_history) < 0)
    engine.check_stability(result.model)


def test_problem_validation():
    model = model_of(slow_mode())
    data = noiseless(model)
    with pytest.raises(ConfigurationError):
        fitter.FitProblem([], model)
    with pytest.raises(ConfigurationError):
        fitter.FitProblem(data, model, free={"eta": True})
    with pytest.raises(ConfigurationError):
        fitter.FitProblem(data, model, free={"amplitude": True})
    with pytest.raises(ConfigurationError):
        fitter.FitProblem([(data[0][0], 0)], model)
    with pytest.raises(ConfigurationError):
        fitter.FitProblem(data, model, free={"phi": [True, False]}).free_mask()
    tiny = [(PsdTrace(GRID[:2], [1.0, 1.0], 0.0), 10)]
    with pytest.raises(ConfigurationError):
        fitter.global_fit(fitter.FitProblem(tiny, model, free=FREE))


def test_response_correction_inside_fit():
    model = model_of(slow_mode())
    gain = fitter.single_pole_gain(2e6)
    data = [(PsdTrace(t.grid, t.values_sn * gain(t.freq_hz), t.angle), n) for t, n in noiseless(model)]
    problem = fitter.FitProblem(data, model, free=FREE, response_correction=gain)
    assert fitter.global_fit(problem).cost < 1e-12


def test_csv_round_trip(tmp_path):
    model = model_of(slow_mode())
    data = fitter.synthesize_dataset(model, [0.3, -0.1], GRID[:20], 50, 1)
    path = tmp_path / "traces.csv"
    with open(path, "w") as fh:
        fh.write("freq_hz,psd_sn,angle_rad,n_avg\n")
        for t, n in data:
            for f, v, a in reversed(t.rows()):
                fh.write(f"{f!r},{v!r},{a!r},{n}\n")
    back = fitter.read_traces_csv(path)
    assert [t.angle for t, _ in back] == [0.3, -0.1]
    for (t, n), (u, m) in zip(data, back):
        assert n == m
        assert np.array_equal(t.values_sn, u.values_sn)
        assert np.allclose(t.grid, u.grid, rtol=1e-15)
