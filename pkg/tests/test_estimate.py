import json
import math

import numpy as np
import pytest

from sslcarma.carma import CarmaModel, ar_from_roots
from sslcarma.estimate import (
    FitResult,
    OptimizerConfig,
    ParameterVector,
    StudyResult,
    auto_init,
    fit_levy_carma,
    fit_sslcarma,
    levy_objective,
    objective,
    simulation_study,
)
from sslcarma.exceptions import NonConvergenceError, ValidationError
from sslcarma.kalman import system_covariances
from sslcarma.periodic import periodic_mean
from sslcarma.sampling import LevySystem, SampledSystem, simulate_sampled
from sslcarma.semilevy import PeriodPartition, SemiLevySpec, exponential_jumps

from conftest import AR, BETA, LENGTHS, MA, RATES

TRUTH = ParameterVector(AR, MA, RATES)


def simulate(system, periods, seed):
    return simulate_sampled(system, periods * system.m0, seed=seed).observations


@pytest.fixture(scope="module")
def converged_fit(system):
    # seed 1 is a replication whose fit stops inside the simplex tolerance
    y = simulate(system, 200, np.random.SeedSequence(1))
    fit = fit_sslcarma(y, 13, LENGTHS, (2, 1), beta=BETA)
    return y, fit


class TestParameterVector:
    def test_labels_and_round_trip(self):
        assert TRUTH.labels == ["a1", "a2", "b0", "lambda1", "lambda2", "lambda3"]
        x = TRUTH.as_array()
        assert ParameterVector.from_array(x, 2, 1) == TRUTH
        assert TRUTH.model() == CarmaModel(2, 1, AR, MA)

    def test_negative_rate(self):
        with pytest.raises(ValidationError):
            ParameterVector(AR, MA, (1.0, -1.0, 1.0))


class TestObjective:
    def test_zero_series(self):
        assert objective(TRUTH, np.zeros(300), LENGTHS, 13) == 0.0
        assert levy_objective(ParameterVector(AR, MA), np.zeros(50)) == 0.0

    def test_invalid_is_infinite(self):
        bad = ParameterVector((-1.0, 0.5), MA, RATES)
        assert objective(bad, np.ones(300), LENGTHS, 13) == math.inf

    def test_truth_beats_perturbed(self, system):
        wrong = ParameterVector((1.5 * AR[0], AR[1]), MA, RATES)
        wins = 0
        for seq in np.random.SeedSequence(5).spawn(100):
            _, y = periodic_mean(simulate(system, 200, seq), 13)
            wins += objective(TRUTH, y, LENGTHS, 13) <= objective(wrong, y, LENGTHS, 13)
        assert wins >= 95

    def test_root_permutation(self, system, model):
        _, y = periodic_mean(simulate(system, 20, 3), 13)
        roots = model.roots
        for order in (roots, roots[::-1]):
            ar = tuple(ar_from_roots(order))
            val = objective(ParameterVector(ar, MA, RATES), y, LENGTHS, 13)
            assert val == pytest.approx(objective(TRUTH, y, LENGTHS, 13), rel=1e-12)

    def test_matches_filter_sse(self, system):
        from sslcarma.kalman import kalman_filter
        _, y = periodic_mean(simulate(system, 20, 4), 13)
        want = kalman_filter(system, 1.0, y).sse
        assert objective(TRUTH, y, LENGTHS, 13) == pytest.approx(want, rel=1e-10)


class TestFit:
    def test_constant_series(self):
        with pytest.raises(NonConvergenceError):
            fit_sslcarma(np.full(13 * 30, 4.0), 13, LENGTHS)

    def test_too_short(self):
        with pytest.raises(Exception):
            fit_sslcarma(np.arange(100.0), 13, LENGTHS)

    def test_auto_init_is_valid(self, system):
        y = simulate(system, 50, 9)
        _, yc = periodic_mean(y, 13)
        init = auto_init(yc, 13, LENGTHS, 2, 1)
        init.model()
        assert all(r > 0 for r in init.rates)

    def test_result_contract(self, converged_fit):
        _, fit = converged_fit
        assert fit.converged
        assert fit.sse <= fit.initial_sse
        d = json.loads(fit.to_json())
        assert list(d)[:6] == ["a", "b", "lambda", "sse", "converged", "evals"]
        assert FitResult.from_dict(d).params == fit.params

    def test_fixed_point(self, converged_fit):
        y, fit = converged_fit
        again = fit_sslcarma(y, 13, LENGTHS, (2, 1), init=fit.params, beta=BETA)
        assert abs(again.sse - fit.sse) <= 1e-10 * fit.sse

    def test_self_consistency(self, converged_fit):
        # refits on data simulated at the estimate reach a comparable objective
        y, fit = converged_fit
        system = fit.system(exponential_jumps(0.25))
        ratios = []
        for seq in np.random.SeedSequence(17).spawn(20):
            sim = simulate(system, 200, seq)
            ratios.append(fit_sslcarma(sim, 13, LENGTHS, (2, 1), beta=BETA).sse / fit.sse)
        assert abs(np.mean(ratios) - 1.0) < 0.10, ratios


class TestLevyFit:
    def test_ar1_relation(self):
        spec = SemiLevySpec(PeriodPartition((1.0,), (2.0,)), 0.0, exponential_jumps(1.0))
        system = SampledSystem(CarmaModel(1, 0, (0.5,)), spec, 1)
        y = simulate(system, 20_000, 21)
        fit = fit_levy_carma(y, (1, 0))
        yc = y - y.mean()
        phi = np.dot(yc[1:], yc[:-1]) / np.dot(yc[:-1], yc[:-1])
        assert math.exp(-fit.params.ar[0]) == pytest.approx(phi, rel=0.05)

    def test_constant_q(self, model):
        Q, _ = system_covariances(LevySystem(model, 1.0), 1.0)
        assert Q.shape[0] == 1
        fit = fit_levy_carma(np.random.default_rng(0).standard_normal(400), (2, 1),
                             config=OptimizerConfig(restarts=1, maxfev=300))
        assert fit.diagnostics["constant_q"]


class TestStudy:
    def test_identical_seeds(self, system):
        y = simulate(system, 30, 2)
        cfg = OptimizerConfig(restarts=1, maxfev=400)
        rows = [fit_sslcarma(y, 13, LENGTHS, config=cfg, beta=BETA).params.as_array()
                for _ in range(2)]
        res = StudyResult(TRUTH, TRUTH.labels, np.array(rows), [], 30, 0)
        np.testing.assert_array_equal(res.std, 0.0)

    def test_failures_excluded(self):
        est = np.array([[1.0] * 6, [np.nan] * 6, [3.0] * 6])
        res = StudyResult(TRUTH, TRUTH.labels, est, [{"replication": 1}], 10, 0)
        np.testing.assert_array_equal(res.mean, 2.0)

    def test_csv_layout(self, tmp_path):
        est = np.tile(TRUTH.as_array(), (3, 1))
        StudyResult(TRUTH, TRUTH.labels, est, [], 10, 0).to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "statistic,a1,a2,b0,lambda1,lambda2,lambda3,failures"
        assert [l.split(",")[0] for l in lines[1:]] == ["Mean", "Bias", "Std. dev."]

    def test_needs_two(self):
        with pytest.raises(ValidationError):
            simulation_study(TRUTH, 1, 10)


@pytest.fixture(scope="module")
def desk_studies():
    return {P: simulation_study(TRUTH, 100, P, seed=2, threads=1) for P in (50, 100)}


class TestDeskScale:
    def test_relative_bias(self, desk_studies):
        res = desk_studies[50]
        rel = np.abs(res.bias) / TRUTH.as_array()
        print("P=50 failures:", len(res.failures), "relative bias:", np.round(rel, 3))
        assert np.all(rel < 0.15), rel

    def test_consistency_trend(self, desk_studies):
        ratio = desk_studies[50].std / desk_studies[100].std
        print("std ratio P=50/P=100:", np.round(ratio, 3))
        assert np.all((ratio >= 1.2) & (ratio <= 1.7)), ratio
