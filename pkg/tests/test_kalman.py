import math

import numpy as np
import pytest

from sslcarma.carma import CarmaModel, gramian_finite, gramian_infinite
from sslcarma.exceptions import DomainError, NumericalError
from sslcarma.kalman import (
    CovarianceGeometry,
    cell_pieces,
    initial_covariance,
    kalman_filter,
    periodic_fixed_point_residual,
    phase_covariances,
    predict_series,
    run_filter,
    system_covariances,
)
from sslcarma.periodic import PeriodicMean, periodic_mean, phase_index
from sslcarma.sampling import LevySystem, SampledSystem, simulate_sampled
from sslcarma.semilevy import PeriodPartition, SemiLevySpec, exponential_jumps

from conftest import BETA, LENGTHS, RATES
from oracles import (
    cell_covariance,
    frobenius_rel,
    mc_cell_covariances,
    observation_covariance,
    projection_predictions,
)


def scalar_system(lengths=LENGTHS, rates=RATES, m0=13):
    spec = SemiLevySpec(PeriodPartition(lengths, rates), 0.0, exponential_jumps(0.25))
    return SampledSystem(CarmaModel(1, 0, (3.0,)), spec, m0)


class TestCellPieces:
    def test_straddling_cell(self):
        pieces = cell_pieces(PeriodPartition((2.5, 10.5), (1.0, 1.0)), 13)
        assert [(pc.j, pc.lag_start, pc.lag_end) for pc in pieces[2]] == [(2, 0.0, 0.5), (1, 0.5, 1.0)]
        assert all(len(p) == 1 for i, p in enumerate(pieces) if i != 2)

    def test_double_breakpoint(self):
        pieces = cell_pieces(PeriodPartition((10.2, 0.5, 2.3), (1.0, 1.0, 1.0)), 13)
        assert [pc.j for pc in pieces[10]] == [3, 2, 1]
        assert sum(pc.lag_end - pc.lag_start for pc in pieces[10]) == pytest.approx(1.0)


class TestPhaseCovariances:
    def test_scalar_value(self):
        Q = phase_covariances(scalar_system(), BETA)
        assert Q[0, 0, 0] == pytest.approx(32 * (1 - math.exp(-6)) / 6, rel=1e-12)
        # the quoted five-digit value is rounded from 5.3201133
        assert Q[0, 0, 0] == pytest.approx(5.32009, abs=5e-5)

    def test_homogeneous(self, model):
        spec = SemiLevySpec(PeriodPartition(LENGTHS, (20.0, 4.0, 2.0)), 0.0, exponential_jumps(1.0))
        system = SampledSystem(model, spec, 13)
        Q = phase_covariances(system, 2.0)
        G = gramian_finite(system.ss.A, system.ss.e, 0, 1)
        np.testing.assert_allclose(Q, np.broadcast_to(4.0 * G, Q.shape), rtol=1e-12)

    @pytest.mark.parametrize("lengths", [LENGTHS, (10.2, 0.5, 2.3), (2.5, 10.5, 0.0001)])
    def test_matches_piece_sum(self, model, lengths):
        spec = SemiLevySpec(PeriodPartition(lengths, RATES), 0.0, exponential_jumps(0.25))
        system = SampledSystem(model, spec, 13)
        Q = phase_covariances(system, BETA)
        A, e = system.ss.A, system.ss.e
        T = sum(lengths)
        h = T / 13
        for k in range(13):
            ref = cell_covariance(A, e, lengths, RATES, BETA, k * h, (k + 1) * h)
            assert frobenius_rel(Q[k], ref) < 1e-10

    def test_monte_carlo(self, system):
        mc = mc_cell_covariances(system, 100_000, seed=31)
        Q = phase_covariances(system, BETA)
        errs = [frobenius_rel(mc[k], Q[k]) for k in range(13)]
        assert max(errs) < 0.05, errs

    def test_geometry_matches_reference(self, system):
        geo = CovarianceGeometry(LENGTHS, 13)
        Phi, Q, om = geo.matrices(system.ss.A, system.ss.e, system.partition.densities, BETA)
        Q_ref, om_ref = system_covariances(system, BETA)
        np.testing.assert_allclose(Phi, system.transition, rtol=1e-13)
        np.testing.assert_allclose(Q, Q_ref, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(om, om_ref, rtol=1e-10)


class TestInitialCovariance:
    def test_homogeneous(self, model):
        spec = SemiLevySpec(PeriodPartition(LENGTHS, (20.0, 4.0, 2.0)), 0.0, exponential_jumps(1.0))
        system = SampledSystem(model, spec, 13)
        np.testing.assert_allclose(initial_covariance(system, 3.0),
                                   6.0 * gramian_infinite(system.ss.A, system.ss.e),
                                   rtol=1e-10, atol=1e-14)

    def test_scalar_closed_form(self):
        system = scalar_system(rates=(10.0, 2.0, 1.0))
        assert initial_covariance(system, 5.0)[0, 0] == pytest.approx(5.0 * 1.0 / 6.0, rel=1e-12)

    def test_fixed_point(self, system):
        assert periodic_fixed_point_residual(system, BETA) < 1e-8

    def test_monte_carlo(self, system):
        path = simulate_sampled(system, 13 * 100_000, seed=3)
        X = path.states[1::13]
        assert frobenius_rel(np.cov(X, rowvar=False), initial_covariance(system, BETA)) < 0.05

    def test_levy_system(self, model):
        system = LevySystem(model, 1.0)
        Q, om = system_covariances(system, 2.0)
        assert Q.shape == (1, 2, 2)
        np.testing.assert_allclose(om, 2.0 * gramian_infinite(system.ss.A, system.ss.e))


class TestFilter:
    def test_first_step(self, system):
        Q, om = system_covariances(system, BETA)
        out = run_filter(system.transition, system.b, Q, om, np.array([3.0, -1.0]))
        assert out.predictions[0] == 0.0
        assert out.variances[0] == pytest.approx(system.b @ om @ system.b, rel=1e-14)

    @pytest.mark.parametrize("n", range(2, 9))
    def test_projection_oracle(self, system, n):
        A, e, b = system.ss.A, system.ss.e, system.b
        C = observation_covariance(A, e, b, LENGTHS, RATES, BETA, 1.0, n)
        y = np.random.default_rng(n).normal(0, 10, n)
        out = kalman_filter(system, BETA, y)
        np.testing.assert_allclose(out.predictions, projection_predictions(C, y), atol=1e-8, rtol=0)
        # innovation variances are the Schur complements of the same Gram matrix
        schur = [C[k, k] - C[:k, k] @ np.linalg.solve(C[:k, :k], C[:k, k]) if k else C[0, 0]
                 for k in range(n)]
        np.testing.assert_allclose(out.variances, schur, rtol=1e-8)

    def test_standardized_innovations(self, system):
        # one path of this length has a standard error near 0.035 (kurtosis ~8),
        # so the variance is averaged over four independent paths
        vals = []
        for seed in range(4):
            path = simulate_sampled(system, 500 * 13, seed=seed)
            _, centered = periodic_mean(path.observations, 13)
            vals.append(np.var(kalman_filter(system, BETA, centered).standardized))
        assert np.mean(vals) == pytest.approx(1.0, abs=0.05)

    @pytest.mark.parametrize("c", [1e-3, 1.0, 1e3])
    def test_beta_invariance(self, system, c):
        path = simulate_sampled(system, 26 * 13, seed=12)
        _, y = periodic_mean(path.observations, 13)
        ref = kalman_filter(system, BETA, y).predictions
        got = kalman_filter(system, c * BETA, y).predictions
        assert np.max(np.abs(got - ref)) <= 1e-12

    def test_degenerate(self, system):
        Q = np.zeros((13, 2, 2))
        with pytest.raises(NumericalError, match="n=1"):
            run_filter(system.transition, system.b, Q, np.zeros((2, 2)), np.ones(5))

    def test_bad_series(self, system):
        Q, om = system_covariances(system, BETA)
        with pytest.raises(DomainError):
            run_filter(system.transition, system.b, Q, om, np.array([1.0, np.nan]))

    def test_sse_property(self, system):
        Q, om = system_covariances(system, BETA)
        out = run_filter(system.transition, system.b, Q, om, np.arange(5.0))
        assert out.sse == pytest.approx(np.sum(out.innovations ** 2))


class TestPeriodicMean:
    def test_example(self):
        pm, centered = periodic_mean(np.arange(1.0, 9.0), 4)
        np.testing.assert_array_equal(pm.means, [3, 4, 5, 6])
        np.testing.assert_array_equal(centered, [-2, -2, -2, -2, 2, 2, 2, 2])

    def test_constant(self):
        _, centered = periodic_mean(np.full(30, 2.5), 7)
        np.testing.assert_array_equal(centered, 0.0)

    def test_too_short(self):
        with pytest.raises(DomainError):
            periodic_mean(np.ones(3), 4)

    def test_phase_index(self):
        np.testing.assert_array_equal(phase_index(np.arange(1, 15), 13), [*range(1, 14), 1])

    def test_predict_series(self, system):
        y = np.full(40, 7.0)
        pm, centered = periodic_mean(y, 13)
        out = kalman_filter(system, BETA, centered)
        np.testing.assert_array_equal(predict_series(out, pm), 7.0)
        means = PeriodicMean(np.arange(13.0))
        zero = kalman_filter(system, BETA, np.zeros(26))
        np.testing.assert_array_equal(predict_series(zero, means), np.tile(np.arange(13.0), 2))
