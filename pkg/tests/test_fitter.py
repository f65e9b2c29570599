"""Tests for maternfem.fitter."""
import math

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import simulated_dataset
from maternfem.fembasis import basis_for_mesh, fem_matrices, projection_matrix
from maternfem.fitter import (
    FitError,
    RemlProblem,
    compare_posteriors,
    design_matrix,
    initial_theta,
    optimize_hyperparameters,
    pad_penalty,
    pirls,
    posterior_samples,
    predict,
    reml_criterion,
    reml_gradient,
    restore_fit,
)
from maternfem.matern import matern_precision, simulate_field
from maternfem.mesh import build_mesh_1d, delaunay_triangulate
from maternfem.models import DataError, Dataset, Family, MaternParams
from maternfem.sparsela import diagonal_matrix, from_triplets, identity
from maternfem.verification import check_oracle

GAUSSIAN = Family("gaussian")
POISSON = Family("poisson")


def fixed_fit(dataset, fem, A, mesh, kappa=1.0, tau=1.0, sigma2=0.04):
    """Fit at given hyperparameters without a REML search."""
    X = design_matrix(dataset, A)
    S = pad_penalty(matern_precision(fem, MaternParams(tau=tau, kappa=kappa, d=dataset.dim)), X.shape[1])
    scale = sigma2 if dataset.family.kind == "gaussian" else 1.0
    beta = pirls(dataset.y, X, S, dataset.family, scale=scale).beta
    return restore_fit(dataset, fem, A, mesh, kappa, tau, sigma2, beta)


class TestPirls:

    def test_ridge_closed_form(self, rng):
        n, sigma2 = 12, 0.3
        y = rng.standard_normal(n)
        X = sp.identity(n, format="csr")
        result = pirls(y, X, identity(n), GAUSSIAN, scale=sigma2)
        np.testing.assert_allclose(result.beta, y / (1.0 + sigma2), rtol=1e-12)

    def test_poisson_intercept_limit(self):
        y = np.array([3.0, 4.0, 5.0, 6.0, 7.0])
        X = sp.csr_matrix(np.ones((5, 1)))
        result = pirls(y, X, from_triplets([(0, 0, 1e-10)], 1), POISSON)
        assert result.beta[0] == pytest.approx(math.log(5.0), abs=1e-8)

    def test_history_monotone(self, poisson_problem):
        dataset, fem, A, _ = poisson_problem
        X = design_matrix(dataset, A)
        S = pad_penalty(matern_precision(fem, MaternParams(tau=1.0, kappa=1.0, d=1)), X.shape[1])
        result = pirls(dataset.y, X, S, POISSON)
        assert len(result.history) >= 2
        history = np.asarray(result.history)
        assert np.all(np.diff(history) >= -1e-12 * np.abs(history).max())

    def test_unreachable_tolerance_stops_at_working_precision(self, poisson_problem):
        dataset, fem, A, _ = poisson_problem
        X = design_matrix(dataset, A)
        S = pad_penalty(matern_precision(fem, MaternParams(tau=math.exp(-0.5708), kappa=math.exp(-0.3405), d=1)),
                        X.shape[1])
        exact = pirls(dataset.y, X, S, POISSON, tolerance=0.0)
        loose = pirls(dataset.y, X, S, POISSON, tolerance=1e-8)
        assert exact.iterations < 100
        np.testing.assert_allclose(exact.beta, loose.beta, rtol=1e-6, atol=1e-8)
        assert exact.objective >= loose.objective - 1e-10 * abs(loose.objective)

    def test_dimension_checks(self):
        X = sp.identity(5, format="csr")
        with pytest.raises(FitError, match="penalty"):
            pirls(np.zeros(5), X, identity(4), GAUSSIAN)
        with pytest.raises(FitError, match="responses"):
            pirls(np.zeros(4), X, identity(5), GAUSSIAN)

    def test_matches_dense_oracle(self):
        results = check_oracle(seed=3)
        assert all(r.passed for r in results), [(r.name, r.measured) for r in results]


class TestDesign:

    def test_collinear_covariates_rejected(self, gaussian_problem):
        dataset, fem, A, _ = gaussian_problem
        c = np.linspace(0.0, 1.0, dataset.n)
        collinear = Dataset(
            locations=dataset.locations, y=dataset.y, family=GAUSSIAN,
            covariates=np.column_stack([c, 2.0 * c]), covariate_names=["a", "b"],
        )
        with pytest.raises(DataError, match="collinear"):
            RemlProblem(collinear, fem, A)

    def test_constant_covariate_with_intercept(self, gaussian_problem):
        dataset, fem, A, _ = gaussian_problem
        constant = Dataset(
            locations=dataset.locations, y=dataset.y, family=GAUSSIAN,
            covariates=np.full((dataset.n, 1), 3.0), covariate_names=["k"],
        )
        with pytest.raises(DataError, match="collinear"):
            design_matrix(constant, A)

    def test_zero_covariate(self, gaussian_problem):
        dataset, fem, A, _ = gaussian_problem
        zero = Dataset(
            locations=dataset.locations, y=dataset.y, family=GAUSSIAN,
            covariates=np.zeros((dataset.n, 1)), covariate_names=["z"],
        )
        with pytest.raises(DataError, match="identically zero"):
            design_matrix(zero, A)

    def test_pad_penalty(self):
        S = diagonal_matrix(np.array([1.0, 2.0]))
        padded = pad_penalty(S, 4)
        np.testing.assert_array_equal(padded.toarray(), np.diag([1.0, 2.0, 0.0, 0.0]))


class TestCriterion:

    def test_row_order_invariant(self, gaussian_problem, rng):
        dataset, fem, A, _ = gaussian_problem
        order = rng.permutation(dataset.n)
        theta = initial_theta(dataset)
        a = reml_criterion(theta, dataset, fem, A)
        b = reml_criterion(theta, dataset.reordered(order), fem, A[order])
        assert b == pytest.approx(a, rel=1e-10)

    def test_null_model_limit(self, gaussian_problem):
        dataset, fem, A, _ = gaussian_problem
        dof = dataset.n - 1
        rss = float(np.sum((dataset.y - dataset.y.mean()) ** 2))
        limit = 0.5 * dof * (math.log(2.0 * math.pi * rss / dof) + 1.0) + 0.5 * math.log(dataset.n)
        gaps = [abs(reml_criterion([0.0, t], dataset, fem, A) - limit) for t in (4.0, 8.0, 12.0)]
        assert gaps[1] < gaps[0]
        assert gaps[2] < 1e-6 * abs(limit)

    def test_unprofiled_agrees_at_profiled_variance(self, gaussian_problem):
        dataset, fem, A, _ = gaussian_problem
        problem = RemlProblem(dataset, fem, A, warm_start=False)
        theta = initial_theta(dataset)
        state = problem.evaluate(theta)
        s2 = state.sigma2
        full = [theta[0], theta[1] - 0.5 * math.log(s2), math.log(s2)]
        assert problem.criterion(full) == pytest.approx(state.value, rel=1e-12)

    def test_unevaluable_point_scores_inf(self, gaussian_problem):
        dataset, fem, A, _ = gaussian_problem
        problem = RemlProblem(dataset, fem, A)
        assert problem.criterion([np.nan, 0.0]) == math.inf
        assert problem.trace[-1][1] == math.inf

    def test_poisson_surface_finite_at_tight_tolerance(self, poisson_problem):
        dataset, fem, A, _ = poisson_problem
        settings = {"pirls_tolerance": 1e-12}
        centre = np.array([-0.3405, -0.5708])
        values = [
            reml_criterion(centre + np.array([dk, dt]), dataset, fem, A, settings)
            for dk in (-1e-4, 0.0, 1e-4) for dt in (-1e-4, 0.0, 1e-4)
        ]
        assert all(math.isfinite(v) for v in values)
        assert max(values) - min(values) < 1e-2

    def test_wrong_theta_length(self, poisson_problem):
        dataset, fem, A, _ = poisson_problem
        with pytest.raises(FitError, match="length 3"):
            RemlProblem(dataset, fem, A).evaluate([0.0, 0.0, 0.0])


def finite_difference(f, theta, h=1e-4):
    theta = np.asarray(theta, dtype=float)
    out = np.empty(theta.size)
    for k in range(theta.size):
        e = np.zeros(theta.size)
        e[k] = h
        out[k] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return out


class TestGradient:

    @pytest.mark.parametrize("offset", [(0.0, 0.0), (0.4, -0.3), (-0.5, 0.6)])
    def test_gaussian_profiled(self, gaussian_problem, offset):
        dataset, fem, A, _ = gaussian_problem
        theta = initial_theta(dataset) + np.array(offset)
        fd = finite_difference(lambda t: reml_criterion(t, dataset, fem, A), theta)
        grad = reml_gradient(theta, dataset, fem, A)
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-5 * max(1.0, np.abs(fd).max()))

    @pytest.mark.parametrize("offset", [(0.0, 0.0, 0.0), (0.3, -0.2, 0.5), (-0.4, 0.3, -0.6)])
    def test_gaussian_full(self, gaussian_problem, offset):
        dataset, fem, A, _ = gaussian_problem
        t0 = initial_theta(dataset)
        s2 = 0.04
        theta = np.array([t0[0], t0[1] - 0.5 * math.log(s2), math.log(s2)]) + np.array(offset)
        fd = finite_difference(lambda t: reml_criterion(t, dataset, fem, A), theta)
        grad = reml_gradient(theta, dataset, fem, A)
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-5 * max(1.0, np.abs(fd).max()))

    @pytest.mark.parametrize("offset", [(0.0, 0.0), (0.3, 0.4), (-0.4, -0.2)])
    def test_poisson(self, poisson_problem, offset):
        dataset, fem, A, _ = poisson_problem
        settings = {"pirls_tolerance": 1e-12}
        theta = initial_theta(dataset) + np.array(offset)
        fd = finite_difference(lambda t: reml_criterion(t, dataset, fem, A, settings), theta)
        grad = reml_gradient(theta, dataset, fem, A, settings)
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-5 * max(1.0, np.abs(fd).max()))


class TestOptimize:

    def test_gaussian_fit(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        fit = optimize_hyperparameters(dataset, fem, A, mesh)
        assert fit.converged
        assert len(fit.trace) == fit.n_evaluations
        assert min(v for _, v in fit.trace) == pytest.approx(fit.reml_value, rel=1e-8)
        assert fit.sigma2 > 0
        assert 1.0 < fit.edf < fit.beta_hat.size
        assert fit.theta_hat.shape == (3,)
        np.testing.assert_allclose(np.exp(fit.theta_hat), [fit.kappa, fit.tau, fit.sigma2])

    def test_starting_points_agree(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        t0 = initial_theta(dataset)
        a = optimize_hyperparameters(dataset, fem, A, mesh, t0 + np.array([1.0, 1.0]))
        b = optimize_hyperparameters(dataset, fem, A, mesh, t0 - np.array([1.0, 1.0]))
        assert a.converged and b.converged
        np.testing.assert_allclose(a.theta_hat, b.theta_hat, atol=1e-2)
        assert a.reml_value == pytest.approx(b.reml_value, rel=1e-6)

    def test_scale_equivariance(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        scaled = Dataset(locations=dataset.locations, y=3.0 * dataset.y, family=GAUSSIAN)
        a = optimize_hyperparameters(dataset, fem, A, mesh)
        b = optimize_hyperparameters(scaled, fem, A, mesh)
        np.testing.assert_allclose(predict(b, dataset.locations).mean,
                                   3.0 * predict(a, dataset.locations).mean, rtol=1e-6)
        assert b.sigma2 == pytest.approx(9.0 * a.sigma2, rel=1e-6)

    def test_deterministic(self, poisson_problem):
        dataset, fem, A, mesh = poisson_problem
        a = optimize_hyperparameters(dataset, fem, A, mesh)
        b = optimize_hyperparameters(dataset, fem, A, mesh)
        np.testing.assert_array_equal(a.beta_hat, b.beta_hat)
        assert a.sigma2 is None
        assert a.theta_hat.shape == (2,)

    def test_evaluation_cap(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        fit = optimize_hyperparameters(dataset, fem, A, mesh, settings={"max_evaluations": 5})
        assert not fit.converged
        assert math.isfinite(fit.reml_value)


class TestPrediction:

    def test_interpolates_as_noise_vanishes(self, mesh_1d, fem_1d):
        x = np.linspace(1.0, 9.0, 20)
        dataset = Dataset(locations=x, y=np.sin(x), family=GAUSSIAN)
        A, _ = projection_matrix(fem_1d.spec, mesh_1d, x)
        fit = fixed_fit(dataset, fem_1d, A, mesh_1d, sigma2=1e-8)
        np.testing.assert_allclose(predict(fit, x).mean, np.sin(x), atol=1e-4)

    def test_edge_variance_inflated(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        fit = fixed_fit(dataset, fem, A, mesh)
        se = predict(fit, np.array([5.0, mesh.knots[-1]])).se
        assert se[0] < se[1]

    def test_outside_locations(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        fit = fixed_fit(dataset, fem, A, mesh)
        pred = predict(fit, np.array([5.0, 100.0]))
        np.testing.assert_array_equal(pred.outside, [False, True])
        assert np.isnan(pred.mean[1]) and np.isnan(pred.se[1])
        assert np.isfinite(pred.mean[0])

    def test_poisson_response_scale(self, poisson_problem):
        dataset, fem, A, mesh = poisson_problem
        fit = fixed_fit(dataset, fem, A, mesh, sigma2=None)
        pred = predict(fit, np.array([2.0, 7.0]))
        np.testing.assert_allclose(pred.response_mean, np.exp(pred.mean))

    def test_posterior_draw_moments(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        fit = fixed_fit(dataset, fem, A, mesh)
        locs = np.array([0.5, 5.0, 9.5])
        pred = predict(fit, locs)
        N = 20000
        draws = posterior_samples(fit, locs, N, seed=8, batch_size=2500, threads=2)
        assert draws.shape == (N, 3)
        np.testing.assert_array_less(np.abs(draws.mean(axis=0) - pred.mean), 4.0 * pred.se / math.sqrt(N))
        np.testing.assert_array_less(np.abs(draws.var(axis=0) - pred.se**2),
                                     4.0 * pred.se**2 * math.sqrt(2.0 / N))

    def test_compare_with_itself(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        fit = fixed_fit(dataset, fem, A, mesh)
        locs = np.array([2.0, 6.0])
        n = 20000
        mean, sd = compare_posteriors(fit, fit, locs, n, seed=1)
        se = predict(fit, locs).se
        np.testing.assert_allclose(sd, math.sqrt(2.0) * se, rtol=0.05)
        np.testing.assert_array_less(np.abs(mean), 5.0 * sd / math.sqrt(n))

    def test_compare_needs_two_draws(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        fit = fixed_fit(dataset, fem, A, mesh)
        with pytest.raises(FitError, match="at least 2"):
            compare_posteriors(fit, fit, np.array([1.0]), 1)

    def test_restore_checks_coefficients(self, gaussian_problem):
        dataset, fem, A, mesh = gaussian_problem
        with pytest.raises(DataError, match="coefficients"):
            restore_fit(dataset, fem, A, mesh, 1.0, 1.0, 0.1, np.zeros(3))


@pytest.mark.slow
class TestRecovery:

    def test_gaussian_hyperparameters(self):
        mesh = build_mesh_1d(0.0, 50.0, 250, extension_fraction=0.2)
        fem = fem_matrices(basis_for_mesh(mesh, 2), mesh)
        truth = MaternParams(tau=1.0, kappa=1.0, d=1)
        hits = 0
        for rep in range(10):
            dataset, A, f = simulated_dataset(
                mesh, fem, 500, "gaussian", truth, seed=100 + rep, noise_sd=0.1, domain=(0.0, 50.0),
            )
            fit = optimize_hyperparameters(dataset, fem, A, mesh)
            assert fit.converged
            if abs(math.log(fit.kappa)) <= 0.5 and abs(math.log(fit.tau)) <= 0.5:
                hits += 1
            fitted = predict(fit, dataset.locations).mean
            assert np.corrcoef(fitted, f)[0, 1] >= 0.9
        assert hits >= 8

    def test_poisson_counts(self):
        mesh = build_mesh_1d(0.0, 140.0, 48, extension_fraction=0.0)
        fem = fem_matrices(basis_for_mesh(mesh, 2), mesh)
        assert fem.n_basis == 50
        truth = MaternParams(tau=3.252, kappa=0.475, d=1)
        kappas, taus, hits = [], [], 0
        for rep in range(10):
            dataset, A, f = simulated_dataset(
                mesh, fem, 140, "poisson", truth, seed=200 + rep, mean=3.0, domain=(0.0, 140.0),
            )
            fit = optimize_hyperparameters(dataset, fem, A, mesh)
            assert fit.converged
            fitted = predict(fit, dataset.locations).mean
            assert np.corrcoef(fitted, f)[0, 1] >= 0.9
            if abs(math.log(fit.kappa / truth.kappa)) <= 0.5 and abs(math.log(fit.tau / truth.tau)) <= 0.5:
                hits += 1
            kappas.append(fit.kappa)
            taus.append(fit.tau)
        assert hits >= 8
        assert 0.40 <= np.median(kappas) <= 0.55
        assert 2.8 <= np.median(taus) <= 3.8

    def test_two_dimensional_scale(self):
        rng = np.random.default_rng(21)
        mesh = delaunay_triangulate(rng.uniform(0.0, 1.0, size=(1500, 2)))
        fem = fem_matrices(basis_for_mesh(mesh, 1), mesh)
        truth = MaternParams(tau=0.1, kappa=10.0, d=2)
        Q = matern_precision(fem, truth)
        assert Q.density() <= 0.02
        x = rng.uniform(0.05, 0.95, size=(5000, 2))
        A, outside = projection_matrix(fem.spec, mesh, x)
        assert not outside.any()
        f = simulate_field(Q, A, 1, seed=3).values[0]
        dataset = Dataset(locations=x, y=f + 0.1 * rng.standard_normal(5000), family=GAUSSIAN)
        fit = optimize_hyperparameters(dataset, fem, A, mesh)
        assert fit.converged
        assert np.corrcoef(predict(fit, x).mean, f)[0, 1] >= 0.9
