"""
Tests for the l1 path, support selection and the l0 best-subset search
"""

import itertools

import numpy as np
import pytest

from app.models.config import DescriptorScheme, SparsifyConfig
from app.models.domain import Configuration, ErrorReport, PathReport, PlantedModel, SparseFormula
from app.models.errors import SolverError, SupportTooLargeError
from app.services.dataset_service import dataset_service
from app.services.sparsify_service import soft_threshold, sparsify_service


def objective(V, y, gamma, b, lam):
    r = y - b - V @ gamma
    return float(r @ r) + lam * float(np.abs(gamma).sum())


def all_subsets_oracle(X, y, k):
    """Lowest-MSE k-subset by plain enumeration, earliest subset on ties"""
    best = None
    for subset in itertools.combinations(range(X.shape[1]), k):
        design = np.column_stack([np.ones(len(y)), X[:, list(subset)]])
        coef = np.linalg.lstsq(design, y, rcond=None)[0]
        mse = float(np.mean((y - design @ coef) ** 2))
        if best is None or mse < best[1]:
            best = (subset, mse)
    return best


def test_soft_threshold():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert soft_threshold(0.5, 1.0) == 0.0


def test_single_coordinate_closed_form():
    result = sparsify_service.lasso_l1(np.ones((2, 1)), np.ones(2), 2.0, intercept=False)
    assert result.gamma[0] == 0.5
    assert result.converged


def test_zero_penalty_is_least_squares():
    rng = np.random.default_rng(4)
    for m in (3, 10, 20):
        V = rng.normal(size=(60, m))
        y = V @ rng.normal(size=m) + 0.1 * rng.normal(size=60) + 2.0
        result = sparsify_service.lasso_l1(V, y, 0.0, tol=1e-13, max_sweeps=100000)
        coef = np.linalg.lstsq(np.column_stack([np.ones(60), V]), y, rcond=None)[0]
        np.testing.assert_allclose(result.gamma, coef[1:], rtol=1e-8, atol=1e-10)
        assert result.intercept == pytest.approx(coef[0], rel=1e-8)


def test_full_shrinkage_above_lambda_max():
    rng = np.random.default_rng(5)
    V = rng.normal(size=(40, 8))
    y = rng.normal(size=40)
    lambda_max = 2.0 * np.max(np.abs(V.T @ (y - y.mean())))
    result = sparsify_service.lasso_l1(V, y, lambda_max * 1.001)
    assert np.all(result.gamma == 0.0)
    assert len(result.active) == 0
    assert result.intercept == pytest.approx(y.mean())


def test_objective_never_increases():
    rng = np.random.default_rng(6)
    for _ in range(100):
        V = rng.normal(size=(30, 12))
        y = V[:, :3] @ rng.normal(size=3) + rng.normal(size=30)
        history = np.array(sparsify_service.lasso_l1(V, y, rng.uniform(0.01, 5.0)).objective_history)
        assert np.all(np.diff(history) <= 1e-9 * np.abs(history[:-1]) + 1e-15 * float(y @ y))


def test_coordinates_are_one_dimensional_minima():
    rng = np.random.default_rng(7)
    V = rng.normal(size=(50, 6))
    y = V @ np.array([1.5, 0.0, -2.0, 0.0, 0.3, 0.0]) + 0.2 * rng.normal(size=50)
    lam = 3.0
    result = sparsify_service.lasso_l1(V, y, lam, tol=1e-13, max_sweeps=100000)
    base = objective(V, y, result.gamma, result.intercept, lam)
    for j in range(6):
        for step in (1e-6, -1e-6):
            moved = result.gamma.copy()
            moved[j] += step
            assert objective(V, y, moved, result.intercept, lam) >= base - 1e-12 * base


def test_sweep_limit_reports_non_convergence():
    rng = np.random.default_rng(8)
    V = rng.normal(size=(30, 10))
    V[:, 1] = V[:, 0] + 1e-3 * rng.normal(size=30)
    result = sparsify_service.lasso_l1(V, V[:, 0] + V[:, 1], 1e-4, tol=1e-15, max_sweeps=1)
    assert result.iterations == 1
    assert not result.converged


def test_default_penalty_path():
    lambdas = SparsifyConfig().lambdas()
    assert len(lambdas) == 20
    assert (lambdas[0], lambdas[1], lambdas[-1]) == (0.001, 0.006, 0.096)


def test_path_shrinks_the_active_set():
    rng = np.random.default_rng(9)
    V = rng.normal(size=(80, 25))
    V /= np.linalg.norm(V, axis=0)
    y = V[:, 0] - 0.5 * V[:, 3] + 0.05 * rng.normal(size=80)
    y = (y - y.mean()) / np.linalg.norm(y - y.mean())
    path, results = sparsify_service.lasso_path(V, y, SparsifyConfig().lambdas())
    assert len(path) == len(results) == 20
    assert path.active_sizes[-1] <= path.active_sizes[0]
    for active in path.active_sets:
        assert {0, 3} <= set(active)


def test_noise_target_vanishes_at_lambda_max():
    rng = np.random.default_rng(10)
    V = rng.normal(size=(50, 10))
    y = rng.normal(size=50)
    lambda_max = 2.0 * np.max(np.abs(V.T @ (y - y.mean())))
    path, _ = sparsify_service.lasso_path(V, y, [lambda_max * 0.5, lambda_max * 1.001])
    assert path.active_sizes[-1] == 0


def test_path_needs_increasing_penalties():
    with pytest.raises(ValueError):
        sparsify_service.lasso_path(np.ones((3, 2)), np.ones(3), [0.1, 0.1])


def test_cold_and_warm_paths_agree():
    rng = np.random.default_rng(11)
    V = rng.normal(size=(40, 6))
    y = V @ np.array([1.0, 0.0, 0.5, 0.0, 0.0, -1.0]) + 0.1 * rng.normal(size=40)
    warm, _ = sparsify_service.lasso_path(V, y, [0.5, 1.0, 2.0], tol=1e-12, max_sweeps=100000)
    cold, _ = sparsify_service.lasso_path(V, y, [0.5, 1.0, 2.0], tol=1e-12, max_sweeps=100000, warm_start=False, threads=2)
    assert warm.active_sets == cold.active_sets


def make_path(sizes, converged=()):
    lambdas = tuple(0.001 + 0.01 * i for i in range(len(sizes)))
    sets = tuple(tuple(range(size)) for size in sizes)
    errors = tuple(ErrorReport(0.0, 0.0, 0.0) for _ in sizes)
    sweeps = tuple(10 if ok else 100 for ok in converged)
    return PathReport(lambdas, tuple(sizes), errors, sets, tuple(converged), sweeps)


def test_select_support():
    assert sparsify_service.select_support(make_path([50, 35, 20, 5]), cap=30) == list(range(20))
    assert sparsify_service.select_support(make_path([12, 8]), cap=30) == list(range(12))
    assert sparsify_service.select_support(make_path([50, 45, 40]), cap=30) == list(range(40))
    assert sparsify_service.select_support(make_path([3, 0]), cap=1) == []
    with pytest.raises(ValueError):
        sparsify_service.select_support(make_path([]), cap=30)
    with pytest.raises(ValueError):
        sparsify_service.select_support(make_path([3]), cap=0)


def test_select_support_skips_unconverged_points():
    path = make_path([25, 18, 9], converged=(False, True, True))
    assert sparsify_service.select_support(path, cap=30) == list(range(18))
    path = make_path([50, 45, 40], converged=(True, True, False))
    assert sparsify_service.select_support(path, cap=30) == list(range(45))
    with pytest.raises(SolverError, match="max_sweeps"):
        sparsify_service.select_support(make_path([5, 3], converged=(False, False)), cap=30)


def test_path_records_solver_status():
    rng = np.random.default_rng(18)
    V = rng.normal(size=(40, 8))
    V[:, 1] = V[:, 0] + 1e-3 * rng.normal(size=40)
    y = V[:, 0] + V[:, 1] + 0.1 * rng.normal(size=40)
    lambda_max = 2.0 * np.max(np.abs(V.T @ (y - y.mean())))
    path, results = sparsify_service.lasso_path(
        V, y, [1e-4, lambda_max * 1.001], tol=1e-15, max_sweeps=2, warm_start=False
    )
    assert path.converged == (False, True)
    assert path.iterations == tuple(r.iterations for r in results)
    assert path.iterations[0] == 2
    with pytest.raises(ValueError):
        PathReport((0.1,), (1,), (ErrorReport(0.0, 0.0, 0.0),), ((0,),), (True, True))


def test_run_refuses_a_path_that_never_converged(table):
    scheme = DescriptorScheme(preset="volume-young")
    ds = dataset_service.generate_synthetic(
        table, scheme, PlantedModel((("m*diff(V)^2", 2.0),)), Configuration.MONAZITE_ONLY
    )
    with pytest.raises(SolverError, match="none of the 20 path points converged"):
        sparsify_service.run(ds, SparsifyConfig(max_degree=2, k_max=2, max_sweeps=1))


def test_exact_column_is_found():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(30, 6))
    formulas = sparsify_service.l0_search(X, X[:, 3], k_max=1, labels=list("abcdef"))
    assert formulas[0].labels == ("d",)
    assert formulas[0].errors.mae < 1e-12
    assert formulas[0].terms[0][1] == pytest.approx(1.0)


def test_matches_all_subsets_oracle():
    rng = np.random.default_rng(13)
    for _ in range(50):
        n, s = rng.integers(20, 120), rng.integers(2, 13)
        X = rng.normal(size=(n, s))
        y = X[:, : min(s, 3)] @ rng.normal(size=min(s, 3)) + rng.normal(size=n)
        formulas = sparsify_service.l0_search(X, y, k_max=min(5, s))
        for formula in formulas:
            subset, mse = all_subsets_oracle(X, y, formula.k)
            assert formula.columns == subset
            assert formula.errors.mse == mse


def test_support_guard_and_empty_support():
    with pytest.raises(SupportTooLargeError, match="larger lambda_hat"):
        sparsify_service.l0_search(np.ones((50, 41)), np.ones(50), support_guard=40)
    with pytest.raises(ValueError):
        sparsify_service.l0_search(np.zeros((10, 0)), np.ones(10))


def test_k_max_is_clamped_to_support():
    rng = np.random.default_rng(14)
    X = rng.normal(size=(20, 2))
    assert [f.k for f in sparsify_service.l0_search(X, rng.normal(size=20), k_max=5)] == [1, 2]


def test_singular_subsets_are_skipped():
    rng = np.random.default_rng(15)
    X = rng.normal(size=(25, 3))
    X[:, 1] = X[:, 0]
    skipped = []
    formulas = sparsify_service.l0_search(X, X[:, 0] + X[:, 2], k_max=2, skipped=skipped)
    assert ("c0", "c1") in skipped
    assert set(formulas[1].columns) != {0, 1}


def test_formula_norm_matches_terms():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(40, 5))
    for formula in sparsify_service.l0_search(X, X @ np.arange(1.0, 6.0), k_max=5):
        assert formula.l0_norm == formula.k == len(formula.terms)


def test_errors_nonincreasing_check():
    rng = np.random.default_rng(17)
    X = rng.normal(size=(60, 7))
    assert sparsify_service.errors_nonincreasing_check(sparsify_service.l0_search(X, rng.normal(size=60)))
    rising = [
        SparseFormula((("a", 1.0),), 0.0, ErrorReport(0.1, 0.01, 0.2)),
        SparseFormula((("a", 1.0), ("b", 1.0)), 0.0, ErrorReport(0.2, 0.04, 0.3)),
    ]
    assert not sparsify_service.errors_nonincreasing_check(rising)


@pytest.mark.parametrize("configuration", list(Configuration))
def test_errors_nonincreasing_on_every_configuration(table, prior_scheme, planted, configuration):
    noisy = PlantedModel(planted.terms, noise_sigma=None, seed=3)
    ds = dataset_service.generate_synthetic(table, prior_scheme, noisy, configuration)
    formulas = sparsify_service.l0_search(ds.X[:, :20], ds.y, k_max=5, labels=ds.labels[:20])
    assert [f.k for f in formulas] == [1, 2, 3, 4, 5]
    assert sparsify_service.errors_nonincreasing_check(formulas)


def test_unit_norm_design(monazite_half):
    from app.services.feature_service import feature_service

    fm = feature_service.expand(monazite_half.X[:, :6], monazite_half.labels[:6], max_degree=2)
    V, target, scale = sparsify_service.design(fm, monazite_half.y)
    np.testing.assert_allclose(np.linalg.norm(V, axis=0), 1.0, rtol=1e-12)
    assert np.linalg.norm(target) == pytest.approx(1.0)
    np.testing.assert_allclose(target * scale, monazite_half.y - monazite_half.y.mean(), atol=1e-12)


def test_run_recovers_a_single_planted_term(table, tmp_path):
    scheme = DescriptorScheme(preset="volume-young")
    model = PlantedModel((("m*diff(V)^2", 2.0),))
    ds = dataset_service.generate_synthetic(table, scheme, model, Configuration.MONAZITE_ONLY)
    config = SparsifyConfig(max_degree=2, k_max=2, cache_dir=tmp_path / "cache")
    outcome = sparsify_service.run(ds, config)
    first = outcome.formulas[0]
    assert first.labels == ("m*diff(V)^2",)
    assert first.terms[0][1] == pytest.approx(2.0, rel=1e-8)
    assert abs(first.intercept) < 1e-8

    cached = sparsify_service.run(ds, config)
    assert list(tmp_path.joinpath("cache").glob("*.fhfm"))
    assert [f.terms for f in cached.formulas] == [f.terms for f in outcome.formulas]


@pytest.mark.slow
def test_planted_two_term_recovery_on_fused_data(table, prior_scheme, planted):
    noisy = PlantedModel(planted.terms, noise_sigma=None, seed=0)
    ds = dataset_service.generate_synthetic(table, prior_scheme, noisy, Configuration.FUSED)
    outcome = sparsify_service.run(ds, SparsifyConfig(), threads=2)
    two = outcome.formulas[1]
    assert set(two.labels) == {label for label, _ in planted.terms}
    expected = dict(planted.terms)
    for label, coefficient in two.terms:
        assert coefficient == pytest.approx(expected[label], rel=0.05)
    assert sparsify_service.errors_nonincreasing_check(outcome.formulas)
    maes = [f.errors.mae for f in outcome.formulas]
    assert maes[0] - maes[1] > maes[3] - maes[4]
