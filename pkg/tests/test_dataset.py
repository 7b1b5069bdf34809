"""
Tests for pair enumeration, planted datasets, splits and dataset files
"""

import numpy as np
import pytest

from app.models.config import DescriptorScheme
from app.models.domain import Configuration, ElementalTable, Element, MixPair, Phase, PlantedModel
from app.models.errors import DatasetError, MissingArtifactError, ModelTermError
from app.services.dataset_service import GPA_A3_TO_KJ_PER_MOL, dataset_service


def test_pair_counts():
    assert len(dataset_service.enumerate_pairs((0.25, 0.375, 0.5, 0.625, 0.75))) == 525
    assert len(dataset_service.enumerate_pairs((0.5,))) == 105
    with pytest.raises(ValueError):
        dataset_service.enumerate_pairs(())


def test_fused_pairs_cover_both_phases():
    pairs = dataset_service.configuration_pairs(Configuration.FUSED)
    assert len(pairs) == 1050
    assert sum(p.phase is Phase.MONAZITE for p in pairs) == 525
    assert len(set(pairs)) == 1050


def test_margules_vanishes_for_equal_volumes(table):
    values = {key: dict(record) for key, record in table.values.items()}
    values[(Element.Ce, Phase.MONAZITE)]["V"] = values[(Element.La, Phase.MONAZITE)]["V"]
    equal = ElementalTable(values)
    assert dataset_service.margules_baseline(equal, MixPair("La", "Ce", 0.5, "Monazite")) == 0.0


def test_margules_at_half(table):
    pair = MixPair("La", "Ce", 0.5, "Monazite")
    w = (133.0 + 137.9) / 2 / (6 * (76.43 + 74.88) / 2) * (76.43 - 74.88) ** 2
    assert dataset_service.margules_baseline(table, pair) == pytest.approx(0.25 * w * GPA_A3_TO_KJ_PER_MOL, rel=1e-12)


@pytest.mark.parametrize("phase", list(Phase))
def test_margules_is_symmetric_under_swap(table, phase):
    for li, lj, m in (("La", "Lu", 0.25), ("Nd", "Gd", 0.625), ("Ce", "Pr", 0.5)):
        forward = dataset_service.margules_baseline(table, MixPair(li, lj, m, phase))
        backward = dataset_service.margules_baseline(table, MixPair(lj, li, 1.0 - m, phase))
        assert forward == backward


def test_generator_is_linear_in_the_model(table, prior_scheme):
    a = PlantedModel((("m*(1-m)*diff(V)^2", 1.1453),), noise_sigma=0.0)
    b = PlantedModel((("diff(Y)*diff(V)*inv(mean(V)^2)", 108.1079), ("mean(Y)", -0.5)), noise_sigma=0.0)
    doubled = PlantedModel((("m*(1-m)*diff(V)^2", 2 * 1.1453),), noise_sigma=0.0)
    ya, yb, yab, y2a = (
        dataset_service.generate_synthetic(table, prior_scheme, model, Configuration.FUSED).y
        for model in (a, b, a + b, doubled)
    )
    np.testing.assert_allclose(yab, ya + yb, rtol=1e-12, atol=1e-10)
    np.testing.assert_allclose(y2a, 2 * ya, rtol=1e-14)


def test_margules_model_reproduces_baseline(table, prior_scheme):
    ds = dataset_service.generate_synthetic(
        table, prior_scheme, dataset_service.margules_model(), Configuration.FUSED
    )
    expected = np.array([dataset_service.margules_baseline(table, p) for p in ds.pairs])
    np.testing.assert_allclose(ds.y, expected, rtol=1e-12)


def test_planted_dataset_shapes(monazite_half, monazite):
    assert monazite_half.X.shape == (105, 56)
    assert len(monazite) == 525
    assert monazite.dropped == ("inv(diff(chi))", "inv(diff(Zeff))")


def test_generation_is_deterministic(table, prior_scheme, tmp_path):
    model = PlantedModel((("m*(1-m)*diff(V)^2", 1.1453),), noise_sigma=None, seed=11)
    first = dataset_service.generate_synthetic(table, prior_scheme, model, Configuration.XENOTIME_ONLY)
    second = dataset_service.generate_synthetic(table, prior_scheme, model, Configuration.XENOTIME_ONLY)
    a = dataset_service.write_csv(first, tmp_path / "a.csv")
    b = dataset_service.write_csv(second, tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_relative_noise_is_one_percent_of_range(table, prior_scheme):
    clean = PlantedModel((("m*(1-m)*diff(V)^2", 1.0),), noise_sigma=0.0)
    noisy = PlantedModel((("m*(1-m)*diff(V)^2", 1.0),), noise_sigma=None, seed=3)
    a = dataset_service.generate_synthetic(table, prior_scheme, clean, Configuration.MONAZITE_ONLY)
    b = dataset_service.generate_synthetic(table, prior_scheme, noisy, Configuration.MONAZITE_ONLY)
    sigma = 0.01 * (a.y.max() - a.y.min())
    assert 0.8 * sigma < np.std(b.y - a.y) < 1.2 * sigma


def test_unknown_planted_label(table, prior_scheme):
    model = PlantedModel((("diff(rho)*m", 1.0),))
    with pytest.raises(ModelTermError) as err:
        dataset_service.generate_synthetic(table, prior_scheme, model, Configuration.MONAZITE_ONLY, ratios=(0.5,))
    assert err.value.label == "diff(rho)"


def test_split_sizes(monazite):
    plan = dataset_service.split(monazite, 0.8, seed=1)
    assert (len(plan.train), len(plan.test)) == (420, 105)
    np.testing.assert_array_equal(np.sort(np.concatenate([plan.train, plan.test])), np.arange(525))
    assert plan == dataset_service.split(monazite, 0.8, seed=1)


def test_even_split_of_fused(table, prior_scheme, planted):
    fused = dataset_service.generate_synthetic(table, prior_scheme, planted, Configuration.FUSED)
    plan = dataset_service.split(fused, 0.5, seed=4)
    assert (len(plan.train), len(plan.test)) == (525, 525)


def first_points(ds, table, n):
    return dataset_service.build_dataset(table, ds.pairs[:n], ds.y[:n], ds.scheme, ds.configuration)


def test_split_needs_two_points(table, monazite_half):
    with pytest.raises(DatasetError):
        dataset_service.split(first_points(monazite_half, table, 1), 0.8, seed=0)


def test_cv_folds_partition_the_data(monazite):
    plans = dataset_service.cv_folds(monazite, 5, seed=2)
    assert [len(p.test) for p in plans] == [105] * 5
    np.testing.assert_array_equal(np.sort(np.concatenate([p.test for p in plans])), np.arange(525))
    for plan in plans:
        assert len(plan.train) + len(plan.test) == 525


def test_cv_fold_edge_cases(table, monazite_half):
    pair = first_points(monazite_half, table, 2)
    plans = dataset_service.cv_folds(pair, 2, seed=0)
    assert sorted(len(p.test) for p in plans) == [1, 1]
    with pytest.raises(DatasetError):
        dataset_service.cv_folds(pair, 3, seed=0)
    with pytest.raises(ValueError):
        dataset_service.cv_folds(pair, 1, seed=0)


def test_dataset_file_reads_back(monazite, tmp_path):
    path = dataset_service.write_csv(monazite, tmp_path / "dataset_monazite.csv")
    loaded = dataset_service.read_csv(path, DescriptorScheme())
    assert loaded.labels == monazite.labels
    assert loaded.pairs == monazite.pairs
    assert loaded.configuration is Configuration.MONAZITE_ONLY
    assert loaded.dropped == monazite.dropped
    np.testing.assert_array_equal(loaded.X, monazite.X)
    np.testing.assert_array_equal(loaded.y, monazite.y)


def test_missing_dataset_file(tmp_path):
    with pytest.raises(MissingArtifactError, match="nothing.csv"):
        dataset_service.read_csv(tmp_path / "nothing.csv")


def test_switch_to_krr_scheme(monazite_half, table):
    krr = dataset_service.with_scheme(monazite_half, table, DescriptorScheme.krr())
    assert krr.X.shape == (105, 30)
    np.testing.assert_array_equal(krr.y, monazite_half.y)
