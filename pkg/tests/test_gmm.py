"""Тесты смеси гауссиан, силуэта и выбора k."""

import numpy as np
import pytest
from conftest import spherical_gmm

from tscseg.errors import SingleCluster, TooFewPoints, ValidationFailed
from tscseg.gmm import (
    GmmModel,
    gmm_assign,
    gmm_fit,
    gmm_posterior,
    gmm_predict,
    kmeans_plusplus,
    select_k,
    silhouette_score,
)
from tscseg.schemas import GmmFitConfig


@pytest.fixture
def gmm_config():
    return GmmFitConfig(num_restarts=3, seed=0)


@pytest.fixture
def two_blobs():
    rng = np.random.default_rng(0)
    first = rng.normal(scale=0.1, size=(100, 2))
    second = rng.normal(loc=10.0, scale=0.1, size=(100, 2))
    return first, second


def three_blobs(seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    return np.vstack([c + rng.normal(scale=0.3, size=(30, 2)) for c in centers])


def _brute_force_silhouette(data: np.ndarray, labels: np.ndarray) -> float:
    scores = []
    for i, x in enumerate(data):
        dist = np.linalg.norm(data - x, axis=1)
        own = (labels == labels[i]) & (np.arange(len(data)) != i)
        if not own.any():
            scores.append(0.0)
            continue
        a = dist[own].mean()
        b = min(dist[labels == other].mean() for other in set(labels) if other != labels[i])
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


class TestFit:
    def test_single_component_closed_form(self, gmm_config):
        data = np.random.default_rng(1).normal(size=(50, 3))
        model = gmm_fit(data, 1, gmm_config)
        np.testing.assert_allclose(model.weights, [1.0])
        np.testing.assert_allclose(model.means[0], data.mean(axis=0), atol=1e-10)
        expected = np.cov(data.T, bias=True) + gmm_config.covariance_regularization * np.eye(3)
        np.testing.assert_allclose(model.covariances[0], expected, atol=1e-10)

    def test_recovers_separated_means(self, gmm_config, two_blobs):
        first, second = two_blobs
        model = gmm_fit(np.vstack([first, second]), 2, gmm_config)
        means = model.means[np.argsort(model.means[:, 0])]
        assert np.all(np.abs(means[0] - first.mean(axis=0)) < 0.05)
        assert np.all(np.abs(means[1] - second.mean(axis=0)) < 0.05)

    def test_one_point_per_component(self, gmm_config):
        data = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        model = gmm_fit(data, 3, gmm_config)
        for mean in model.means:
            assert np.min(np.linalg.norm(data - mean, axis=1)) < 1e-9
        for cov in model.covariances:
            np.testing.assert_allclose(cov, gmm_config.covariance_regularization * np.eye(2), atol=1e-12)

    def test_log_likelihood_never_decreases(self, gmm_config):
        model = gmm_fit(three_blobs(), 3, gmm_config)
        history = np.array(model.ll_history)
        assert np.all(np.diff(history) >= -1e-9)
        assert model.fit_log_likelihood == history[-1]

    @pytest.mark.parametrize("seed", range(100))
    def test_log_likelihood_monotone_on_random_instances(self, seed):
        rng = np.random.default_rng([seed, 11])
        k = int(rng.integers(1, 9))
        d = int(rng.integers(1, 17))
        n = int(rng.integers(max(k, 10), 501))
        centers = rng.normal(scale=4.0, size=(k, d))
        data = centers[rng.integers(0, k, size=n)] + rng.normal(size=(n, d))
        model = gmm_fit(data, k, GmmFitConfig(num_restarts=1, seed=seed))
        assert np.all(np.diff(np.array(model.ll_history)) >= -1e-9)

    def test_deterministic_for_seed(self, gmm_config):
        data = three_blobs()
        first = gmm_fit(data, 3, gmm_config)
        second = gmm_fit(data, 3, gmm_config)
        np.testing.assert_array_equal(first.means, second.means)

    def test_explicit_regularization(self, gmm_config):
        model = gmm_fit(three_blobs(), 1, gmm_config, regularization=0.5)
        assert model.covariance_regularization == 0.5

    def test_too_few_points(self, gmm_config):
        with pytest.raises(TooFewPoints):
            gmm_fit(np.zeros((2, 2)), 3, gmm_config)

    def test_kmeans_plusplus_picks_distinct_points(self):
        data = np.array([[0.0], [0.0], [5.0], [9.0]])
        centers = kmeans_plusplus(data, 3, np.random.default_rng(0))
        assert sorted(centers[:, 0]) == [0.0, 5.0, 9.0]


class TestModel:
    def test_rejects_weights_not_summing_to_one(self):
        with pytest.raises(ValidationFailed):
            GmmModel(weights=np.array([0.5, 0.6]), means=np.zeros((2, 1)), covariances=np.ones((2, 1, 1)))

    def test_single_component_posterior(self):
        model = spherical_gmm([[1.0, 2.0]])
        np.testing.assert_allclose(gmm_posterior(model, np.array([100.0, -3.0])), [1.0])
        assert gmm_assign(model, np.zeros(2)) == 0

    def test_posterior_at_component_mean(self):
        model = spherical_gmm([[0.0, 0.0], [10.0, 10.0]])
        assert gmm_posterior(model, np.zeros(2))[0] > 0.99
        assert gmm_assign(model, np.array([10.0, 10.0])) == 1

    def test_midpoint_tie_goes_to_lower_index(self):
        model = spherical_gmm([[-1.0, 0.0], [1.0, 0.0]])
        posterior = gmm_posterior(model, np.zeros(2))
        np.testing.assert_allclose(posterior, [0.5, 0.5], atol=1e-9)
        assert gmm_assign(model, np.zeros(2)) == 0

    @pytest.mark.parametrize("distance", [1e3, 1e6])
    def test_posterior_far_from_all_components(self, distance):
        model = spherical_gmm([[-1.0, 0.0], [1.0, 0.0]])
        posterior = gmm_posterior(model, np.array([distance, distance]))
        assert np.all(np.isfinite(posterior))
        assert np.all((posterior >= 0.0) & (posterior <= 1.0))
        assert posterior.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(posterior, [0.0, 1.0], atol=1e-12)

    def test_predict_matches_assign(self):
        model = spherical_gmm([[0.0, 0.0], [5.0, 5.0]])
        data = np.array([[0.1, 0.0], [4.0, 5.0], [2.5, 2.5]])
        assert list(gmm_predict(model, data)) == [gmm_assign(model, x) for x in data]


class TestSilhouette:
    def test_hand_computed_example(self):
        data = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])
        assert silhouette_score(data, np.array([0, 0, 1, 1])) == pytest.approx(0.9293, abs=1e-3)

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_pairwise_definition(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 51))
        data = rng.normal(size=(n, int(rng.integers(1, 6))))
        labels = rng.integers(0, int(rng.integers(2, 6)), size=n)
        labels[:2] = [0, 1]
        assert silhouette_score(data, labels) == pytest.approx(_brute_force_silhouette(data, labels), abs=1e-12)

    def test_singletons_score_zero(self):
        data = np.array([[0.0], [1.0], [3.0]])
        assert silhouette_score(data, np.array([0, 1, 2])) == 0.0

    def test_duplicates_labeled_apart(self):
        points = np.random.default_rng(0).normal(size=(10, 2))
        data = np.vstack([points, points])
        labels = np.array([0] * 10 + [1] * 10)
        assert silhouette_score(data, labels) <= 0.0

    def test_single_cluster(self):
        with pytest.raises(SingleCluster):
            silhouette_score(np.zeros((5, 2)), np.zeros(5))

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            silhouette_score(np.array([[0.0], [1.0]]), np.array([0, 1]))


class TestSelectK:
    def test_three_blobs(self, gmm_config):
        selection = select_k(three_blobs(), 2, 6, gmm_config)
        assert selection.k == 3
        assert selection.model.num_components == 3
        assert set(selection.curve) == {2, 3, 4, 5, 6}
        assert selection.score == max(selection.curve.values())

    def test_fixed_k(self, gmm_config):
        selection = select_k(three_blobs(), 4, 4, gmm_config)
        assert selection.k == 4

    def test_duplicated_dataset_same_k(self, gmm_config):
        data = three_blobs(seed=2)
        assert select_k(np.vstack([data, data]), 2, 5, gmm_config).k == select_k(data, 2, 5, gmm_config).k

    def test_range_beyond_points(self, gmm_config):
        with pytest.raises(TooFewPoints):
            select_k(np.zeros((4, 2)), 2, 4, gmm_config)


class TestTranslation:
    def test_labels_and_silhouette_unchanged(self, gmm_config):
        data = three_blobs(seed=4)
        shifted = data + np.array([1000.0, -1000.0])
        original = gmm_predict(gmm_fit(data, 3, gmm_config), data)
        moved = gmm_predict(gmm_fit(shifted, 3, gmm_config), shifted)
        # одинаковое разбиение с точностью до перенумерации компонент
        pairs = set(zip(original.tolist(), moved.tolist()))
        assert len(pairs) == len(set(original.tolist())) == len(set(moved.tolist()))
        assert silhouette_score(shifted, original) == pytest.approx(silhouette_score(data, original), abs=1e-9)
