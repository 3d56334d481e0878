import math

import numpy as np
import pytest

from colormodel import (
    COV_EPS,
    GaussianLabelModel,
    fit_weighted,
    init_model,
    log_density,
    log_density_field,
)
from errors import ModelError, UsageError
from grid import ColorImage

LOG_2PI = math.log(2 * math.pi)


def identity_model(q=2):
    means = np.arange(q * 3, dtype=float).reshape(q, 3) / 10.0
    return GaussianLabelModel(means, np.repeat(np.eye(3)[None], q, axis=0))


def test_log_density_at_mean():
    model = identity_model()
    assert log_density(model, model.means[1], 1) == pytest.approx(-1.5 * LOG_2PI, abs=1e-12)


def test_log_density_unit_offset():
    model = identity_model()
    d = model.means[0] + np.array([1.0, 0.0, 0.0])
    assert log_density(model, d, 0) == pytest.approx(-1.5 * LOG_2PI - 0.5, abs=1e-12)


def test_log_density_diagonal_covariance():
    means = np.zeros((2, 3))
    covs = np.stack([np.diag([4.0, 1.0, 1.0]), np.eye(3)])
    model = GaussianLabelModel(means, covs)
    expected = -0.5 * math.log((2 * math.pi) ** 3 * 4.0) - 0.5
    assert log_density(model, [2.0, 0.0, 0.0], 0) == pytest.approx(expected, abs=1e-12)


def test_log_density_matches_explicit_quadratic_form():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(3, 3))
    cov = A @ A.T + 0.5 * np.eye(3)
    means = rng.normal(size=(2, 3))
    model = GaussianLabelModel(means, np.stack([cov, np.eye(3)]))
    d = rng.normal(size=3)
    diff = d - means[0]
    _, logdet = np.linalg.slogdet(2 * math.pi * cov)
    expected = -0.5 * logdet - 0.5 * diff @ np.linalg.solve(cov, diff)
    assert log_density(model, d, 0) == pytest.approx(expected, abs=1e-10)


def test_density_integrates_to_one():
    # grid quadrature over +-6 sigma on a diagonal covariance
    means = np.array([[0.1, -0.2, 0.3], [0.0, 0.0, 0.0]])
    sig = np.array([0.5, 1.0, 2.0])
    model = GaussianLabelModel(means, np.stack([np.diag(sig ** 2), np.eye(3)]))
    axes = [np.linspace(m - 6 * s, m + 6 * s, 61) for m, s in zip(means[0], sig)]
    grid = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)
    img = ColorImage.from_array(grid.reshape(61, 61 * 61, 3))
    dens = np.exp(log_density_field(model, img)[..., 0])
    cell = np.prod([ax[1] - ax[0] for ax in axes])
    assert dens.sum() * cell == pytest.approx(1.0, rel=0.01)


def test_log_density_field_matches_pointwise():
    rng = np.random.default_rng(1)
    img = ColorImage.from_array(rng.random((3, 4, 3)))
    model = identity_model(3)
    field = log_density_field(model, img)
    assert field.shape == (3, 4, 3)
    for y in range(3):
        for x in range(4):
            for xi in range(3):
                assert field[y, x, xi] == pytest.approx(log_density(model, img.pixels[y, x], xi), abs=1e-12)


def test_label_out_of_range():
    with pytest.raises(UsageError):
        log_density(identity_model(), [0, 0, 0], 2)


def test_non_spd_covariance_rejected():
    covs = np.stack([np.eye(3), np.diag([1.0, -1.0, 1.0])])
    with pytest.raises(ModelError):
        GaussianLabelModel(np.zeros((2, 3)), covs)


def test_asymmetric_covariance_rejected():
    bad = np.eye(3)
    bad[0, 1] = 0.5
    with pytest.raises(ModelError):
        GaussianLabelModel(np.zeros((2, 3)), np.stack([np.eye(3), bad]))


def two_clouds(n=200, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal([0.2, 0.3, 0.4], 0.02, size=(n, 3))
    b = rng.normal([0.8, 0.7, 0.6], 0.03, size=(n, 3))
    colors = np.concatenate([a, b])
    truth = np.repeat([0, 1], n)
    return ColorImage.from_array(colors.reshape(20, 2 * n // 20, 3)), truth


def test_fit_one_hot_equals_per_cluster_moments():
    img, truth = two_clouds()
    resp = np.eye(2)[truth]
    model = fit_weighted(img, resp)
    colors = img.colors()
    for xi in range(2):
        members = colors[truth == xi]
        mean = members.mean(axis=0)
        cov = (members - mean).T @ (members - mean) / len(members)
        assert np.allclose(model.means[xi], mean, atol=1e-10)
        assert np.allclose(model.covariances[xi] - COV_EPS * np.eye(3), cov, atol=1e-10)


def test_fit_recovers_generating_means():
    img, truth = two_clouds(n=2000, seed=3)
    model = fit_weighted(img, np.eye(2)[truth])
    assert np.allclose(model.means[0], [0.2, 0.3, 0.4], atol=0.005)
    assert np.allclose(model.means[1], [0.8, 0.7, 0.6], atol=0.005)


def test_fit_uniform_responsibilities_gives_global_moments():
    img, _ = two_clouds()
    model = fit_weighted(img, np.full((img.torus.num_sites, 2), 0.5))
    colors = img.colors()
    mean = colors.mean(axis=0)
    cov = (colors - mean).T @ (colors - mean) / len(colors) + COV_EPS * np.eye(3)
    for xi in range(2):
        assert np.allclose(model.means[xi], mean, atol=1e-12)
        assert np.allclose(model.covariances[xi], cov, atol=1e-12)


def test_fit_keeps_previous_parameters_for_empty_label():
    img, _ = two_clouds()
    previous = identity_model(3)
    resp = np.zeros((img.torus.num_sites, 3))
    resp[:, 0] = 1.0
    model = fit_weighted(img, resp, previous=previous)
    assert np.array_equal(model.means[1:], previous.means[1:])
    assert np.array_equal(model.covariances[2], previous.covariances[2])


def test_fit_rejects_unnormalized_rows():
    img, _ = two_clouds()
    resp = np.full((img.torus.num_sites, 2), 0.5)
    resp[3, 0] = 0.6
    with pytest.raises(UsageError):
        fit_weighted(img, resp)


def test_init_model_recovers_distinct_colors():
    palette = np.array([[0.1, 0.2, 0.3], [0.9, 0.1, 0.1], [0.2, 0.8, 0.4]])
    pattern = np.array([[0, 1, 2, 0], [1, 1, 2, 0], [2, 0, 1, 2]])
    img = ColorImage.from_array(palette[pattern])
    model = init_model(img, 3, seed=0)
    for color in palette:
        assert np.min(np.abs(model.means - color).max(axis=1)) < 1e-12
    # seeding starts from the lexicographically smallest color
    assert np.allclose(model.means[0], [0.1, 0.2, 0.3])


def test_init_model_constant_image():
    img = ColorImage.from_array(np.full((4, 5, 3), 0.42))
    model = init_model(img, 3, seed=7)
    assert np.allclose(model.means, 0.42)
    for cov in model.covariances:
        assert np.allclose(cov, COV_EPS * np.eye(3), atol=1e-15)


def test_init_model_is_deterministic():
    img, _ = two_clouds()
    a = init_model(img, 4, seed=11)
    b = init_model(img, 4, seed=11)
    assert np.array_equal(a.means, b.means)
    assert np.array_equal(a.covariances, b.covariances)


def test_init_model_subsample_depends_on_seed_only():
    img, _ = two_clouds(n=500)
    a = init_model(img, 2, seed=1, max_samples=300)
    b = init_model(img, 2, seed=1, max_samples=300)
    assert np.array_equal(a.means, b.means)


def test_all_fitted_covariances_factorize():
    img, truth = two_clouds()
    rng = np.random.default_rng(2)
    resp = rng.dirichlet(np.ones(3), size=img.torus.num_sites)
    model = fit_weighted(img, resp)
    for L in model.factors:
        assert np.all(np.diag(L) > 0)
