import itertools
import math

import numpy as np
import pytest
from scipy.stats import chi2

from colormodel import GaussianLabelModel
from errors import UsageError
from grid import LabelField, Torus
from pipeline import colorize
from synth import (
    default_palette,
    isotropic_model,
    potts_chain,
    sample_image,
    sample_potts,
)


def agreement(labels):
    a = np.asarray(labels)
    east = a == np.roll(a, -1, axis=1)
    south = a == np.roll(a, -1, axis=0)
    return float(np.mean(np.concatenate([east.ravel(), south.ravel()])))


def test_alpha_zero_is_uniform():
    q, n = 4, 64 * 64
    labels = sample_potts(Torus(64, 64), 0.0, q, seed=1, sweeps=3)
    counts = np.bincount(labels.labels.ravel(), minlength=q)
    se = math.sqrt((1 / q) * (1 - 1 / q) / n)
    assert np.all(np.abs(counts / n - 1 / q) < 4 * se)


def test_alpha_zero_neighbours_independent():
    labels = sample_potts(Torus(64, 64), 0.0, 2, seed=4, sweeps=2)
    assert agreement(labels.labels) == pytest.approx(0.5, abs=0.05)


def test_strong_coupling_stays_ordered():
    t = Torus(16, 16)
    final = potts_chain(t, 10.0, 2, seed=2, sweeps=500, initial=np.zeros(t.shape))[0]
    assert agreement(final) > 0.95


def test_strong_coupling_orders_from_random_start():
    weak = sample_potts(Torus(32, 32), 0.5, 2, seed=6, sweeps=100)
    strong = sample_potts(Torus(32, 32), 6.0, 2, seed=6, sweeps=100)
    assert agreement(strong.labels) > agreement(weak.labels) + 0.2


@pytest.mark.slow
def test_2x2_state_distribution_matches_boltzmann_weights():
    t, q, alpha = Torus(2, 2), 2, 1.0
    records = potts_chain(t, alpha, q, seed=3, sweeps=5_000_000, record_every=5)
    assert records.shape == (1_000_000, 2, 2)
    flat = records.reshape(len(records), 4)
    codes = flat @ (q ** np.arange(4))
    observed = np.bincount(codes, minlength=q ** 4)

    edges = t.edges()
    weights = np.zeros(q ** 4)
    for states in itertools.product(range(q), repeat=4):
        a = np.array(states)
        code = int(a @ (q ** np.arange(4)))
        weights[code] = math.exp(0.5 * alpha * np.sum(a[edges[:, 0]] == a[edges[:, 1]]))
    expected = len(records) * weights / weights.sum()
    stat = np.sum((observed - expected) ** 2 / expected)
    assert chi2.sf(stat, df=q ** 4 - 1) > 1e-3


def test_chain_records_shape():
    records = potts_chain(Torus(5, 4), 1.0, 3, seed=0, sweeps=12, record_every=4)
    assert records.shape == (3, 4, 5)
    assert records.min() >= 0 and records.max() < 3
    assert potts_chain(Torus(5, 4), 1.0, 3, seed=0, sweeps=12).shape == (1, 4, 5)


def test_chain_last_record_is_final_state():
    t = Torus(6, 6)
    recorded = potts_chain(t, 1.2, 3, seed=8, sweeps=10, record_every=5)
    final = potts_chain(t, 1.2, 3, seed=8, sweeps=10)
    assert np.array_equal(recorded[-1], final[0])


def test_sampling_is_deterministic_per_seed():
    t = Torus(12, 10)
    a = sample_potts(t, 1.5, 3, seed=5, sweeps=7)
    b = sample_potts(t, 1.5, 3, seed=5, sweeps=7)
    c = sample_potts(t, 1.5, 3, seed=6, sweeps=7)
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.labels, c.labels)


def test_potts_rejects_bad_arguments():
    with pytest.raises(UsageError):
        potts_chain(Torus(4, 4), -1.0, 2, seed=0, sweeps=1)
    with pytest.raises(UsageError):
        potts_chain(Torus(4, 4), 1.0, 1, seed=0, sweeps=1)
    with pytest.raises(UsageError):
        potts_chain(Torus(4, 4), 1.0, 2, seed=0, sweeps=0)


@pytest.mark.parametrize('initial', [
    np.full((4, 4), 2),
    np.full((4, 4), -1),
    np.full((4, 4), 0.5),
    np.zeros((3, 4)),
])
def test_potts_rejects_bad_initial_labeling(initial):
    with pytest.raises(UsageError):
        potts_chain(Torus(4, 4), 1.0, 2, seed=0, sweeps=1, initial=initial)


def test_vanishing_noise_reproduces_means():
    eps = 1e-10
    labels = sample_potts(Torus(16, 16), 1.0, 3, seed=0, sweeps=5)
    model = isotropic_model(default_palette(3), math.sqrt(eps))
    img = sample_image(labels, model, seed=1)
    assert np.max(np.abs(img.pixels - colorize(labels, model).pixels)) < 5 * math.sqrt(eps)


def test_sample_mean_of_one_label():
    sigma, n = 0.1, 100 * 100
    labels = LabelField(Torus(100, 100), np.zeros((100, 100), dtype=int), 2)
    model = isotropic_model([[0.3, 0.5, 0.7], [0.9, 0.9, 0.9]], sigma)
    img = sample_image(labels, model, seed=2)
    assert np.all(np.abs(img.colors().mean(axis=0) - model.means[0]) < 4 * sigma / math.sqrt(n))


def test_sample_covariance_of_one_label():
    cov = np.array([[0.010, 0.004, 0.000],
                    [0.004, 0.020, 0.003],
                    [0.000, 0.003, 0.015]])
    model = GaussianLabelModel([[0.3, 0.5, 0.7], [0.9, 0.9, 0.9]], np.stack([cov, 0.01 * np.eye(3)]))
    labels = LabelField(Torus(100, 100), np.zeros((100, 100), dtype=int), 2)
    colors = sample_image(labels, model, seed=7).colors()
    assert np.linalg.norm(np.cov(colors, rowvar=False) - cov) < 0.1 * np.linalg.norm(cov)


def test_sample_image_is_deterministic_per_seed():
    labels = sample_potts(Torus(8, 8), 1.0, 2, seed=0, sweeps=3)
    model = isotropic_model(default_palette(2), 0.05)
    assert np.array_equal(sample_image(labels, model, 4).pixels, sample_image(labels, model, 4).pixels)
    assert not np.array_equal(sample_image(labels, model, 4).pixels, sample_image(labels, model, 5).pixels)


def test_default_palette():
    assert np.allclose(default_palette(2), [[0.2] * 3, [0.8] * 3])
    palette = default_palette(5)
    assert palette.shape == (5, 3)
    assert np.all(np.diff(palette[:, 0]) > 0)


def test_narrow_torus_counts_the_wrapped_neighbour_once():
    t = Torus(2, 2)
    chain = potts_chain(t, 1.0, 2, seed=9, sweeps=20000, record_every=1)
    flat = chain.reshape(len(chain), 4)
    edges = t.edges()
    weights = {}
    for states in itertools.product(range(2), repeat=4):
        a = np.array(states)
        weights[states] = math.exp(0.5 * np.sum(a[edges[:, 0]] == a[edges[:, 1]]))
    # sites 0 and 1 share the single east edge
    expected = sum(w for s, w in weights.items() if s[0] == s[1]) / sum(weights.values())
    assert np.mean(flat[:, 0] == flat[:, 1]) == pytest.approx(expected, abs=0.02)
