import itertools

import numpy as np
import pytest
from scipy import integrate, stats

from cpdecide.dgp import (
    GaussianMixtureDGP,
    LabeledSample,
    PrivateSignalDGP,
    Samples,
    TabularDGP,
    make_private_worstcase,
)
from cpdecide.exceptions import CPDecideError, DomainMismatchError, ZeroMarginalError
from cpdecide.probcore import RngStream


def test_point_mass_draws():
    # a point mass on (0, 0) leaves label 1 with zero marginal, which the type forbids
    with pytest.raises(CPDecideError):
        TabularDGP([[1, 0], [0, 0]])
    # the draw behaviour itself: x=0 always carries y=0 when the table forces it
    dgp = TabularDGP([[1.0 - 1e-300, 0.0], [0.0, 1e-300]])
    s = dgp.draw(1000, RngStream(1))
    assert np.all(s.x == 0) and np.all(s.y == 0)


def test_uniform_cells_frequencies():
    dgp = TabularDGP(np.full((2, 2), 0.25))
    s = dgp.draw(10**5, RngStream(77))
    freq = np.bincount(s.x * 2 + s.y, minlength=4) / len(s)
    assert np.all(np.abs(freq - 0.25) <= 0.01)


def test_tabular_frequencies_within_four_se():
    table = np.array([[0.1, 0.05, 0.15], [0.2, 0.3, 0.2]])
    s = TabularDGP(table).draw(10**5, RngStream(3))
    freq = np.bincount(s.x * 3 + s.y, minlength=6).reshape(2, 3) / len(s)
    se = np.sqrt(table * (1 - table) / len(s))
    assert np.all(np.abs(freq - table) <= 4 * se)


def test_draw_is_deterministic():
    dgp = GaussianMixtureDGP([0.5, 0.5], [[0.0], [2.0]], 1.0)
    a, b = dgp.draw(100, RngStream(4, 2)), dgp.draw(100, RngStream(4, 2))
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.y, b.y)


def test_samples_behave_as_sequence():
    s = Samples([0, 1, 1], [1, 0, 1], w=[0, 0, 1])
    assert len(s) == 3
    assert s[1] == LabeledSample(x=1, y=0, w=0)
    assert [r.y for r in s] == [1, 0, 1]
    again = Samples.from_records(list(s))
    np.testing.assert_array_equal(again.w, s.w)


def test_tabular_posterior():
    dgp = TabularDGP([[0.3, 0.1], [0.2, 0.4]])
    np.testing.assert_allclose(dgp.true_posterior(0).probs, [0.75, 0.25])
    with pytest.raises(ZeroMarginalError):
        TabularDGP([[0, 0], [0.5, 0.5]]).true_posterior(0)
    with pytest.raises(DomainMismatchError):
        dgp.true_posterior(2)


def test_gaussian_symmetric_point():
    dgp = GaussianMixtureDGP([0.5, 0.5], [[-1.0, 2.0], [1.0, 2.0]], 0.7)
    np.testing.assert_allclose(dgp.true_posterior([0.0, -3.0]).probs, [0.5, 0.5], atol=1e-12)


def _quadrature_posterior(prior, means, sigma, x, h=1e-3):
    """p(y | x) as the limit of p(y | X in [x-h, x+h]) with each window mass integrated numerically."""
    mass = []
    for p, m in zip(prior, means):
        val, _ = integrate.quad(lambda t: stats.norm.pdf(t, m, sigma), x - h, x + h, epsabs=1e-14)
        mass.append(p * val)
    mass = np.array(mass)
    return mass / mass.sum()


@pytest.mark.parametrize("x", [-2.3, -0.4, 0.0, 0.9, 3.1])
def test_gaussian_posterior_matches_quadrature(x):
    prior, means, sigma = [0.2, 0.5, 0.3], [-1.0, 0.5, 2.0], 0.8
    dgp = GaussianMixtureDGP(prior, [[m] for m in means], sigma)
    expected = _quadrature_posterior(prior, means, sigma, x)
    np.testing.assert_allclose(dgp.true_posterior([x]).probs, expected, atol=1e-6)


def test_gaussian_translation_invariance():
    rng = np.random.default_rng(0)
    means = rng.normal(size=(3, 2))
    shift = np.array([4.0, -2.5])
    a = GaussianMixtureDGP([0.3, 0.3, 0.4], means, 1.3)
    b = GaussianMixtureDGP([0.3, 0.3, 0.4], means + shift, 1.3)
    X = rng.normal(size=(50, 2))
    np.testing.assert_allclose(a.posterior_matrix(X), b.posterior_matrix(X + shift), atol=1e-10)


def test_gaussian_validation():
    with pytest.raises(CPDecideError):
        GaussianMixtureDGP([1.0], [[0.0]], 1.0)
    with pytest.raises(CPDecideError):
        GaussianMixtureDGP([0.5, 0.5], [[0.0], [1.0]], 0.0)
    with pytest.raises(DomainMismatchError):
        GaussianMixtureDGP([0.5, 0.5], [[0.0], [1.0]], 1.0).true_posterior([1.0, 2.0])


def test_worstcase_construction():
    d2 = make_private_worstcase(2)
    expected = np.zeros((1, 2, 2))
    expected[0, 0, 0] = expected[0, 1, 1] = 0.5
    np.testing.assert_array_equal(d2.joint3, expected)
    d3 = make_private_worstcase(3)
    np.testing.assert_allclose(np.diagonal(d3.joint3[0]), [1 / 3] * 3)
    np.testing.assert_allclose(d3.true_posterior(0).probs, [1 / 3] * 3)
    for w in range(3):
        np.testing.assert_array_equal(d3.true_posterior_full(0, w).probs, np.eye(3)[w])


def test_private_conditionally_independent_signal():
    p_x = np.array([0.4, 0.6])
    p_y_given_x = np.array([[0.7, 0.3], [0.2, 0.8]])
    p_w_given_x = np.array([[0.5, 0.5], [0.9, 0.1]])
    joint3 = p_x[:, None, None] * p_w_given_x[:, :, None] * p_y_given_x[:, None, :]
    dgp = PrivateSignalDGP(joint3)
    for x, w in itertools.product(range(2), range(2)):
        np.testing.assert_allclose(dgp.true_posterior_full(x, w).probs, dgp.true_posterior(x).probs)


def test_private_posterior_by_enumeration():
    raw = np.array([[[1, 2], [3, 4]], [[5, 6], [7, 8]]], dtype=float)
    joint3 = raw / raw.sum()
    dgp = PrivateSignalDGP(joint3)
    for x, w in itertools.product(range(2), range(2)):
        a, b = raw[x, w]
        np.testing.assert_allclose(dgp.true_posterior_full(x, w).probs, [a / (a + b), b / (a + b)], atol=1e-12)
    # marginalizing w reproduces the public posterior exactly
    marg = dgp.marginal()
    for x in range(2):
        col = raw[x].sum(axis=0)
        np.testing.assert_allclose(marg.true_posterior(x).probs, col / col.sum(), atol=1e-12)


def test_private_draw_columns():
    dgp = make_private_worstcase(2)
    s = dgp.draw(500, RngStream(8))
    assert np.all(s.x == 0)
    np.testing.assert_array_equal(s.w, s.y)
