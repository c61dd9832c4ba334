import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from condvae.distributions import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    DiagGaussian,
    kl_diag_standard,
    log_prob,
    nll_optimal_sigma,
    optimal_sigma_sq,
    sample_reparam,
)


def gauss(mean, std):
    mean = torch.as_tensor(mean, dtype=torch.float64)
    std = torch.as_tensor(std, dtype=torch.float64).expand_as(mean)
    return DiagGaussian(mean, std.log())


@pytest.mark.parametrize(
    "x, mean, std, expected",
    [
        ([0.0], [0.0], 1.0, -0.9189385332046727),
        ([0.0, 0.0], [0.0, 0.0], 1.0, -1.8378770664093453),
        ([1.0], [1.0], 2.0, -0.9189385332046727 - math.log(2)),
    ],
)
def test_log_prob_examples(x, mean, std, expected):
    assert float(log_prob(torch.tensor(x, dtype=torch.float64), gauss(mean, std))) == pytest.approx(expected, abs=1e-7)


def test_log_prob_dimension_mismatch():
    with pytest.raises(ValueError):
        log_prob(torch.zeros(3), DiagGaussian.standard(2))


def test_log_std_clamped_on_construction():
    g = DiagGaussian(torch.zeros(2), torch.tensor([-50.0, 50.0]))
    assert g.log_std[0] == pytest.approx(LOG_STD_MIN)
    assert g.log_std[1] == pytest.approx(LOG_STD_MAX)


def test_log_prob_integrates_to_one():
    mu, sigma = 0.7, 1.3
    grid = torch.linspace(mu - 8 * sigma, mu + 8 * sigma, 20001, dtype=torch.float64)
    dens = log_prob(grid[:, None], gauss([mu], sigma)).exp()
    mass = float(torch.trapezoid(dens, grid))
    assert 0.999 <= mass <= 1.001


@pytest.mark.parametrize(
    "mean, std, noise, expected",
    [([1.5, -2.0], 0.3, [0.0, 0.0], [1.5, -2.0]), ([0.0], 1.0, [0.42], [0.42]), ([2.0], 3.0, [1.0], [5.0])],
)
def test_sample_reparam_examples(mean, std, noise, expected):
    out = sample_reparam(gauss(mean, std), torch.tensor(noise, dtype=torch.float64))
    assert out.tolist() == pytest.approx(expected)


def test_sample_reparam_is_differentiable():
    mean = torch.zeros(2, dtype=torch.float64, requires_grad=True)
    log_std = torch.zeros(2, dtype=torch.float64, requires_grad=True)
    sample_reparam(DiagGaussian(mean, log_std), torch.tensor([1.0, 2.0], dtype=torch.float64)).sum().backward()
    assert mean.grad.tolist() == [1.0, 1.0]
    assert log_std.grad.tolist() == [1.0, 2.0]


@pytest.mark.parametrize(
    "mean, std, expected",
    [([0.0, 0.0, 0.0], 1.0, 0.0), ([1.0], 1.0, 0.5), ([0.0], 2.0, 1.5 - math.log(2))],
)
def test_kl_standard_examples(mean, std, expected):
    assert float(kl_diag_standard(gauss(mean, std))) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=6),
    st.lists(st.floats(-3, 3), min_size=6, max_size=6),
)
def test_kl_standard_nonnegative(means, log_stds):
    q = DiagGaussian(torch.tensor(means, dtype=torch.float64), torch.tensor(log_stds[: len(means)], dtype=torch.float64))
    kl = float(kl_diag_standard(q))
    assert kl >= -1e-12
    if all(m == 0 for m in means) and all(s == 0 for s in log_stds[: len(means)]):
        assert abs(kl) < 1e-12


def test_kl_standard_zero_only_at_standard():
    assert abs(float(kl_diag_standard(DiagGaussian.standard(4, dtype=torch.float64)))) < 1e-12
    assert float(kl_diag_standard(gauss([1e-3], 1.0))) > 0
    assert float(kl_diag_standard(gauss([0.0], 1.001))) > 0


@pytest.mark.parametrize(
    "x, x_hat, expected",
    [([0.3, 0.3], [0.3, 0.3], 1e-6), ([0.0, 0.0], [1.0, 1.0], 1.0), ([1.0, 2.0, 3.0], [1.0, 2.0, 5.0], 4 / 3)],
)
def test_optimal_sigma_sq_examples(x, x_hat, expected):
    val = optimal_sigma_sq(torch.tensor(x, dtype=torch.float64), torch.tensor(x_hat, dtype=torch.float64))
    assert float(val) == pytest.approx(expected, rel=1e-12)


def test_nll_optimal_sigma_examples():
    t = lambda v: torch.tensor(v, dtype=torch.float64)  # noqa: E731
    assert float(nll_optimal_sigma(t([0.0, 0.0]), t([1.0, -1.0]))) == pytest.approx(0.0, abs=1e-12)
    assert float(nll_optimal_sigma(t([0.0, 0.0]), t([math.e, -math.e]))) == pytest.approx(2.0, abs=1e-12)
    assert float(nll_optimal_sigma(t([1.0] * 4), t([1.0] * 4))) == pytest.approx(2 * math.log(1e-6), abs=1e-9)
    assert 2 * math.log(1e-6) == pytest.approx(-27.631, abs=1e-3)


def test_optimal_sigma_maximizes_likelihood_grid():
    rng = np.random.default_rng(0)
    x = torch.from_numpy(rng.uniform(size=16))
    x_hat = torch.from_numpy(rng.uniform(size=16))
    sigmas = np.logspace(-3, 1, 1000)
    ll = [float(log_prob(x, DiagGaussian(x_hat, torch.full_like(x_hat, math.log(s))))) for s in sigmas]
    best = int(np.argmax(ll))
    target = math.sqrt(float(optimal_sigma_sq(x, x_hat)))
    assert sigmas[max(best - 1, 0)] <= target <= sigmas[min(best + 1, len(sigmas) - 1)]


def test_log_prob_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    x = torch.from_numpy(rng.normal(size=5))
    mean0 = rng.normal(size=5)
    log_std0 = rng.normal(scale=0.5, size=5)
    mean = torch.tensor(mean0, requires_grad=True)
    log_std = torch.tensor(log_std0, requires_grad=True)
    log_prob(x, DiagGaussian(mean, log_std)).backward()

    def f(m, s):
        return float(log_prob(x, DiagGaussian(torch.from_numpy(m), torch.from_numpy(s))))

    h = 1e-5
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        fd_mean = (f(mean0 + e, log_std0) - f(mean0 - e, log_std0)) / (2 * h)
        fd_std = (f(mean0, log_std0 + e) - f(mean0, log_std0 - e)) / (2 * h)
        assert abs(fd_mean - mean.grad[i].item()) <= 1e-6 * max(1.0, abs(fd_mean))
        assert abs(fd_std - log_std.grad[i].item()) <= 1e-6 * max(1.0, abs(fd_std))
