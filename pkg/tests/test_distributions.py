import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from frictionvae.cvae import GaussianParams, kl_diag_gaussian, sample_latent
from frictionvae.cvae.distributions import LOGVAR_MAX, LOGVAR_MIN


def gaussian(mean, log_variance):
    return GaussianParams(torch.as_tensor(mean, dtype=torch.float64),
                          torch.as_tensor(log_variance, dtype=torch.float64))


def test_kl_standard_normals_known_values():
    p = gaussian([[0.0]], [[0.0]])
    q = gaussian([[1.0]], [[0.0]])
    assert kl_diag_gaussian(q, p).item() == pytest.approx(0.5, abs=1e-12)
    assert kl_diag_gaussian(p, p).item() == 0.0
    # KL(N(0, 4) || N(0, 1)) = (4 - 1 - log 4) / 2
    wide = gaussian([[0.0]], [[math.log(4.0)]])
    assert kl_diag_gaussian(wide, p).item() == pytest.approx((3 - math.log(4)) / 2, rel=1e-12)


def test_kl_matches_scipy_entropy_route():
    rng = np.random.default_rng(0)
    mq, mp = rng.normal(size=5), rng.normal(size=5)
    vq, vp = rng.uniform(0.2, 3, 5), rng.uniform(0.2, 3, 5)
    expected = 0.5 * (np.log(vp / vq) + (vq + (mq - mp) ** 2) / vp - 1)
    got = kl_diag_gaussian(gaussian(mq, np.log(vq)), gaussian(mp, np.log(vp))).numpy()
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_kl_nonnegative_for_nearly_equal_distributions():
    p = gaussian(torch.zeros(1000), torch.full((1000,), 3.0))
    q = gaussian(torch.full((1000,), 1e-9), torch.full((1000,), 3.0 + 1e-9))
    assert torch.all(kl_diag_gaussian(q, p) >= 0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-50, 50), st.floats(LOGVAR_MIN, LOGVAR_MAX),
                          st.floats(-50, 50), st.floats(LOGVAR_MIN, LOGVAR_MAX)),
                min_size=1, max_size=8))
def test_kl_is_nonnegative(rows):
    mq, lq, mp, lp = map(list, zip(*rows))
    assert torch.all(kl_diag_gaussian(gaussian(mq, lq), gaussian(mp, lp)) >= 0)


def test_sample_latent_moments():
    params = gaussian(torch.full((100_000,), 1.5), torch.full((100_000,), math.log(0.25)))
    z = sample_latent(params, generator=torch.Generator().manual_seed(1))
    # standard errors: 0.5 / sqrt(n) for the mean, ~0.25 * sqrt(2 / n) for the variance
    assert abs(z.mean().item() - 1.5) < 3 * 0.5 / math.sqrt(1e5)
    assert abs(z.var().item() - 0.25) < 3 * 0.25 * math.sqrt(2 / 1e5)


def test_sample_latent_uses_given_noise_and_carries_gradients():
    mean = torch.tensor([[1.0, -2.0]], requires_grad=True)
    logvar = torch.tensor([[0.0, math.log(9.0)]], requires_grad=True)
    z = sample_latent(GaussianParams(mean, logvar), noise=torch.tensor([[0.5, 1.0]]))
    torch.testing.assert_close(z, torch.tensor([[1.5, 1.0]]))
    z.sum().backward()
    torch.testing.assert_close(mean.grad, torch.ones(1, 2))
    torch.testing.assert_close(logvar.grad, torch.tensor([[0.25, 1.5]]))


def test_noise_shape_mismatch_raises():
    with pytest.raises(ValueError):
        sample_latent(gaussian([[0.0]], [[0.0]]), noise=torch.zeros(2, 2))


def test_params_shape_mismatch_raises():
    with pytest.raises(ValueError):
        GaussianParams(torch.zeros(2), torch.zeros(3))


def test_head_output_is_split_and_clamped():
    out = torch.tensor([[[[1.0]], [[2.0]], [[-50.0]], [[50.0]]]])
    params = GaussianParams.from_head(out)
    assert params.mean.flatten().tolist() == [1.0, 2.0]
    assert params.log_variance.flatten().tolist() == [LOGVAR_MIN, LOGVAR_MAX]
