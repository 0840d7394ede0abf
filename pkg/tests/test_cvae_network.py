import math

import pytest
import torch
import torch.nn.functional as F

from frictionvae.cvae import HierarchicalProbUNet, kl_diag_gaussian
from frictionvae.cvae.distributions import LOGVAR_MIN
from frictionvae.exceptions import ConfigurationError, LabelError

from conftest import tiny_cvae_kwargs


@pytest.fixture
def net():
    torch.manual_seed(0)
    return HierarchicalProbUNet(n_classes=6, levels=3, res_blocks=1, latent_channels=(2, 3, 4),
                                base_width=4, max_width=16).double()


@pytest.fixture
def batch():
    g = torch.Generator().manual_seed(1)
    x = torch.rand(3, 3, 32, 32, generator=g, dtype=torch.float64)
    y = torch.randint(0, 6, (3, 32, 32), generator=g)
    return x, y


def randomize_heads(net, scale=0.3):
    g = torch.Generator().manual_seed(5)
    with torch.no_grad():
        for core in (net.prior, net.posterior):
            for head in core.heads:
                head.weight.copy_(scale * torch.randn(head.weight.shape, generator=g))
                head.bias.copy_(scale * torch.randn(head.bias.shape, generator=g))


def test_latent_shapes_follow_the_decoder_resolutions(net, batch):
    x, y = batch
    assert net.latent_shapes(32, 32) == [(2, 4, 4), (3, 8, 8), (4, 16, 16)]
    for params in (net.encode_prior(x), net.encode_posterior(x, y)):
        assert [tuple(p.mean.shape) for p in params] == [(3, 2, 4, 4), (3, 3, 8, 8), (3, 4, 16, 16)]


def test_untrained_prior_and_posterior_are_standard_normal(net, batch):
    x, y = batch
    for p in net.encode_prior(x) + net.encode_posterior(x, y):
        assert torch.all(p.mean == 0) and torch.all(p.log_variance == 0)
    _, diag = net.elbo_loss(x, y)
    assert all(k.item() == 0 for k in diag["kl"])


def test_posterior_depends_on_mask(net, batch):
    randomize_heads(net)
    x, y = batch
    a = net.encode_posterior(x, y)[0].mean
    b = net.encode_posterior(x, (y + 1) % 6)[0].mean
    assert not torch.allclose(a, b)


def test_one_hot_and_integer_masks_agree(net, batch):
    randomize_heads(net)
    x, y = batch
    onehot = F.one_hot(y, 6).permute(0, 3, 1, 2)
    for a, b in zip(net.encode_posterior(x, y), net.encode_posterior(x, onehot)):
        torch.testing.assert_close(a.mean, b.mean)
        torch.testing.assert_close(a.log_variance, b.log_variance)


def test_ignored_pixels_encode_as_zero_vectors(net):
    y = torch.tensor([[[0, 255], [5, 2]]])
    onehot = net.one_hot(y)
    assert onehot[0, :, 0, 1].sum() == 0
    assert onehot.sum() == 3


def test_partial_latents_condition_finer_scales(net, batch):
    randomize_heads(net)
    x, _ = batch
    base = net.encode_prior(x)
    z1 = torch.full_like(base[0].mean, 3.0)
    shifted = net.encode_prior(x, [z1])
    torch.testing.assert_close(shifted[0].mean, base[0].mean)
    assert not torch.allclose(shifted[1].mean, base[1].mean)


def test_decode_is_a_distribution_and_needs_every_scale(net, batch):
    x, _ = batch
    noise = net.draw_noise(3, 32, 32, torch.Generator().manual_seed(0), torch.float64)
    probs = net.decode(x, noise)
    assert probs.shape == (3, 6, 32, 32)
    torch.testing.assert_close(probs.sum(1), torch.ones(3, 32, 32, dtype=torch.float64))
    with pytest.raises(ValueError):
        net.decode(x, noise[:2])


def test_zero_logits_give_uniform_distribution(net, batch):
    x, _ = batch
    with torch.no_grad():
        net.logits.weight.zero_()
        net.logits.bias.zero_()
    mean, unc = net.predict(x, n_samples=4, generator=torch.Generator().manual_seed(0))
    torch.testing.assert_close(mean, torch.full_like(mean, 1 / 6))
    assert torch.all(unc == 0)


def test_beta_zero_loss_is_cross_entropy(net, batch):
    randomize_heads(net)
    x, y = batch
    y = y.clone()
    y[:, :4] = 255
    noise = net.draw_noise(3, 32, 32, torch.Generator().manual_seed(2), torch.float64)
    loss, diag = net.elbo_loss(x, y, beta=0.0, noise=noise)
    posterior = net.posterior(net._posterior_input(x, y, 255), noise=noise)[0]
    logits, _ = net.decode_logits(x, [s.z for s in posterior])
    log_p = torch.log_softmax(logits, 1)
    valid = y != 255
    manual = -log_p.gather(1, torch.where(valid, y, 0).unsqueeze(1)).squeeze(1)[valid].mean()
    torch.testing.assert_close(loss, manual)
    assert sum(k.item() for k in diag["kl"]) > 0


def test_kl_term_is_normalised_per_pixel(net, batch):
    randomize_heads(net)
    x, y = batch
    noise = net.draw_noise(3, 32, 32, torch.Generator().manual_seed(2), torch.float64)
    _, diag = net.elbo_loss(x, y, noise=noise)
    q = net.posterior(net._posterior_input(x, y, 255), noise=noise)[0]
    _, p = net.decode_logits(x, [s.z for s in q])
    total = sum(kl_diag_gaussian(a.params, b.params).sum() for a, b in zip(q, p))
    torch.testing.assert_close(sum(diag["kl"]), total / (3 * 32 * 32))


def test_single_sample_prediction_has_zero_uncertainty(net, batch):
    randomize_heads(net)
    x, _ = batch
    mean, unc = net.predict(x, n_samples=1, generator=torch.Generator().manual_seed(0))
    assert torch.all(unc == 0)
    torch.testing.assert_close(mean.sum(1), torch.ones_like(mean[:, 0]))


def test_variance_floor(net, batch):
    x, _ = batch
    with torch.no_grad():
        for head in net.prior.heads:
            head.bias[head.bias.shape[0] // 2:] = -1e3
    for p in net.encode_prior(x):
        assert torch.all(p.std >= math.exp(LOGVAR_MIN / 2) - 1e-12)


def test_batch_permutation_equivariance(net, batch):
    randomize_heads(net)
    x, y = batch
    perm = torch.tensor([2, 0, 1])
    noise = net.draw_noise(3, 32, 32, torch.Generator().manual_seed(4), torch.float64)
    a = net.decode(x, noise)
    b = net.decode(x[perm], [n[perm] for n in noise])
    torch.testing.assert_close(a[perm], b)


def test_noise_replay_is_deterministic(net, batch):
    randomize_heads(net)
    x, _ = batch
    noise = [net.draw_noise(3, 32, 32, torch.Generator().manual_seed(i), torch.float64)
             for i in range(3)]
    torch.testing.assert_close(net.predict(x, noise=noise)[0], net.predict(x, noise=noise)[0])


def test_rejects_bad_inputs(net, batch):
    x, y = batch
    with pytest.raises(ConfigurationError):
        net.encode_prior(x[:, :, :30, :30])
    with pytest.raises(ConfigurationError):
        net.encode_prior(x[:, :2])
    with pytest.raises(LabelError):
        net.encode_posterior(x, torch.full_like(y, 6))


def test_more_latent_scales_than_levels_is_rejected():
    with pytest.raises(ValueError):
        HierarchicalProbUNet(**tiny_cvae_kwargs(latent_channels=(1, 1, 1)))


def test_tiny_config_is_under_a_thousand_parameters():
    net = HierarchicalProbUNet(**tiny_cvae_kwargs())
    assert sum(p.numel() for p in net.parameters()) <= 1000
