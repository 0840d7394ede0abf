import numpy as np
import pytest
import torch

from frictionvae.cvae import HierarchicalCVAESegmenter
from frictionvae.synthetic import SceneSpec, make_arrays


def pytest_configure(config):
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_scenes():
    """32x32 scenes: images, masks, mu, modes, ambiguous regions."""
    return make_arrays(SceneSpec(height=32, width=32, seed=3), range(48))


@pytest.fixture(scope="session")
def small_segmenter(small_scenes):
    X, y = small_scenes[:2]
    return HierarchicalCVAESegmenter(levels=2, res_blocks=1, latent_channels=(2, 2),
                                     base_width=4, max_width=8, max_iter=20,
                                     learning_rate=1e-3, n_samples=4).fit(X, y)


def tiny_cvae_kwargs(**overrides):
    params = dict(in_channels=3, n_classes=2, levels=2, res_blocks=1, latent_channels=(1, 1),
                  base_width=2, max_width=2)
    params.update(overrides)
    return params


def rel_error(a, b):
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def finite_difference_grad(loss_fn, params, h=1e-6):
    """Central differences of a scalar ``loss_fn()`` w.r.t. every entry of ``params``."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return torch.cat([g.view(-1) for g in grads])


def autograd_grad(loss_fn, params):
    for p in params:
        p.grad = None
    loss_fn().backward()
    return torch.cat([p.grad.view(-1) for p in params])


_CRITERIA = {}


def report_criterion(number, passed, detail):
    """Record an acceptance outcome; printed in the terminal summary."""
    _CRITERIA[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
