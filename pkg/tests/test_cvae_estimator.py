import numpy as np
import pytest
import torch
from sklearn.base import clone

from frictionvae.cvae import HierarchicalCVAESegmenter
from frictionvae.exceptions import ConfigurationError, LabelError, TrainingError


def make(**kw):
    params = dict(levels=2, res_blocks=1, latent_channels=(2, 2), base_width=4, max_width=8,
                  max_iter=3, learning_rate=1e-3, n_samples=3)
    params.update(kw)
    return HierarchicalCVAESegmenter(**params)


def test_fit_records_history(small_scenes):
    X, y = small_scenes[:2]
    model = make().fit(X[:8], y[:8])
    assert model.n_iter_ == 3
    assert [r["iteration"] for r in model.history_] == [1, 2, 3]
    assert set(model.history_[0]) == {"iteration", "total_loss", "recon", "kl_scale_1", "kl_scale_2"}
    row = model.history_[0]
    assert row["total_loss"] == pytest.approx(row["recon"] + row["kl_scale_1"] + row["kl_scale_2"], rel=1e-5)


def test_zero_iterations_builds_untrained_model(small_scenes):
    X, y = small_scenes[:2]
    model = make(max_iter=0).fit(X[:4], y[:4])
    assert model.history_ == [] and model.n_iter_ == 0
    assert model.predict(X[:2]).shape == (2, 32, 32)


def test_output_shapes(small_segmenter, small_scenes):
    X = small_scenes[0][:5]
    probs, unc = small_segmenter.predict_proba(X, return_uncertainty=True)
    assert probs.shape == (5, 32, 32, 6) and unc.shape == (5, 32, 32)
    np.testing.assert_allclose(probs.sum(-1), 1, atol=1e-5)
    assert np.all(unc >= 0)
    assert small_segmenter.predict(X).shape == (5, 32, 32)
    assert small_segmenter.sample_masks(X, n_samples=7).shape == (7, 5, 32, 32)
    assert small_segmenter.latent_features(X, n_samples=2).shape == (2, 5, 4)
    assert small_segmenter.latent_features(X, scales=[1]).shape == (1, 5, 2)
    assert small_segmenter.transform(X).shape == (5, small_segmenter.n_features_out_)
    assert small_segmenter.predict(X[0]).shape == (1, 32, 32)


def test_fixed_seed_is_reproducible(small_scenes):
    X, y = small_scenes[:2]
    a, b = make().fit(X[:8], y[:8]), make().fit(X[:8], y[:8])
    assert a.history_ == b.history_
    np.testing.assert_array_equal(a.predict_proba(X[:3]), b.predict_proba(X[:3]))


def test_prediction_depends_on_seed_only_through_noise(small_segmenter, small_scenes):
    X = small_scenes[0][:3]
    np.testing.assert_array_equal(small_segmenter.predict_proba(X, random_state=4),
                                  small_segmenter.predict_proba(X, random_state=4))


def test_noise_replay_matches_module(small_segmenter, small_scenes):
    X = small_scenes[0][:4]
    module = small_segmenter.module_
    noise = [module.draw_noise(4, 32, 32, torch.Generator().manual_seed(i)) for i in range(2)]
    got = small_segmenter.predict_proba(X, noise=noise, chunk_size=3)
    with torch.no_grad():
        want, _ = module.predict(torch.as_tensor(X).permute(0, 3, 1, 2), noise=noise)
    np.testing.assert_allclose(got, want.permute(0, 2, 3, 1).numpy(), atol=1e-6)


def test_one_hot_masks_are_accepted(small_scenes):
    X, y = small_scenes[:2]
    onehot = np.eye(6)[y[:8]]
    a, b = make().fit(X[:8], y[:8]), make().fit(X[:8], onehot)
    assert a.history_ == b.history_


def test_score_is_mean_iou(small_segmenter, small_scenes):
    X, y = small_scenes[:2]
    assert 0 <= small_segmenter.score(X[:6], y[:6]) <= 1


def test_save_load_round_trip(tmp_path, small_segmenter, small_scenes):
    X = small_scenes[0][:3]
    path = tmp_path / "m.ckpt"
    small_segmenter.save(path)
    loaded = HierarchicalCVAESegmenter.load(path)
    assert loaded.get_params() == small_segmenter.get_params()
    np.testing.assert_array_equal(loaded.predict_proba(X), small_segmenter.predict_proba(X))
    small_segmenter.save(tmp_path / "again.ckpt")
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_clone_and_params():
    model = make(beta=0.5)
    assert clone(model).get_params() == model.get_params()


@pytest.mark.parametrize("bad", [
    lambda X, y: (X * 2, y),
    lambda X, y: (X[..., :1], y),
    lambda X, y: (X[:, :30, :30], y[:, :30, :30]),
])
def test_rejects_invalid_images(small_scenes, bad):
    X, y = small_scenes[:2]
    with pytest.raises((ValueError, ConfigurationError)):
        model = make().fit(*bad(X[:4], y[:4]))
        model.predict(X[:1])


def test_rejects_bad_labels(small_scenes):
    X, y = small_scenes[:2]
    with pytest.raises(LabelError):
        make().fit(X[:4], np.full_like(y[:4], 9))


def test_unfitted_model_raises(small_scenes):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        make().predict(small_scenes[0][:1])


def test_unknown_latent_scale_raises(small_segmenter, small_scenes):
    with pytest.raises(ConfigurationError):
        small_segmenter.latent_features(small_scenes[0][:1], scales=[5])


def test_diverging_training_raises_with_diagnostics(small_scenes, monkeypatch):
    X, y = small_scenes[:2]
    from frictionvae.cvae import network
    real = network.F.cross_entropy
    monkeypatch.setattr(network.F, "cross_entropy", lambda *a, **k: real(*a, **k) * float("nan"))
    with pytest.raises(TrainingError) as info:
        make().fit(X[:4], y[:4])
    assert "kl" in info.value.diagnostics


def test_augmented_training_runs(small_scenes):
    X, y = small_scenes[:2]
    model = make(augment=True, max_iter=2).fit(X[:2], y[:2])
    assert model.predict(X[:1]).shape == (1, 32, 32)
