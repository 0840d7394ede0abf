import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from frictionvae.checkpoint import parameter_checksum
from frictionvae.exceptions import ConfigurationError
from frictionvae.friction import (FrictionHead, LatentFrictionRegressor, extract_latent_feature,
                                  surface_onehot)


def test_surface_onehot_picks_majority():
    mask = np.array([[0, 0, 1], [1, 1, 4], [4, 4, 4]])
    np.testing.assert_array_equal(surface_onehot(mask, [0, 1, 2]), [0, 1, 0])
    np.testing.assert_array_equal(surface_onehot(mask, range(6)), [0, 0, 0, 0, 1, 0])
    np.testing.assert_array_equal(surface_onehot(mask, [2, 3]), [0, 0])


def test_surface_onehot_ties_go_to_first_listed():
    mask = np.array([[2, 2, 0, 0]])
    np.testing.assert_array_equal(surface_onehot(mask, [0, 2]), [1, 0])
    np.testing.assert_array_equal(surface_onehot(mask, [2, 0]), [1, 0])


def test_surface_onehot_needs_ids():
    with pytest.raises(ValueError):
        surface_onehot(np.zeros((2, 2), int), [])


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, (5, 5), elements=st.integers(0, 5)))
def test_surface_onehot_is_one_hot_of_a_present_class(mask):
    v = surface_onehot(mask, range(6))
    assert v.sum() == 1 and np.count_nonzero(mask == np.argmax(v)) == np.bincount(mask.ravel()).max()


def test_head_output_range_and_shape_checks():
    torch.manual_seed(0)
    head = FrictionHead(6, 3, hidden_width=8)
    out = head(100 * torch.randn(50, 6), torch.eye(3)[torch.randint(0, 3, (50,))])
    assert out.shape == (50,) and torch.all((out >= 0) & (out <= 1))
    with pytest.raises(ValueError):
        head(torch.zeros(2, 5), torch.zeros(2, 3))


def test_surface_one_hot_changes_prediction():
    torch.manual_seed(0)
    head = FrictionHead(4, 3, hidden_width=8)
    z = torch.zeros(3, 4)
    out = head(z, torch.eye(3))
    assert len(set(out.tolist())) == 3


def test_extract_latent_feature_matches_backbone(small_segmenter, small_scenes):
    X = small_scenes[0][:4]
    feats = extract_latent_feature(X, small_segmenter, seed=2, n_samples=3)
    np.testing.assert_allclose(
        feats, small_segmenter.latent_features(X, 3, random_state=2).mean(0))
    with pytest.raises(ConfigurationError):
        extract_latent_feature(X, object())


def test_fit_predict_keeps_backbone_frozen(small_segmenter, small_scenes):
    X, _, mu = small_scenes[:3]
    before = parameter_checksum(small_segmenter.module_)
    model = LatentFrictionRegressor(small_segmenter, max_epochs=3).fit(X[:32], mu[:32], X[32:], mu[32:])
    assert parameter_checksum(small_segmenter.module_) == before == model.backbone_checksum_
    pred = model.predict(X[32:])
    assert pred.shape == (16,) and np.all((pred >= 0) & (pred <= 1))
    assert [r["epoch"] for r in model.history_] == [0, 1, 2, 3]
    assert {"train_rmse", "val_rmse"} <= set(model.history_[-1])


def test_multi_draw_estimate_reports_spread(small_segmenter, small_scenes):
    X, _, mu = small_scenes[:3]
    model = LatentFrictionRegressor(small_segmenter, max_epochs=1, n_latent_samples=3).fit(X[:16], mu[:16])
    est = model.predict_estimate(X[:4])
    assert est.spread.shape == (4,) and np.all(est.spread >= 0)
    assert LatentFrictionRegressor(small_segmenter, max_epochs=1).fit(X[:8], mu[:8]) \
        .predict_estimate(X[:2]).spread is None


def test_surface_class_subset_and_latent_scales(small_segmenter, small_scenes):
    X, _, mu = small_scenes[:3]
    model = LatentFrictionRegressor(small_segmenter, surface_classes=(0, 1, 2), latent_scales=(1,),
                                    max_epochs=1).fit(X[:8], mu[:8])
    assert (model.n_latent_, model.n_surface_) == (2, 3)


def test_regress_from_precomputed_features(small_segmenter, small_scenes):
    X, _, mu = small_scenes[:3]
    model = LatentFrictionRegressor(small_segmenter, max_epochs=1).fit(X[:8], mu[:8])
    z, s = model.features(X[:4])
    np.testing.assert_allclose(model.regress(z[0], s), model.predict(X[:4]))


def test_save_load_round_trip(tmp_path, small_segmenter, small_scenes):
    X, _, mu = small_scenes[:3]
    model = LatentFrictionRegressor(small_segmenter, max_epochs=2).fit(X[:16], mu[:16])
    model.save(tmp_path / "f.ckpt")
    loaded = LatentFrictionRegressor.load(tmp_path / "f.ckpt")
    np.testing.assert_array_equal(loaded.predict(X[:5]), model.predict(X[:5]))


def test_backbone_change_during_fit_is_detected(small_segmenter, small_scenes, monkeypatch):
    import copy
    X, _, mu = small_scenes[:3]
    backbone = copy.deepcopy(small_segmenter)
    model = LatentFrictionRegressor(backbone, max_epochs=1)
    real = model.features

    def tamper(X):
        with torch.no_grad():
            next(backbone.module_.parameters()).add_(1.0)
        return real(X)
    monkeypatch.setattr(model, "features", tamper)
    with pytest.raises(RuntimeError):
        model.fit(X[:8], mu[:8])


def test_requires_fitted_backbone(small_scenes):
    from sklearn.exceptions import NotFittedError
    from frictionvae.cvae import HierarchicalCVAESegmenter
    X, _, mu = small_scenes[:3]
    with pytest.raises(ConfigurationError):
        LatentFrictionRegressor().fit(X[:4], mu[:4])
    with pytest.raises(NotFittedError):
        LatentFrictionRegressor(HierarchicalCVAESegmenter()).fit(X[:4], mu[:4])


@pytest.mark.parametrize("y", [[0.5, 1.2], [np.nan, 0.1], []])
def test_rejects_bad_targets(small_segmenter, small_scenes, y):
    with pytest.raises(ValueError):
        LatentFrictionRegressor(small_segmenter).fit(small_scenes[0][:len(y)], y)
