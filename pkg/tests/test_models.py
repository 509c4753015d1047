import numpy as np
import pytest

from accentkit import models
from accentkit.dsp import Spectrogram
from accentkit.errors import DimensionMismatch, EmptyDataset, InvalidConfig, ShapeMismatch

SMALL = dict(input_shape=(1, 16, 16), conv_filters=(4, 8), dense_width=16, batch_size=4)


def small_cfg(**kw):
    return models.CnnConfig(**{**SMALL, **kw}).validate()


def toy_grids(rng, n=12, classes=3, shape=(16, 16)):
    # class k lights up row band k; trivially learnable
    y = np.arange(n) % classes
    x = np.full((n,) + shape, -70.0) + rng.normal(0, 2, (n,) + shape)
    for i, k in enumerate(y):
        x[i, 4 * k:4 * k + 4] = -10.0
    return x, y


def test_config_defaults_and_validation():
    c = models.CnnConfig()
    assert c.conv_filters == (32, 64) and c.input_shape == (1, 128, 128)
    assert models.CnnConfig(variant="cnn4").conv_filters == (32, 32, 64, 64)
    for bad in (dict(variant="cnn3"), dict(num_classes=1), dict(conv_filters=(8,)),
                dict(input_shape=(1, 18, 16)), dict(momentum=1.0), dict(lr=0)):
        with pytest.raises(InvalidConfig):
            models.CnnConfig(**bad).validate()
    with pytest.raises(InvalidConfig, match="dropout"):
        models.CnnConfig.from_dict({"dropout": 0.5})
    assert models.CnnConfig.from_dict(c.to_dict()) == c


def test_svm_config_roundtrip():
    s = models.SvmConfig(lam=0.01, epochs=3)
    d = s.to_dict()
    assert d["lambda"] == 0.01 and d["feature_dim"] == 1024
    assert models.SvmConfig.from_dict(d) == s
    with pytest.raises(InvalidConfig):
        models.SvmConfig(lam=0).validate()
    with pytest.raises(InvalidConfig):
        models.SvmConfig(epochs=0).validate()


def test_cnn2_shape_and_param_count():
    m = models.build_cnn(models.CnnConfig())
    assert m.param_count() == 8_408_197
    assert models.cnn_param_count_formula(m.config) == 8_408_197
    # closed form written out term by term
    assert 32 * (1 * 9 + 1) + 64 * (32 * 9 + 1) + 128 * (64 * 32 * 32 + 1) + 5 * (128 + 1) == 8_408_197
    assert m.logits(np.full((1, 128, 128), -40.0)).shape == (1, 5)


def test_cnn4_param_count_matches_formula():
    cfg = models.CnnConfig(variant="cnn4", input_shape=(1, 32, 32))
    assert models.build_cnn(cfg).param_count() == models.cnn_param_count_formula(cfg)


def test_same_seed_same_weights():
    a = models.build_cnn(small_cfg()).state_arrays()
    b = models.build_cnn(small_cfg()).state_arrays()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = models.build_cnn(small_cfg(seed=7)).state_arrays()
    assert not all(np.array_equal(a[k], c[k]) for k in a)


def test_zero_epochs_leaves_model_unchanged(rng):
    m = models.build_cnn(small_cfg(epochs=0))
    before = {k: v.copy() for k, v in m.state_arrays().items()}
    x, y = toy_grids(rng)
    m, hist = models.train(m, x, y)
    assert len(hist) == 0
    assert all(np.array_equal(before[k], v) for k, v in m.state_arrays().items())


def test_training_is_deterministic(rng):
    x, y = toy_grids(rng)
    runs = []
    for _ in range(2):
        m, h = models.train(models.build_cnn(small_cfg(epochs=3, num_classes=3)), x, y, x, y)
        runs.append((m.state_arrays(), h.to_dict()))
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(runs[0][0][k], runs[1][0][k]) for k in runs[0][0])


def test_training_learns_toy_task(rng):
    x, y = toy_grids(rng, n=24)
    m, h = models.train(models.build_cnn(small_cfg(epochs=15, num_classes=3)), x, y, x, y)
    assert h.records[-1].val_accuracy == 1.0
    assert all(0 <= r.train_accuracy <= 1 for r in h.records)


def test_single_sample_memorized():
    x = np.random.default_rng(3).uniform(-80, 0, (1, 16, 16))
    m, h = models.train(models.build_cnn(small_cfg(epochs=200, num_classes=5)), x, [2])
    assert h.records[-1].train_accuracy == 1.0
    assert models.predict(m, x[0])[2] > 0.9


def test_stop_below_loss(rng):
    x, y = toy_grids(rng)
    _, h = models.train(models.build_cnn(small_cfg(epochs=200, num_classes=3)), x, y,
                        stop_below_loss=0.5)
    assert len(h) < 200 and h.records[-1].train_loss < 0.5


def test_train_errors(rng):
    m = models.build_cnn(small_cfg())
    with pytest.raises(EmptyDataset):
        models.train(m, np.zeros((0, 16, 16)), [])
    with pytest.raises(ShapeMismatch):
        models.train(m, np.zeros((2, 8, 8)), [0, 1])
    with pytest.raises(ShapeMismatch):
        models.train(m, np.zeros((2, 16, 16)), [0])


def test_predict_is_distribution(rng):
    m = models.build_cnn(small_cfg())
    p = models.predict(m, Spectrogram(rng.uniform(-80, 0, (16, 16)), 0.01, 62.5))
    assert abs(p.sum() - 1) < 1e-6 and np.all(p > 0)
    with pytest.raises(ShapeMismatch):
        models.predict(m, np.zeros((8, 8)))


def test_svm_separable_clusters(rng):
    centers = np.array([[5, 5], [-5, -5]], dtype=float)
    y = np.repeat(np.arange(2), 50)
    x = centers[y] + rng.normal(size=(100, 2))
    cfg = models.SvmConfig(lam=1e-3, epochs=20, feature_shape=(1, 2))
    model = models.train_svm_ovr(x, y, cfg)
    pred, _ = models.svm_predict(model, x)
    assert np.all(pred == y)
    yt = np.repeat(np.arange(2), 20)
    xt = centers[yt] + rng.normal(size=(40, 2))
    assert np.all(models.svm_predict(model, xt)[0] == yt)


def test_svm_ties_and_hand_weights():
    cfg = models.SvmConfig(feature_shape=(1, 2))
    model = models.SvmModel(np.array([[1.0, 0.0], [0.0, 1.0]]), cfg)
    assert models.svm_predict(model, np.array([2.0, 1.0]))[0] == 0
    cls, scores = models.svm_predict(model, np.zeros(2))
    assert cls == 0 and not scores.any()
    one = models.SvmModel(np.array([[0.3, -1.0]]), cfg)
    assert models.svm_predict(one, np.array([-9.0, 4.0]))[0] == 0
    with pytest.raises(DimensionMismatch):
        models.svm_predict(model, np.zeros(3))


def test_svm_scale_homogeneity(rng):
    y = np.repeat(np.arange(3), 10)
    x = rng.normal(size=(30, 4)) + y[:, None]
    model = models.train_svm_ovr(x, y, models.SvmConfig(lam=1e-2, epochs=5, feature_shape=(2, 2)))
    scaled = models.SvmModel(model.weights * 2.5, model.config)
    assert np.array_equal(models.svm_predict(model, x)[0], models.svm_predict(scaled, x * 4.0)[0])


def test_svm_errors(rng):
    cfg = models.SvmConfig(feature_shape=(1, 2))
    with pytest.raises(EmptyDataset):
        models.train_svm_ovr(np.zeros((0, 2)), [], cfg)
    with pytest.raises(EmptyDataset):
        models.train_svm_ovr(np.zeros((3, 2)), [1, 1, 1], cfg)
    with pytest.raises(DimensionMismatch):
        models.train_svm_ovr(np.zeros((3, 5)), [0, 1, 0], cfg)


def test_svm_training_is_deterministic(rng):
    x = rng.normal(size=(20, 4))
    y = np.arange(20) % 2
    cfg = models.SvmConfig(epochs=3, feature_shape=(2, 2))
    a = models.train_svm_ovr(x, y, cfg)
    b = models.train_svm_ovr(x, y, cfg)
    assert np.array_equal(a.weights, b.weights) and a.history == b.history


def test_svm_features_scaling():
    cfg = models.SvmConfig(feature_shape=(2, 2))
    f = models.svm_features(np.stack([np.full((8, 8), -80.0), np.zeros((8, 8))]), cfg)
    assert f.shape == (2, 4)
    assert np.all(f[0] == 0.0) and np.all(f[1] == 1.0)


@pytest.mark.parametrize("kind", ["cnn", "svm"])
def test_checkpoint_roundtrip(tmp_path, rng, kind):
    x, y = toy_grids(rng)
    if kind == "cnn":
        model, _ = models.train(models.build_cnn(small_cfg(epochs=1, num_classes=3), ["a", "b", "c"]), x, y)
        before = model.logits(x)
    else:
        cfg = models.SvmConfig(epochs=2, feature_shape=(4, 4))
        model = models.train_svm_ovr(models.svm_features(x, cfg), y, cfg, 3, ["a", "b", "c"])
        before = models.svm_predict(model, models.svm_features(x, cfg))[1]
    p = models.save_model(tmp_path / "m.ckpt", model, {"data_hash": "abc"})
    back = models.load_model(p)
    assert back.class_names == ["a", "b", "c"]
    if kind == "cnn":
        after = back.logits(x)
    else:
        after = models.svm_predict(back, models.svm_features(x, back.config))[1]
    assert np.array_equal(before, after)
    models.save_model(tmp_path / "m2.ckpt", back, {"data_hash": "abc"})
    assert (tmp_path / "m2.ckpt").read_bytes() == p.read_bytes()
