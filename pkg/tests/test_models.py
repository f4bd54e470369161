import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncae import models, nn
from ncae.errors import DataError
from ncae.training import euclidean_loss, euclidean_loss_grad


@pytest.mark.parametrize("k, expected", [(3, 147_840), (5, 246_144), (7, 344_448)])
def test_ncae_param_count(k, expected):
    assert models.count_params(models.NCAE(kernel=k)) == expected


def test_ncae_layer_shapes():
    shapes = models.NCAE(kernel=5).layer_shapes(n=2)
    assert all(s == (2, 128, 30) for s in shapes)
    assert len(shapes) == 6


def test_ncae_output_range_and_shape():
    m = models.NCAE(kernel=3, seed=1)
    X = np.random.default_rng(0).uniform(size=(4, 30, 128))
    Y = m(X)
    assert Y.shape == X.shape
    assert np.all((Y >= 0) & (Y <= 1))


def test_ncae_rejects_even_kernel():
    with pytest.raises(ValueError, match="kernel must be odd"):
        models.NCAE(kernel=4)


def test_forward_rejects_wrong_feature_dim():
    with pytest.raises(DataError):
        models.NCAE()(np.zeros((1, 30, 64)))


def test_same_seed_same_weights():
    a = models.NCAE(seed=3).params()
    b = models.NCAE(seed=3).params()
    c = models.NCAE(seed=4).params()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    assert any(x.tobytes() != y.tobytes() for x, y in zip(a, c))


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 40), st.sampled_from([1, 3, 5]))
def test_ncae_preserves_shape_for_any_length(S, k):
    m = models.NCAE(kernel=k, seq_len=S, n_features=8)
    assert m(np.zeros((2, S, 8))).shape == (2, S, 8)


# ---------------------------------------------------------------- normalization

def test_normalize_examples():
    stats = models.NormStats.fit(np.array([[0.0, 5.0], [10.0, 5.0]]))
    np.testing.assert_array_equal(models.normalize(np.array([5.0, 5.0]), stats), [0.5, 0.5])
    np.testing.assert_array_equal(models.normalize(np.array([20.0, 1.0]), stats), [1.0, 0.5])
    np.testing.assert_array_equal(models.normalize(np.array([-3.0, 9.0]), stats), [0.0, 0.5])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_normalize_round_trip(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(5, 6, 4)) * rng.uniform(0.1, 10, size=4)
    stats = models.NormStats.fit(X)
    Xn = models.normalize(X, stats)
    assert Xn.min() >= 0 and Xn.max() <= 1
    np.testing.assert_allclose(models.denormalize(Xn, stats), X, atol=1e-9)


# ---------------------------------------------------------------- bottleneck

def test_bottleneck_latent_and_output():
    m = models.BottleneckAE(kernel=3)
    X = np.random.default_rng(1).uniform(size=(2, 30, 128))
    assert m.encode(X).shape == (2, 128)
    assert m(X).shape == (2, 30, 128)


def test_bottleneck_is_heavier_than_ncae():
    assert models.count_params(models.BottleneckAE(kernel=3)) > 10 * models.count_params(models.NCAE(kernel=3))


@pytest.mark.parametrize("S", [7, 16, 30])
def test_bottleneck_gradients_finite_difference(S):
    m = models.BottleneckAE(kernel=3, seq_len=S, n_features=3, latent_dim=4, seed=S, widths=(1, 2, 2))
    X = np.random.default_rng(S).uniform(size=(2, S, 3))
    m.zero_grad()
    m.backward(euclidean_loss_grad(X, m(X))[1])
    _, p, g = m.named_params()[1]  # first encoder conv weight
    g = g.copy()
    h = 1e-6
    for idx in [(0, 0, 0), (1, 2, 1), (2, 1, 2)]:
        orig = p[idx]
        p[idx] = orig + h
        up = euclidean_loss(X, m(X))
        p[idx] = orig - h
        down = euclidean_loss(X, m(X))
        p[idx] = orig
        assert g[idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-9)


# ---------------------------------------------------------------- whole-model gradient and fit

def test_ncae_gradients_finite_difference():
    m = models.NCAE(kernel=3, seq_len=6, n_features=4, seed=2)
    X = np.random.default_rng(2).uniform(size=(3, 6, 4))
    m.zero_grad()
    m.backward(euclidean_loss_grad(X, m(X))[1])
    h = 1e-6
    for p, g in zip(m.params(), m.grads()):
        flat_p, flat_g = p.reshape(-1), g.reshape(-1)
        for i in range(0, flat_p.size, max(1, flat_p.size // 7)):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = euclidean_loss(X, m(X))
            flat_p[i] = orig - h
            down = euclidean_loss(X, m(X))
            flat_p[i] = orig
            assert flat_g[i] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-9)


def test_ncae_overfits_one_sequence():
    # Adam circles the cusp of a Euclidean loss at zero, so step the rate down
    m = models.NCAE(kernel=3, seed=0)
    X = np.random.default_rng(0).uniform(0.2, 0.8, size=(1, 30, 128))
    for lr in (3e-3, 3e-4, 3e-5):
        opt = nn.Adam(lr)
        for _ in range(600):
            m.zero_grad()
            m.backward(euclidean_loss_grad(X, m(X))[1])
            opt.step(m.params(), m.grads())
    assert euclidean_loss(X, m(X)) < 1e-2


# ---------------------------------------------------------------- persistence

@pytest.mark.parametrize("kind", ["ncae", "bottleneck"])
def test_save_load_round_trip(tmp_path, kind):
    m = models.build_model(kind, kernel=3, seq_len=12, n_features=16, seed=5)
    m.norm_stats = models.NormStats(np.zeros(16), np.arange(16.0) + 1)
    m.threshold = {"theta": 1.5, "mu": 1.0, "sigma": 0.3, "multiplier": 1.5}
    m.save(tmp_path / "m.bin")
    back = models.load_model(tmp_path / "m.bin")
    assert type(back) is type(m)
    assert back.threshold == m.threshold
    np.testing.assert_array_equal(back.norm_stats.max, m.norm_stats.max)
    X = np.random.default_rng(0).uniform(size=(2, 12, 16))
    assert back(X).tobytes() == m(X).tobytes()


def test_unknown_model_kind():
    with pytest.raises(ValueError):
        models.build_model("lstm", 3, 30, 128, 0)
