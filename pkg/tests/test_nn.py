import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowtree import nn

from oracles import gradient_triples, rel_error


def zero_net(dims):
    net = nn.init_network(dims, 0)
    return net.with_params([np.zeros_like(p) for p in net.params()])


def test_zero_net_uniform():
    p = nn.forward(zero_net([3, 4, 5]), np.array([1.0, -2.0, 3.0])).probs
    assert np.allclose(p, 0.2, atol=0, rtol=1e-15)


def test_large_logit_dominates():
    net = nn.DenseNetwork([nn.DenseLayer(np.eye(3) * 20, np.zeros(3), "softmax")])
    assert nn.forward(net, np.array([0.0, 1.0, 0.0])).probs[1] > 0.99


@given(st.lists(st.floats(-50, 50), min_size=4, max_size=4), st.integers(0, 100))
def test_probs_on_simplex(x, seed):
    p = nn.forward(nn.init_network([4, 8, 3], seed), np.array(x)).probs
    assert abs(p.sum() - 1) <= 1e-12 and (p >= 0).all()


def test_dimension_mismatch():
    with pytest.raises(nn.DimensionMismatch):
        nn.forward(nn.init_network([4, 2], 0), np.zeros(5))
    with pytest.raises(nn.DimensionMismatch):
        nn.backward(nn.init_network([4, 2], 0), np.zeros(3), 0)


def test_label_out_of_range():
    with pytest.raises(nn.LabelOutOfRange):
        nn.backward(nn.init_network([4, 2], 0), np.zeros(4), 2)


def test_output_bias_gradient_identity(rng):
    net = nn.init_network([5, 7, 4], 3)
    x = rng.normal(size=5)
    g = nn.backward(net, x, 2)
    p = nn.forward(net, x).probs
    assert np.allclose(g.arrays[-1], p - np.eye(4)[2], atol=1e-15)
    assert g.class_id == 2


def test_exact_fit_gives_zero_gradient():
    # logits (+inf-like, -inf-like) saturate float64 softmax to exactly one-hot
    net = nn.DenseNetwork([nn.DenseLayer(np.zeros((2, 1)), np.array([800.0, -800.0]), "softmax")])
    assert np.array_equal(nn.forward(net, np.array([1.0])).probs, [1.0, 0.0])
    g = nn.backward(net, np.array([1.0]), 0)
    assert all(not a.any() for a in g.arrays)


def test_gradient_matches_finite_differences():
    worst = 0.0
    for net, x, y in gradient_triples(30, seed=7):
        worst = max(worst, rel_error(nn.backward(net, x, y).flat(), nn.finite_difference_gradient(net, x, y).flat()))
    assert worst < 1e-5


def test_sgd_single_and_cancelling():
    net = nn.init_network([3, 2], 1)
    g = nn.Gradient([np.ones_like(p) for p in net.params()])
    stepped = nn.sgd_step(net, [g], 1.0)
    assert all(np.array_equal(a, b - 1) for a, b in zip(stepped.params(), net.params()))
    same = nn.sgd_step(net, [g, g.scaled(-1)], 0.7)
    assert all(np.array_equal(a, b) for a, b in zip(same.params(), net.params()))


def test_sgd_shape_mismatch():
    net = nn.init_network([3, 2], 1)
    with pytest.raises(nn.ShapeMismatch):
        nn.sgd_step(net, [nn.Gradient([np.zeros(3)])], 0.1)


def test_majority_dominates_plain_sum(rng):
    """10,000 class-A gradients vs 10 class-B of similar norm: the sum points along A."""
    d = 50
    mu_a, mu_b = rng.normal(size=d), rng.normal(size=d)
    mu_b *= np.linalg.norm(mu_a) / np.linalg.norm(mu_b)
    ga = mu_a + rng.normal(scale=0.5, size=(10_000, d))
    gb = mu_b + rng.normal(scale=0.5, size=(10, d))
    grads = [nn.Gradient([g], 0) for g in ga] + [nn.Gradient([g], 1) for g in gb]
    total = nn.sum_gradients(grads, [np.zeros(d)]).arrays[0]
    cos = total @ ga.mean(0) / (np.linalg.norm(total) * np.linalg.norm(ga.mean(0)))
    assert np.degrees(np.arccos(min(cos, 1.0))) < 5


def test_small_step_does_not_increase_loss(rng):
    for seed in range(20):
        net = nn.init_network([6, 8, 4], seed)
        X, y = rng.normal(size=(12, 6)), rng.integers(0, 4, 12)
        grads = [nn.backward(net, x, t) for x, t in zip(X, y)]
        after = nn.sgd_step(net, grads, 1e-4)
        assert nn.batch_loss(after, X, y).sum() <= nn.batch_loss(net, X, y).sum()


def test_class_grouped_sum_equals_plain_sum():
    """Integer-valued gradients make every summation order exact."""
    rng = np.random.default_rng(5)
    grads = [nn.Gradient([rng.integers(-1000, 1000, (3, 4)).astype(float)], int(rng.integers(3))) for _ in range(200)]
    plain = nn.sum_gradients(grads, [np.zeros((3, 4))]).arrays[0]
    grouped = np.zeros((3, 4))
    for c in range(3):
        grouped += nn.sum_gradients([g for g in grads if g.class_id == c], [np.zeros((3, 4))]).arrays[0]
    assert np.array_equal(plain, grouped)


def test_class_grouped_sum_random_floats(rng):
    grads = [nn.Gradient([rng.normal(size=5)], int(rng.integers(4))) for _ in range(300)]
    plain = nn.sum_gradients(grads, [np.zeros(5)]).arrays[0]
    grouped = sum(nn.sum_gradients([g for g in grads if g.class_id == c], [np.zeros(5)]).arrays[0]
                  for c in range(4) if any(g.class_id == c for g in grads))
    assert np.allclose(plain, grouped, rtol=0, atol=1e-12)


def test_weighted_gradient_equals_per_sample_sum(rng):
    net = nn.init_network([5, 6, 3], 2)
    X, y, w = rng.normal(size=(9, 5)), rng.integers(0, 3, 9), rng.random(9)
    _, g = nn.weighted_gradient(net, X, y, w)
    ref = nn.sum_gradients([nn.backward(net, x, t).scaled(wi) for x, t, wi in zip(X, y, w)], net.params())
    assert rel_error(g.flat(), ref.flat()) < 1e-13


def test_init_deterministic():
    a, b = nn.init_network([10, 5, 3], 9), nn.init_network([10, 5, 3], 9)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    s = np.sqrt(6 / 15)
    assert np.abs(a.layers[0].weights).max() <= s


def test_training_deterministic_and_learns(rng):
    X = rng.normal(size=(60, 4))
    y = (X[:, 0] > 0).astype(int)
    cfg = nn.TrainConfig(eta=0.5 / 60, epochs=40, seed=1)
    n1, h1 = nn.train_weighted(nn.init_network([4, 8, 2], 0), X, y, cfg)
    n2, h2 = nn.train_weighted(nn.init_network([4, 8, 2], 0), X, y, cfg)
    assert h1 == h2
    assert all(np.array_equal(p, q) for p, q in zip(n1.params(), n2.params()))
    assert h1[-1] < h1[0]


def test_checkpoint_roundtrip(tmp_path, rng):
    net = nn.init_network([5, 4, 3], 11)
    nn.save_network(net, tmp_path / "net.json", seed=11, epoch=0)
    back = nn.load_network(tmp_path / "net.json")
    X = rng.normal(size=(7, 5))
    assert np.array_equal(nn.forward_batch(net, X).probs, nn.forward_batch(back, X).probs)
