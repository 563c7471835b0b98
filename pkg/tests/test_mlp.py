import numpy as np
import pytest
from hypothesis import given, strategies as st

from fe2nn.errors import EmptyDataset, InvalidDeformation, ShapeError
from fe2nn.mlp import (MlpNetwork, Normalization, TrainingConfig, activation, init_nguyen_widrow,
                       surrogate_pk, surrogate_tangent, train_lm)

finite = st.floats(-50, 50, allow_nan=False)


def literal_sigmoid(x):
    return 2.0 / (1.0 + np.exp(-2.0 * x)) - 1.0


def zero_net(sizes=(4, 5, 4), **kw):
    return MlpNetwork(sizes, [np.zeros((sizes[k + 1], sizes[k])) for k in range(len(sizes) - 1)],
                      [np.zeros(n) for n in sizes[1:]], **kw)


def fit(x, y, sizes, seed, max_iter, target=1e-12):
    net = init_nguyen_widrow(sizes, seed)
    net.input_norm = Normalization.fit(x)
    net.output_norm = Normalization.fit(y)
    return train_lm(net, x, y, TrainingConfig(max_iterations=max_iter, target_mse=target, seed=seed))


# --- activation -------------------------------------------------------------

def test_activation_values():
    assert activation(0.0) == 0.0
    assert activation(1.0) == pytest.approx(0.7615942, abs=1e-7)
    xs = np.linspace(-5, 5, 101)
    np.testing.assert_allclose(activation(xs), literal_sigmoid(xs), atol=1e-15)


def test_activation_antisymmetric(rng):
    x = rng.uniform(-10, 10, 100)
    assert np.abs(activation(-x) + activation(x)).max() <= 1e-15


@given(finite)
def test_activation_bounded(x):
    assert abs(activation(x)) <= 1.0
    assert abs(activation(x)) < 1.0 or abs(x) > 15


def test_activation_monotone():
    y = activation(np.linspace(-8, 8, 2001))
    assert np.all(np.diff(y) >= 0) and np.all(np.diff(y[500:1500]) > 0)


# --- forward ----------------------------------------------------------------

def test_zero_network_outputs_zero():
    np.testing.assert_array_equal(zero_net().forward(np.array([1.0, 2.0, 3.0, 4.0])), 0.0)


def test_one_one_one_network():
    net = MlpNetwork((1, 1, 1), [np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    for x in (-2.0, -0.3, 0.0, 0.7, 3.0):
        assert net.forward(np.array([x]))[0] == activation(x)


def test_forward_deterministic(rng):
    net = init_nguyen_widrow([4, 8, 8, 4], 3)
    x = rng.standard_normal(4)
    assert net.forward(x).tobytes() == net.forward(x).tobytes()


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        zero_net().forward(np.zeros(3))


# --- initialization ---------------------------------------------------------

def test_nguyen_widrow_row_norms():
    net = init_nguyen_widrow([4, 16, 16, 4], 7)
    for k, n in ((0, 4), (1, 16)):
        beta = 0.7 * 16 ** (1.0 / n)
        np.testing.assert_allclose(np.linalg.norm(net.weights[k], axis=1), beta, rtol=0, atol=1e-12)
        assert np.abs(net.biases[k]).max() <= beta + 1e-12


def test_nguyen_widrow_seeding():
    a, b, c = (init_nguyen_widrow([4, 6, 4], s) for s in (1, 1, 2))
    assert np.array_equal(a.params(), b.params())
    assert not np.array_equal(a.params(), c.params())
    with pytest.raises(ValueError):
        init_nguyen_widrow([4, 4], 0)


# --- normalization ----------------------------------------------------------

@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=4, max_size=4))
def test_normalization_roundtrip(v):
    norm = Normalization([1.5, -2.0, 0.0, 3.0], [0.1, 2.0, 7.0, 1e-3])
    v = np.array(v)
    np.testing.assert_allclose(norm.denormalize(norm.normalize(v)), v, rtol=1e-12, atol=1e-12)


def test_normalization_fit():
    vals = np.array([[0.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    norm = Normalization.fit(vals)
    np.testing.assert_allclose(norm.shift, [2.0, 5.0])
    np.testing.assert_allclose(norm.scale, [4.0, 1.0])
    with pytest.raises(ValueError):
        Normalization([0.0], [0.0])


# --- training ---------------------------------------------------------------

def test_zero_iterations_returns_initial():
    x = np.linspace(-1, 1, 10)[:, None]
    net = init_nguyen_widrow([1, 4, 1], 0)
    out, rep = train_lm(net, x, 2 * x, TrainingConfig(max_iterations=0))
    assert rep.iterations_used == 0
    assert np.array_equal(out.params(), net.params())


def test_linear_target():
    x = np.linspace(-1, 1, 10)[:, None]
    _, rep = fit(x, 2 * x, [1, 4, 1], 0, 100, target=1e-9)
    assert rep.final_mse < 1e-8 and rep.iterations_used <= 100


def test_sine_target_seed_ensemble():
    x = np.linspace(-1, 1, 50)[:, None]
    y = np.sin(np.pi * x)
    reports = [fit(x, y, [1, 8, 1], s, 500, target=1e-5)[1] for s in range(5)]
    assert sum(r.final_mse < 1e-4 for r in reports) >= 3
    for r in reports:
        h = np.array(r.mse_history)
        assert np.all(np.diff(h) <= 0)


def test_training_reproducible():
    x = np.linspace(-1, 1, 20)[:, None]
    y = x ** 3
    a, _ = fit(x, y, [1, 5, 1], 4, 30)
    b, _ = fit(x, y, [1, 5, 1], 4, 30)
    assert a.params().tobytes() == b.params().tobytes()


def test_training_does_not_mutate_input():
    x = np.linspace(-1, 1, 20)[:, None]
    net = init_nguyen_widrow([1, 3, 1], 0)
    before = net.params().copy()
    train_lm(net, x, x ** 2, TrainingConfig(max_iterations=5))
    assert np.array_equal(net.params(), before)


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train_lm(init_nguyen_widrow([1, 3, 1], 0), np.zeros((0, 1)), np.zeros((0, 1)))


# --- jacobians and the surrogate map ------------------------------------------

def test_param_jacobian_matches_fd(rng):
    net = init_nguyen_widrow([4, 5, 3, 4], 1)
    z = rng.standard_normal((3, 4))
    J = net.param_jacobian(z)
    theta, h = net.params(), 1e-6
    J_fd = np.empty_like(J)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        J_fd[:, :, k] = (net.with_params(theta + e).forward_normalized(z)
                         - net.with_params(theta - e).forward_normalized(z)) / (2 * h)
    np.testing.assert_allclose(J, J_fd, atol=1e-9)


def test_surrogate_pk_is_forward(rng):
    net = init_nguyen_widrow([4, 6, 4], 2)
    F = np.eye(2) + 0.1 * rng.standard_normal((2, 2))
    np.testing.assert_array_equal(surrogate_pk(net, F), net.forward(F.ravel()).reshape(2, 2))
    with pytest.raises(InvalidDeformation):
        surrogate_pk(net, np.diag([-1.0, 1.0]))


def test_zero_network_returns_output_mean(rng):
    data = rng.standard_normal((30, 4))
    out_norm = Normalization.fit(data)
    net = zero_net(output_norm=out_norm, input_norm=Normalization(np.ones(4), np.full(4, 0.3)))
    for _ in range(3):
        F = np.eye(2) + 0.1 * rng.standard_normal((2, 2))
        np.testing.assert_allclose(surrogate_pk(net, F).ravel(), data.mean(axis=0), atol=1e-15)
    np.testing.assert_array_equal(surrogate_tangent(net, np.eye(2)), 0.0)


def test_surrogate_tangent_matches_reverse_mode(rng):
    net = init_nguyen_widrow([4, 8, 8, 4], 5)
    net.input_norm = Normalization(np.array([1.0, 0.0, 0.0, 1.0]), np.full(4, 0.3))
    net.output_norm = Normalization(np.zeros(4), np.full(4, 0.7))
    F = np.eye(2) + 0.05 * rng.standard_normal((2, 2))
    C = surrogate_tangent(net, F).reshape(4, 4)
    J = net.input_jacobian(F.ravel())
    assert np.abs(C - J).max() <= 1e-6 * np.abs(J).max()
    errs = [np.abs(surrogate_tangent(net, F, h).reshape(4, 4) - J).max() for h in (4e-2, 2e-2, 1e-2)]
    assert 3.0 < errs[0] / errs[1] < 5.0 and 3.0 < errs[1] / errs[2] < 5.0


def test_model_file_roundtrip(tmp_path, rng):
    net = init_nguyen_widrow([4, 7, 3, 4], 9)
    net.input_norm = Normalization(rng.standard_normal(4), rng.uniform(0.1, 1, 4))
    net.meta = {"seed": 9, "final_mse": 1.234e-7}
    net.save(tmp_path / "m.json")
    back = MlpNetwork.load(tmp_path / "m.json")
    assert back.to_dict() == net.to_dict()
    x = rng.standard_normal((5, 4))
    assert back.forward(x).tobytes() == net.forward(x).tobytes()


def test_heldout_error_close_to_training_error():
    from fe2nn.data import Dataset, SamplingSpec, sample_deformation_gradients
    from fe2nn.mlp import fit_surrogate
    from fe2nn.tensors import MaterialParams, first_pk

    mat = MaterialParams(1.0, 1.0)
    Fs = sample_deformation_gradients(SamplingSpec(200, 0.15, 0.5, 11))
    data = Dataset([F.ravel() for F in Fs], [first_pk(F, mat).ravel() for F in Fs])
    train, test = data.split(0.2, seed=0)
    net, rep = fit_surrogate(train.F, train.P, (8, 8), TrainingConfig(max_iterations=200, target_mse=1e-9))
    z, t = net.input_norm.normalize(test.F), net.output_norm.normalize(test.P)
    test_mse = np.mean((net.forward_normalized(z) - t) ** 2)
    assert test_mse <= 10 * rep.final_mse
