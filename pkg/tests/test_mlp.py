import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fargan import mlp
from fargan.autodiff import ShapeError, Tape, stable_sigmoid

from _oracles import numpy_d0, random_params


def test_init_is_deterministic():
    spec = mlp.MlpSpec(mlp.DISCRIMINATOR_WIDTHS)
    a, b = mlp.init_params(spec, 7), mlp.init_params(spec, 7)
    for x, y in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    c = mlp.init_params(spec, 8)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_parameter_counts():
    assert mlp.MlpSpec(mlp.DISCRIMINATOR_WIDTHS).n_params == 2 * 64 + 64 + 64 * 64 + 64 + 64 * 64 + 64 + 64 * 1 + 1
    assert mlp.MlpSpec(mlp.DISCRIMINATOR_WIDTHS).n_params == 8577
    assert mlp.MlpSpec(mlp.GENERATOR_WIDTHS).n_params == 8642


def test_he_normal_scale_and_zero_bias():
    p = mlp.init_params(mlp.MlpSpec((64, 256, 1)), 0)
    assert abs(p.weights[0].std() - np.sqrt(2 / 64)) < 0.01
    assert all(np.all(b == 0) for b in p.biases)


@pytest.mark.parametrize("widths", [(1,), (2, 0, 1), (3, -1)])
def test_bad_spec(widths):
    with pytest.raises(ValueError):
        mlp.MlpSpec(widths)


def test_params_must_match_spec():
    spec = mlp.MlpSpec((2, 3, 1))
    with pytest.raises(ShapeError):
        mlp.MlpParams(spec, [np.zeros((3, 2)), np.zeros((2, 3))], [np.zeros(3), np.zeros(1)])


def test_zero_params_give_zero_output():
    spec = mlp.MlpSpec(mlp.DISCRIMINATOR_WIDTHS)
    p = mlp.init_params(spec, 0)
    for a in p.arrays():
        a[...] = 0.0
    t = Tape()
    out = mlp.forward(p, t, t.var(np.random.default_rng(0).normal(size=(9, 2))))
    assert np.all(out.value == 0.0)


def test_single_linear_layer_is_affine():
    rng = np.random.default_rng(1)
    p = random_params(rng, (3, 2))
    x = rng.normal(size=(4, 3))
    t = Tape()
    out = mlp.forward(p, t, t.var(x))
    np.testing.assert_allclose(out.value, x @ p.weights[0].T + p.biases[0], rtol=1e-14)


def test_discriminator_output_shape():
    p = mlp.init_params(mlp.MlpSpec(mlp.DISCRIMINATOR_WIDTHS), 0)
    t = Tape()
    assert mlp.forward(p, t, t.var(np.zeros((64, 2)))).shape == (64, 1)


def test_forward_rejects_wrong_width():
    p = mlp.init_params(mlp.MlpSpec((2, 4, 1)), 0)
    t = Tape()
    with pytest.raises(ShapeError):
        mlp.forward(p, t, t.var(np.zeros((5, 3))))
    with pytest.raises(ShapeError):
        mlp.predict(p, np.zeros((5, 3)))


def test_predict_equals_taped_forward_exactly():
    rng = np.random.default_rng(2)
    p = mlp.init_params(mlp.MlpSpec(mlp.GENERATOR_WIDTHS), 3)
    x = rng.normal(size=(50, 2))
    t = Tape()
    assert np.array_equal(mlp.forward(p, t, t.var(x)).value, mlp.predict(p, x))
    np.testing.assert_allclose(mlp.predict(p, x), numpy_d0(p, x), rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), batch=st.integers(1, 70))
def test_forward_is_batch_consistent(seed, batch):
    rng = np.random.default_rng(seed)
    p = mlp.init_params(mlp.MlpSpec(mlp.DISCRIMINATOR_WIDTHS), seed)
    x = rng.normal(size=(batch, 2)) * 3
    t = Tape()
    full = mlp.forward(p, t, t.var(x)).value
    for i in range(batch):
        t1 = Tape()
        row = mlp.forward(p, t1, t1.var(x[i:i + 1])).value
        assert np.array_equal(row, full[i:i + 1])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_d_is_a_probability(seed, scale):
    rng = np.random.default_rng(seed)
    p = mlp.init_params(mlp.MlpSpec(mlp.DISCRIMINATOR_WIDTHS), seed)
    d = stable_sigmoid(mlp.predict(p, rng.normal(size=(20, 2)) * scale))
    assert np.all((d >= 0) & (d <= 1))
    # strictly inside (0, 1) whenever |D0| is below the f64 saturation point
    d0 = mlp.predict(p, rng.normal(size=(20, 2)))
    assert np.all(np.abs(d0) > 36) or np.all((stable_sigmoid(d0) > 0) & (stable_sigmoid(d0) < 1))


def test_checkpoint_roundtrip(tmp_path):
    p = mlp.init_params(mlp.MlpSpec(mlp.GENERATOR_WIDTHS), 11)
    path = tmp_path / "g.json"
    p.save(path)
    q = mlp.MlpParams.load(path)
    assert q.spec == p.spec and q.seed == 11
    for a, b in zip(p.arrays(), q.arrays()):
        assert np.array_equal(a, b)
