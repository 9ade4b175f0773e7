import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gencs.generator import (GgnModel, UpscaleOperator, cone_count_log_bound, forward, forward_grad,
                             load_model, random_model, range_subspace_basis, save_model, upscale)


def naive_forward(model, z):
    # straight-line re-evaluation, one scalar at a time
    h = list(map(float, z))
    for w in model.layers:
        h = [max(0.0, sum(w[i, j] * h[j] for j in range(len(h)))) for i in range(w.shape[0])]
    W = model.final
    return np.array([sum(W[i, j] * h[j] for j in range(len(h))) for i in range(W.shape[0])])


def central_diff_grad(model, z, cot, h=1e-5):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (forward(model, z + e) @ cot - forward(model, z - e) @ cot) / (2 * h)
    return g


def test_zero_weights_give_zero_output():
    model = GgnModel((np.zeros((3, 2)),), np.zeros((16, 3)), (4, 4))
    assert np.all(forward(model, np.array([1.3, -2.0])) == 0)


def test_identity_network_on_nonnegative_orthant():
    W = np.zeros((9, 3))
    W[:3, :3] = np.eye(3)
    model = GgnModel((np.eye(3),), W, (3, 3))
    z = np.array([0.5, 0.0, 2.0])
    out = forward(model, z)
    assert np.array_equal(out[:3], z)
    assert np.all(out[3:] == 0)


def test_forward_matches_naive_evaluator():
    model = random_model((2, 3, 4), (4, 4), seed=0)
    z = np.array([1.0, -1.0])
    np.testing.assert_allclose(forward(model, z), naive_forward(model, z), rtol=1e-13, atol=1e-14)


def test_batch_forward_matches_rows():
    model = random_model((3, 5, 8), (4, 4), seed=2)
    Z = np.random.default_rng(0).standard_normal((6, 3))
    np.testing.assert_allclose(forward(model, Z), np.stack([forward(model, z) for z in Z]), rtol=1e-12)


@pytest.mark.parametrize("c", [0.0, 0.5, 2.0])
def test_positive_homogeneity(c):
    model = random_model((4, 8, 16), (8, 8), seed=1)
    z = np.random.default_rng(3).standard_normal(4)
    np.testing.assert_allclose(forward(model, c * z), c * forward(model, z), rtol=1e-13, atol=1e-15)


def test_invalid_widths_rejected():
    with pytest.raises(ValueError):
        GgnModel((np.ones((2, 3)),), np.ones((16, 2)), (4, 4))  # 3 -> 2 shrinks
    with pytest.raises(ValueError):
        GgnModel((np.ones((2, 1)),), np.ones((16, 2)), (4, 4))  # k = 1
    with pytest.raises(ValueError):
        GgnModel((np.ones((4, 2)),), np.ones((15, 4)), (4, 4))
    with pytest.raises(ValueError):
        GgnModel((np.full((4, 2), np.nan),), np.ones((16, 4)), (4, 4))


def test_forward_shape_error():
    model = random_model((2, 4), (4, 4))
    with pytest.raises(ValueError):
        forward(model, np.ones(3))


def test_model_is_immutable():
    model = random_model((2, 4), (4, 4))
    with pytest.raises(ValueError):
        model.final[0, 0] = 1.0


def test_grad_linear_regime_is_weight_chain_transpose():
    rng = np.random.default_rng(5)
    W1 = np.abs(rng.standard_normal((4, 3)))
    W2 = np.abs(rng.standard_normal((6, 4)))
    model = GgnModel((W1, W2), rng.standard_normal((16, 6)), (4, 4))
    z = np.abs(rng.standard_normal(3)) + 0.1  # all pre-activations positive
    cot = rng.standard_normal(16)
    expected = W1.T @ W2.T @ model.final.T @ cot
    np.testing.assert_allclose(forward_grad(model, z, cot), expected, rtol=1e-12)


def test_grad_zero_cotangent():
    model = random_model((3, 6), (4, 4))
    assert np.all(forward_grad(model, np.ones(3), np.zeros(16)) == 0)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for t in range(50):
        model = random_model((3, 5, 9), (4, 4), seed=t)
        z = rng.standard_normal(3)
        cot = rng.standard_normal(16)
        g = forward_grad(model, z, cot)
        fd = central_diff_grad(model, z, cot)
        if np.linalg.norm(fd) == 0:
            # every unit inactive around z: the analytic gradient must vanish too
            assert np.all(g == 0)
            continue
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    assert worst <= 1e-5


def test_grad_shape_mismatch():
    model = random_model((3, 6), (4, 4))
    with pytest.raises(ValueError):
        forward_grad(model, np.ones(3), np.ones(15))


def test_cone_count_values():
    assert cone_count_log_bound(2, 1, 2) == pytest.approx(np.log((2 * np.e) ** 2), rel=1e-14)
    assert cone_count_log_bound(2, 1, 2) == pytest.approx(3.386294361, abs=1e-9)
    assert cone_count_log_bound(2, 2, 4) == pytest.approx(4 * np.log(4 * np.e), rel=1e-14)
    assert cone_count_log_bound(2, 2, 4) == pytest.approx(9.545177444, abs=1e-9)
    for k, d in [(3, 2), (5, 1), (8, 3)]:
        assert cone_count_log_bound(k, d, k) == pytest.approx(k * d * (np.log(2) + 1), rel=1e-14)


@pytest.mark.parametrize("args", [(1, 1, 2), (3, 1, 2), (2, 0, 4)])
def test_cone_count_invalid(args):
    with pytest.raises(ValueError):
        cone_count_log_bound(*args)


def test_range_basis_canonical_embedding():
    W = np.zeros((16, 4))
    W[:4, :4] = np.eye(4)
    model = GgnModel((np.eye(2, 2), np.ones((4, 2))), W, (4, 4))
    B = range_subspace_basis(model)
    assert B.shape == (16, 4)
    # equal singular values leave the basis free up to rotation; compare projectors
    np.testing.assert_allclose(B @ B.T, W @ W.T, atol=1e-14)


def test_range_basis_duplicate_columns_rank_one():
    col = np.random.default_rng(0).standard_normal(16)
    model = GgnModel((np.eye(2),), np.stack([col, col], axis=1), (4, 4))
    assert range_subspace_basis(model).shape[1] == 1


def test_range_containment():
    model = random_model((2, 4, 8), (16, 16), seed=4)
    B = range_subspace_basis(model)
    np.testing.assert_allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-12)
    out = forward(model, np.random.default_rng(1).standard_normal((100, 2)))
    resid = out - (out @ B) @ B.T
    assert np.all(np.linalg.norm(resid, axis=1) <= 1e-9 * np.linalg.norm(out, axis=1))


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = random_model((3, 5, 7), (4, 4), seed=9)
    path = tmp_path / "model.ggn"
    save_model(model, path)
    back = load_model(path)
    assert back.grid == model.grid
    for a, b in zip((*model.layers, model.final), (*back.layers, back.final)):
        assert a.tobytes() == b.tobytes()
    assert path.read_bytes().splitlines()[1].startswith(b"{")


# -- upscaling --------------------------------------------------------------

def test_upscale_constant_preserved():
    op = UpscaleOperator(8, 16)
    np.testing.assert_allclose(upscale(op, np.full(64, 3.25)), 3.25, rtol=0, atol=1e-14)


def test_upscale_identity():
    x = np.random.default_rng(0).standard_normal(64)
    assert np.array_equal(upscale(UpscaleOperator(8, 8), x), x)


def test_upscale_ramp_interior():
    src, dst = 8, 16
    c = np.arange(src, dtype=float)
    ramp = (c[:, None] + c[None, :]).ravel()
    out = upscale(UpscaleOperator(src, dst), ramp).reshape(dst, dst)
    xs = (np.arange(dst) + 0.5) * src / dst - 0.5
    expected = xs[:, None] + xs[None, :]
    inner = slice(3, dst - 3)  # 4-tap stencils that stay off the clamped edge
    assert np.abs(out[inner, inner] - expected[inner, inner]).max() <= 1e-6


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 2 ** 16))
def test_upscale_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 64))
    op = UpscaleOperator(8, 24)
    lhs = upscale(op, a * x + b * y)
    rhs = a * upscale(op, x) + b * upscale(op, y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * (1 + abs(a) + abs(b)) * 64


def test_upscale_adjoint_dot_product():
    rng = np.random.default_rng(2)
    op = UpscaleOperator(8, 20)
    x, y = rng.standard_normal(64), rng.standard_normal(400)
    assert upscale(op, x) @ y == pytest.approx(x @ op.adjoint(y), rel=1e-12)


def test_upscale_resolution_mismatch():
    with pytest.raises(ValueError):
        upscale(UpscaleOperator(8, 16), np.ones(65))
    with pytest.raises(ValueError):
        UpscaleOperator(16, 8)
