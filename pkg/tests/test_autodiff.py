import numpy as np
import pytest

from plugbench import autodiff as ad
from plugbench.autodiff import gradcheck, nn
from plugbench.autodiff.tensor import Tensor


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_relu_values():
    out = ad.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_matmul_identity():
    a = np.arange(12, dtype=np.float32).reshape(3, 4)
    out = ad.matmul(Tensor(np.eye(3, dtype=np.float32)), Tensor(a))
    assert np.array_equal(out.data, a)


def test_conv2d_all_ones():
    img = Tensor(np.ones((1, 1, 5, 5), dtype=np.float32))
    ker = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
    out = ad.conv2d(img, ker, stride=1, pad=0)
    assert out.shape == (1, 1, 3, 3)
    assert np.array_equal(out.data, np.full((1, 1, 3, 3), 9.0, dtype=np.float32))


def test_shape_mismatch_raises():
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    with pytest.raises(ValueError, match="conv2d"):
        ad.conv2d(Tensor(np.ones((1, 2, 8, 8))), Tensor(np.ones((4, 3, 3, 3))))


def test_backward_mean_square():
    x = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    loss = ad.mean(ad.mul(x, x))
    ad.backward(loss)
    assert np.allclose(x.grad, [1.0, 2.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.mul(x, 2.0)
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(y)
    ad.clear_tape()


def test_constant_graph_empty_gradients():
    a = Tensor(np.ones(3))
    b = Tensor(np.ones(3))
    loss = ad.mean(ad.mul(a, b))
    ad.backward(loss)
    assert a.grad is None and b.grad is None
    assert ad.tape_size() == 0


# ---------------------------------------------------------------------------
# finite-difference oracle per op
# ---------------------------------------------------------------------------

def op_gradcheck_worst(seed: int = 0) -> dict[str, float]:
    from plugbench.autodiff.opchecks import op_gradcheck_cases
    rng = np.random.default_rng(seed)
    results = {}
    for name, (fn, make) in op_gradcheck_cases(rng).items():
        params = make()
        err = gradcheck.check(lambda: fn(params), [p for p in params if p.requires_grad])
        results[name] = err
    return results


def test_all_ops_match_finite_differences():
    results = op_gradcheck_worst()
    for name, err in results.items():
        assert err < 1e-5, f"op {name}: rel error {err:.3e}"


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_no_change():
    p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    opt = ad.Adam([p], lr=0.1)
    p.grad = np.zeros(2, dtype=np.float32)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)


def test_adam_first_step_magnitude():
    p = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
    opt = ad.Adam([p], lr=1e-3)
    g = np.array([0.5, -2.0, 1e-3, -7.0], dtype=np.float32)
    p.grad = g.copy()
    opt.step()
    # bias-corrected first step is ~ -lr * sign(g)
    expected = -1e-3 * np.sign(g)
    assert np.allclose(p.data, expected, rtol=1e-3, atol=1e-6)


def test_adam_functional_matches_class():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(5,)).astype(np.float32)
    p_cls = Tensor(w.copy(), requires_grad=True)
    opt = ad.Adam([p_cls], lr=0.01)
    p_fn = w.copy()
    m = [np.zeros_like(p_fn)]
    v = [np.zeros_like(p_fn)]
    for t in range(1, 6):
        g = rng.normal(size=(5,)).astype(np.float32)
        p_cls.grad = g.copy()
        opt.step()
        ad.adam_step([p_fn], [g], 0.01, 0.9, 0.999, 1e-8, t, m, v)
    assert np.array_equal(p_cls.data, p_fn)


def test_training_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        lin = nn.Linear(4, 2, rng)
        opt = ad.Adam(lin.parameters(), lr=1e-2)
        data = rng.normal(size=(16, 4)).astype(np.float32)
        target = rng.normal(size=(16, 2)).astype(np.float32)
        for _ in range(10):
            loss = ad.mse_loss(lin(Tensor(data)), Tensor(target))
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
        return [p.data.copy() for p in lin.parameters()]

    a, b = run(), run()
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_clip_grad_norm():
    p = Tensor(np.zeros(3), requires_grad=True)
    p.grad = np.array([3.0, 4.0, 0.0], dtype=np.float32)
    norm = ad.clip_grad_norm([p], 1.0)
    assert norm == pytest.approx(5.0)
    assert np.allclose(p.grad, [0.6, 0.8, 0.0])


# ---------------------------------------------------------------------------
# checkpoint round-trip
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "layer.weight": rng.normal(size=(3, 4)).astype(np.float32),
        "layer.bias": rng.normal(size=(4,)).astype(np.float32),
        "scalar": np.float32(2.5).reshape(()),
    }
    meta = {"k": 10, "note": "abc"}
    path = str(tmp_path / "model.pbck")
    ad.save_checkpoint(path, tensors, meta)
    loaded, loaded_meta = ad.load_checkpoint(path)
    assert loaded_meta == meta
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert np.array_equal(loaded[name], tensors[name])
    # byte-identical rewrite
    path2 = tmp_path / "model2.pbck"
    ad.save_checkpoint(str(path2), loaded, loaded_meta)
    assert (tmp_path / "model.pbck").read_bytes() == path2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.pbck"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(ad.CheckpointError, match="magic"):
        ad.load_checkpoint(str(path))


def test_finite_check_mode():
    ad.set_check_finite(True)
    try:
        x = Tensor(np.array([1e30], dtype=np.float32), requires_grad=True)
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            ad.mul(ad.mul(x, 1e30), 1e30)
    finally:
        ad.set_check_finite(False)
        ad.clear_tape()
