import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrag import autodiff as ad
from mrag.autodiff import Tensor
from mrag.gradcheck import check, check_report, relative_error
from mrag.inn import DenseBlock

torch = pytest.importorskip("torch")

TOL = {32: 1e-3, 64: 1e-6}


def normal(*shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


# name -> (fn, input shapes); every op the networks use appears at least once
OPS = {
    "add": (lambda a, b: a + b, [(3, 4), (3, 4)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 4)]),
    "mul": (lambda a, b: a * b, [(3, 4), (3, 4)]),
    "div": (lambda a, b: ad.div(a, ad.exp(b)), [(3, 4), (3, 4)]),
    "neg": (lambda a: -a, [(5,)]),
    "exp": (lambda a: ad.exp(a), [(3, 4)]),
    "tanh": (lambda a: ad.tanh(a), [(3, 4)]),
    "sigmoid": (lambda a: ad.sigmoid(a), [(3, 4)]),
    "leaky_relu": (lambda a: ad.leaky_relu(a, 0.2), [(4, 5)]),
    "clip": (lambda a: ad.clip(a, -0.5, 0.5), [(4, 5)]),
    "square": (lambda a: ad.square(a), [(3, 4)]),
    "sqrt": (lambda a: ad.sqrt(ad.exp(a)), [(3, 4)]),
    "sum": (lambda a: ad.sum_(a, axis=1, keepdims=True), [(3, 4, 2)]),
    "mean": (lambda a: ad.mean(a, axis=(0, 2)), [(3, 4, 2)]),
    "reshape": (lambda a: ad.reshape(a, (6, 4)), [(3, 8)]),
    "transpose": (lambda a: ad.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    "broadcast_to": (lambda a: ad.broadcast_to(a, (3, 4, 5)), [(4, 1)]),
    "getitem": (lambda a: a[1:, ::2], [(4, 6)]),
    "take": (lambda a: ad.take(a, np.array([3, 0, 0, 2]), axis=1), [(2, 4)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 5)]),
    "split": (lambda a: ad.split(a, [2, 4], axis=1)[1] * 2.0, [(3, 6)]),
    "matmul": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 5)]),
    "linear": (lambda x, w, b: ad.linear(x, w, b), [(3, 4), (4, 5), (5,)]),
    "matrix_inverse": (lambda a: ad.matrix_inverse(a + Tensor(4 * np.eye(4), dtype=a.dtype)), [(4, 4)]),
    "softmax": (lambda a: ad.softmax(a, axis=-1), [(3, 5)]),
    "layer_norm": (lambda x, g, b: ad.layer_norm(x, g, b), [(3, 6), (6,), (6,)]),
    "conv3x3": (lambda x, w, b: ad.conv2d(x, w, b), [(2, 3, 6, 5), (4, 3, 3, 3), (4,)]),
    "conv3x3_stride2": (lambda x, w: ad.conv2d(x, w, stride=2), [(1, 2, 6, 6), (3, 2, 3, 3)]),
    "conv3x3_valid": (lambda x, w: ad.conv2d(x, w, padding="none"), [(1, 2, 6, 5), (3, 2, 3, 3)]),
    "conv1x1": (lambda x, w: ad.conv2d(x, w), [(2, 3, 4, 4), (5, 3, 1, 1)]),
    "conv1x1_stride2": (lambda x, w: ad.conv2d(x, w, stride=2), [(1, 3, 4, 4), (2, 3, 1, 1)]),
    "conv_channels_last": (lambda x, w: ad.conv2d(x, w, channels_last=True), [(2, 5, 4, 3), (2, 3, 3, 3)]),
    "dense_block": (lambda x, w0, w1, b0, b1: ad.dense_block(x, [w0, w1], [b0, b1]),
                    [(2, 3, 5, 4), (2, 3, 3, 3), (4, 5, 3, 3), (2,), (4,)]),
}


@pytest.mark.parametrize("bits", [32, 64])
@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradient(name, bits):
    fn, shapes = OPS[name]
    with ad.precision(bits):
        inputs = [Tensor(normal(*s, seed=i)) for i, s in enumerate(shapes)]
        report = check_report(fn, inputs)
    assert report.error <= TOL[bits], f"{name}: {report}"


def torch_of(x):
    return torch.tensor(np.asarray(x, dtype=np.float64))


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [1, 3])
def test_conv_matches_torch(k, stride):
    x, w, b = normal(2, 3, 7, 6), normal(4, 3, k, k, seed=1), normal(4, seed=2)
    with ad.precision(64):
        ours = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
    ref = torch.nn.functional.conv2d(torch_of(x), torch_of(w), torch_of(b), stride=stride, padding=k // 2)
    assert np.allclose(ours, ref.numpy(), atol=1e-12)


def test_layer_norm_and_softmax_match_torch():
    x = normal(3, 6)
    g, b = normal(6, seed=1), normal(6, seed=2)
    with ad.precision(64):
        ln = ad.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data
        sm = ad.softmax(Tensor(x), axis=-1).data
    assert np.allclose(ln, torch.nn.functional.layer_norm(torch_of(x), (6,), torch_of(g), torch_of(b)).numpy())
    assert np.allclose(sm, torch.softmax(torch_of(x), -1).numpy())


@pytest.mark.parametrize("bits", [32, 64])
def test_fused_dense_block_matches_composed(bits):
    with ad.precision(bits):
        block = DenseBlock(4, 6, ad.rng(0), growth=3)
        block.convs[-1].weight.data = normal(*block.convs[-1].weight.shape, seed=3).astype(ad.get_dtype())
        x = Tensor(normal(2, 4, 6, 5), requires_grad=True)
        fused = block(x)
        ad.backward(ad.sum_(fused * fused))
        g_fused = [x.grad] + [p.grad for p in block.parameters()]
        block.zero_grad()
        x.grad = None
        composed = block.forward_composed(x)
        ad.backward(ad.sum_(composed * composed))
        g_comp = [x.grad] + [p.grad for p in block.parameters()]
    tol = 1e-4 if bits == 32 else 1e-12
    assert np.allclose(fused.data, composed.data, atol=tol)
    for a, b in zip(g_fused, g_comp):
        assert relative_error(a, b) <= tol


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ad.backward(ad.sum_(x * x + x))
    assert np.allclose(x.grad, [3.0, 5.0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.exp(x)
    assert not y.requires_grad and y._parents == ()


def test_non_finite_values_raise():
    with pytest.raises(ad.NonFiniteError), np.errstate(over="ignore"):
        ad.exp(Tensor(np.array([1e5])))


def test_shape_mismatch_raises():
    with pytest.raises(ad.ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(ad.ShapeError):
        ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_precision_switch():
    with ad.precision(64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_rng_is_seeded():
    assert np.array_equal(ad.rng(3).normal(size=4), ad.rng(3).normal(size=4))


def test_gradcheck_catches_a_wrong_gradient():
    def bad(a):
        return ad._make(a.data ** 2, (a,), lambda g: (g * a.data,), "bad_square")

    with ad.precision(64):
        assert check(bad, [Tensor(normal(5))]) > 0.1


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_clip_gradient_is_indicator(lo, width):
    hi = lo + abs(width) + 1e-3
    x = Tensor(np.linspace(-5, 5, 41), requires_grad=True)
    ad.backward(ad.sum_(ad.clip(x, lo, hi)))
    inside = (x.data > lo) & (x.data < hi)
    assert np.array_equal(x.grad[inside], np.ones(inside.sum()))
    assert np.all(x.grad[(x.data < lo) | (x.data > hi)] == 0)
