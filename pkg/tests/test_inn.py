import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrag import autodiff as ad
from mrag.autodiff import Tensor
from mrag.gradcheck import check
from mrag.inn import (AffineCoupling, ChannelAttentionConv, DenseBlock, InvertibleConv1x1,
                      Sequential, TransformerBlock, TransformerSubnet)
from mrag.train import AdamConfig, AdamState, adam_step

TOL = {32: 1e-3, 64: 1e-6}


def perturb(module, seed, scale=0.1):
    gen = np.random.default_rng(seed)
    for p in module.parameters():
        p.data = (p.data + gen.normal(scale=scale, size=p.shape)).astype(p.data.dtype)


def dense_coupling(seed, channels=6, growth=4):
    gen = ad.rng(seed)
    return AffineCoupling(channels, lambda c: DenseBlock(c, c, gen, growth))


def test_zero_init_subnets_are_identity():
    layer = dense_coupling(0)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 6, 8, 8)))
    assert np.array_equal(layer(x).data, x.data)
    sub = TransformerSubnet(8, 4, ad.rng(0))
    assert np.all(sub(Tensor(np.ones((1, 8, 2, 2)))).data == 0)


def test_scale_is_bounded():
    layer = dense_coupling(1)
    perturb(layer, 1, scale=3.0)
    x = Tensor(np.random.default_rng(1).normal(size=(1, 6, 8, 8)) * 50)
    u_o = layer(x)
    s = layer.scale(ad.split(u_o, [3, 3], axis=1)[0]).data
    assert np.abs(s).max() <= layer.clamp


@pytest.mark.parametrize("bits,tol", [(32, 1e-3), (64, 1e-9)])
def test_dense_coupling_roundtrip(bits, tol):
    with ad.precision(bits):
        layer = dense_coupling(2)
        perturb(layer, 2)
        x = Tensor(np.random.default_rng(2).normal(size=(4, 6, 8, 8)))
        assert np.abs(layer.inverse(layer(x)).data - x.data).max() <= tol
        assert np.abs(layer(layer.inverse(x)).data - x.data).max() <= tol


@pytest.mark.parametrize("bits,tol", [(32, 1e-3), (64, 1e-9)])
def test_transformer_coupling_roundtrip(bits, tol):
    with ad.precision(bits):
        gen = ad.rng(3)
        layer = AffineCoupling(32, lambda c: TransformerSubnet(c, 4, gen, heads=4))
        perturb(layer, 3, scale=0.05)
        x = Tensor(np.random.default_rng(3).normal(size=(2, 32, 2, 2)))
        assert np.abs(layer.inverse(layer(x)).data - x.data).max() <= tol


def test_odd_channels_rejected():
    with pytest.raises(ad.ShapeError):
        dense_coupling(0, channels=5)


def test_orthogonal_mixer_inverse_is_transpose():
    mixer = InvertibleConv1x1(12, ad.rng(4), "orthogonal")
    w = mixer.weight.data.astype(np.float64)
    assert np.allclose(np.linalg.inv(w), w.T, atol=1e-5)
    x = Tensor(np.random.default_rng(4).normal(size=(2, 12, 4, 4)))
    assert np.abs(mixer.inverse(mixer(x)).data - x.data).max() <= 1e-5


def test_mixer_roundtrip_after_training():
    mixer = InvertibleConv1x1(12, ad.rng(5), "orthogonal")
    params = mixer.parameters()
    state, cfg = AdamState.create(params), AdamConfig()
    gen = np.random.default_rng(5)
    target = Tensor(gen.normal(size=(2, 12, 4, 4)))
    for _ in range(100):
        mixer.zero_grad()
        x = Tensor(gen.normal(size=(2, 12, 4, 4)))
        ad.backward(ad.mean(ad.square(mixer(x) - target)))
        adam_step(params, state, cfg)
    x = Tensor(gen.normal(size=(2, 12, 4, 4)))
    assert np.abs(mixer.inverse(mixer(x)).data - x.data).max() <= 1e-3


def test_degenerate_mixer_rejected():
    mixer = InvertibleConv1x1(4, ad.rng(0))
    mixer.weight.data[:] = 0
    with pytest.raises(FloatingPointError):
        mixer(Tensor(np.ones((1, 4, 2, 2))))


def test_transformer_block_residual_path():
    block = TransformerBlock(8, 4, ad.rng(6))
    block.proj.weight.data[:] = 0
    block.fc2.weight.data[:] = 0
    x = Tensor(np.random.default_rng(6).normal(size=(1, 8, 2, 2)))
    assert np.allclose(block(x).data, x.data)
    assert np.allclose(block.last_attention.sum(-1), 1.0, atol=1e-6)


def test_attention_gate_range():
    att = ChannelAttentionConv(8, ad.rng(7))
    g = att.gate(Tensor(np.random.default_rng(7).normal(size=(3, 8, 4, 4)) * 10)).data
    assert g.shape == (3, 8) and np.all((g > 0) & (g < 1))


@pytest.mark.parametrize("bits", [32, 64])
def test_subnet_gradients(bits):
    with ad.precision(bits):
        gen = ad.rng(8)
        x = Tensor(np.random.default_rng(8).normal(size=(2, 4, 4, 4)))
        dense = DenseBlock(4, 4, gen, growth=3)
        attention = Sequential(ChannelAttentionConv(4, gen), DenseBlock(4, 4, gen, growth=3))
        transformer = TransformerSubnet(4, 16, gen, heads=2)
        for m in (dense, attention, transformer):
            perturb(m, 8, scale=0.3)
            assert check(lambda a: m(a), [x]) <= TOL[bits]
        rest = dense.convs[1:]

        def with_first_weight(a, wt):
            return ad.dense_block(a, [wt] + [c.weight for c in rest],
                                  [c.bias for c in dense.convs], dense.slope)

        assert check(with_first_weight, [x, Tensor(dense.convs[0].weight.data)]) <= TOL[bits]


@pytest.mark.parametrize("bits", [32, 64])
def test_coupling_gradients(bits):
    with ad.precision(bits):
        layer = dense_coupling(9, growth=3)
        perturb(layer, 9, scale=0.3)
        x = Tensor(np.random.default_rng(9).normal(size=(1, 6, 8, 8)))
        assert check(lambda a: layer(a), [x]) <= TOL[bits]
        assert check(lambda a: layer.inverse(a), [x]) <= TOL[bits]


@given(st.integers(0, 2**32 - 1))
def test_coupling_roundtrip_property(seed):
    with ad.precision(64):
        layer = dense_coupling(seed % 1000, growth=2)
        perturb(layer, seed % 997, scale=0.2)
        x = Tensor(np.random.default_rng(seed).normal(size=(1, 6, 8, 8)) * 2)
        assert np.abs(layer.inverse(layer(x)).data - x.data).max() <= 1e-9
