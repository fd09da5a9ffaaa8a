"""Fast invariant checks for every module, runnable without pytest."""

from __future__ import annotations

import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _tol(bits: int, loose: float, tight: float) -> float:
    return loose if bits == 32 else tight


def check_gradients(bits: int) -> str:
    from .gradcheck import check
    from .inn import ChannelAttentionConv, DenseBlock

    gen = ad.rng(1)
    x = Tensor(gen.normal(size=(2, 4, 8, 8)))
    w = Tensor(gen.normal(size=(3, 4, 3, 3)))
    worst = max(
        check(lambda a, b: ad.conv2d(a, b), [x, w]),
        check(lambda a: ad.tanh(a) * ad.sigmoid(a), [x]),
        check(lambda a: ad.softmax(a, axis=-1), [x]),
    )
    block = DenseBlock(4, 4, gen, growth=3)
    block.convs[-1].weight.data = gen.normal(size=block.convs[-1].weight.shape).astype(ad.get_dtype())
    worst = max(worst, check(lambda a: block(a), [x]))
    att = ChannelAttentionConv(4, gen)
    worst = max(worst, check(lambda a: att(a), [x]))
    tol = _tol(bits, 1e-3, 1e-6)
    assert worst <= tol, f"relative error {worst:.2e} > {tol}"
    return f"worst rel err {worst:.1e}"


def check_dct(bits: int) -> str:
    from .dct import dct8_forward, dct8_inverse

    blocks = np.random.default_rng(2).normal(size=(200, 8, 8)) * 100
    err = np.abs(dct8_inverse(dct8_forward(blocks)) - blocks).max()
    parseval = abs((dct8_forward(blocks) ** 2).sum() / (blocks ** 2).sum() - 1)
    assert err <= 1e-10 and parseval <= 1e-6, (err, parseval)
    return f"round-trip {err:.1e}"


def check_zigzag(bits: int) -> str:
    from .dct import ZIGZAG

    assert sorted(ZIGZAG.natural_index.tolist()) == list(range(64))
    assert ZIGZAG.natural_index[:6].tolist() == [0, 1, 8, 16, 9, 2]
    return "bijection"


def check_fine_permutation(bits: int) -> str:
    from .freq import ffd, iffd

    x = Tensor(np.random.default_rng(3).normal(size=(2, 6, 16, 24)))
    assert np.array_equal(iffd(ffd(x)).data, x.data)
    return "bitwise identity"


def check_codec(bits: int) -> str:
    from .jpeg import encode, from_pixels, parse

    rgb = np.random.default_rng(4).integers(0, 256, size=(16, 24, 3), dtype=np.uint8)
    img = from_pixels(rgb, 75)
    back = parse(encode(img))
    assert np.array_equal(back.coef, img.coef)
    return "coefficient exact"


def check_couplings(bits: int) -> str:
    from .network import MragConfig, MragModel

    model = MragModel(MragConfig(height=16, width=16, growth=4, seed=5))
    gen = np.random.default_rng(5)
    for p in model.parameters():
        p.data = p.data + gen.normal(scale=0.05, size=p.shape).astype(p.data.dtype)
    x = Tensor(gen.normal(scale=0.3, size=(2, 6, 16, 16)))
    with ad.no_grad():
        err = max(
            np.abs(model.local_branch.inverse(model.local_branch(x)).data - x.data).max(),
            np.abs(model.fusion_inverse(model.fusion_forward(ad.concat([x, x], 1))).data
                   - np.concatenate([x.data, x.data], 1)).max(),
        )
    tol = _tol(bits, 1e-3, 1e-9)
    assert err <= tol, f"round-trip error {err:.2e} > {tol}"
    return f"max err {err:.1e}"


def check_identity_init(bits: int) -> str:
    from .jpeg import from_pixels
    from .network import MragConfig, MragModel, hide, reveal

    gen = np.random.default_rng(6)
    cover = from_pixels(gen.integers(0, 256, size=(16, 16, 3), dtype=np.uint8), 75)
    secret = gen.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    model = MragModel(MragConfig(height=16, width=16, growth=4))
    bundle = hide(cover, secret, model)
    assert np.array_equal(bundle.stego.coef, cover.coef)
    assert np.all(reveal(bundle.stego, model) == 128)
    return "stego == cover"


def check_losses(bits: int) -> str:
    from .losses import angle_norm_loss

    cases = [([[1.0, 0.0]], [[1.0, 0.0]], -1.0), ([[1.0, 0.0]], [[0.0, 1.0]], 1.0),
             ([[1.0, 0.0]], [[2.0, 0.0]], -0.5)]
    for fc, fs, want in cases:
        l_a, l_n, l_an = angle_norm_loss(Tensor(fc), Tensor(fs))
        assert float(l_an.data) == want, (fc, fs, float(l_an.data))
        assert float(l_an.data) == -float(l_a.data) + float(l_n.data)
    return "3 hand cases"


def check_adam(bits: int) -> str:
    from .autodiff import Parameter
    from .train import AdamConfig, AdamState, adam_step

    p = Parameter(np.array([1.0, -2.0, 3.0]))
    p.grad = np.array([0.5, -0.25, 2.0])
    cfg = AdamConfig(lr=0.1, weight_decay=0.0)
    adam_step([p], AdamState.create([p]), cfg)
    step = p.data - np.array([1.0, -2.0, 3.0])
    assert np.allclose(step, -0.1 * np.sign([0.5, -0.25, 2.0]), atol=1e-5)
    return "first step = -lr sign(g)"


def check_metrics(bits: int) -> str:
    from .metrics import apd, psnr, ssim

    a = np.random.default_rng(7).integers(0, 255, size=(16, 16, 3)).astype(np.uint8)
    assert psnr(a, a) == 100.0 and apd(a, a) == 0.0 and abs(ssim(a, a) - 1) < 1e-12
    assert abs(psnr(a, a + 1) - 20 * np.log10(255)) < 1e-9
    return "closed forms"


def check_weights(bits: int) -> str:
    from . import weights

    state = {"a.b": np.arange(6, dtype=np.float32).reshape(2, 3), "c": np.ones(1, np.float32)}
    back = weights.loads(weights.dumps(state, b"MRAG"), b"MRAG")
    assert all(np.array_equal(state[k], back[k]) for k in state)
    return "round-trip"


CHECKS: list[tuple[str, Callable[[int], str]]] = [
    ("autodiff.gradients", check_gradients),
    ("dct.roundtrip", check_dct),
    ("dct.zigzag", check_zigzag),
    ("freq.ffd", check_fine_permutation),
    ("jpeg.roundtrip", check_codec),
    ("inn.invertibility", check_couplings),
    ("network.identity_init", check_identity_init),
    ("losses.angle_norm", check_losses),
    ("train.adam", check_adam),
    ("metrics.closed_forms", check_metrics),
    ("weights.container", check_weights),
]


def run(bits: int = 32) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        with ad.precision(bits):
            try:
                results.append(CheckResult(name, True, fn(bits)))
            except Exception as e:  # report every failure, keep going
                detail = f"{type(e).__name__}: {e}" or traceback.format_exc(limit=1)
                results.append(CheckResult(name, False, detail))
    return results
