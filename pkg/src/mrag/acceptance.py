"""Property runs shared by the acceptance tests and ``scripts/``."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import make_pairs
from .freq import block_dct, ffd, iffd
from .gradcheck import check
from .inn import ChannelAttentionConv, DenseBlock, Sequential, TransformerSubnet
from .losses import (PretrainResult, Surrogate, angle_norm_loss, cross_entropy,
                     pretrain_surrogate, standin_stego)
from .network import MragConfig, MragModel
from .train import MetricsReport, TrainConfig, TrainResult, evaluate, train


def randomize(model, seed: int, scale: float = 0.02) -> None:
    """Add N(0, scale^2) noise to every parameter, zero-initialized layers included.

    The default sits inside the distance Adam at lr 5e-4 can move a weight
    over a desk-scale run; the 32-bit round-trip of a deep fusion stack
    degrades quickly beyond it because clamped scales compound.
    """
    gen = np.random.default_rng(seed)
    for p in model.parameters():
        p.data = (p.data + gen.normal(scale=scale, size=p.shape)).astype(p.data.dtype)


def _max_err(a: Tensor, b: Tensor) -> float:
    return float(np.abs(a.data.astype(np.float64) - b.data.astype(np.float64)).max())


@dataclass
class InvertibilityReport:
    coupling: dict[int, float] = field(default_factory=dict)  # precision -> worst error
    fusion_stack: float = 0.0  # 32-bit
    inputs: int = 0
    seconds: float = 0.0


def invertibility_suite(fusion_layers: int = 3, inputs: int = 1000, draws: int = 10,
                        growth: int = 32, scale: float = 0.02, seed: int = 0) -> InvertibilityReport:
    """Round-trip every coupling of randomized models on random inputs.

    Each of ``draws`` parameter draws sees ``inputs // draws`` inputs per
    coupling: 8x8 coarse maps for the local branch, the two-token fine maps of
    8x16 coarse maps for the global branch and 8x8 twelve-channel maps for the
    fusion couplings. A draw is randomized in 64-bit and then cast, so both
    precisions check the same parameters. Coupling errors are recorded at 32
    and 64 bits, the whole fusion stack at 32 bits.
    """
    report = InvertibilityReport(coupling={64: 0.0, 32: 0.0})
    per_draw = inputs // draws
    start = time.perf_counter()
    for d in range(draws):
        gen = np.random.default_rng(seed + 1000 + d)
        local = gen.normal(size=(per_draw, 6, 8, 8))
        wide = gen.normal(size=(per_draw, 6, 8, 16))
        mixed = gen.normal(size=(per_draw, 12, 8, 8))
        with ad.precision(64):
            model = MragModel(MragConfig(height=8, width=16, growth=growth,
                                         fusion_layers=fusion_layers, seed=seed + d))
            model.cast(np.float64)
            randomize(model, seed + d, scale)
        for bits in (64, 32):
            with ad.precision(bits), ad.no_grad():
                model.cast(ad.get_dtype())
                x6, x12 = Tensor(local), Tensor(mixed)
                worst = 0.0
                for layer, x in [(model.local_branch, x6), (model.global_branch, ffd(Tensor(wide)))]:
                    worst = max(worst, _max_err(layer.inverse(layer(x)), x))
                z = x12
                for mixer, coupling in zip(model.mixers, model.fusion):
                    z_in = mixer(z)
                    z = coupling(z_in)
                    worst = max(worst, _max_err(coupling.inverse(z), z_in))
                report.coupling[bits] = max(report.coupling[bits], worst)
                if bits == 32:
                    report.fusion_stack = max(report.fusion_stack, _max_err(model.fusion_inverse(z), x12))
                    report.inputs += per_draw
    report.seconds = time.perf_counter() - start
    return report


# ------------------------------------------------------------ gradient cases


def _op_cases() -> dict[str, tuple]:
    """Every differentiable primitive: name -> (fn, input shapes)."""
    return {
        "add": (lambda a, b: a + b, [(3, 4), (3, 4)]),
        "add_scalar": (lambda a: a + 2.0, [(3, 4)]),
        "sub": (lambda a, b: a - b, [(3, 4), (3, 4)]),
        "mul": (lambda a, b: a * b, [(3, 4), (3, 4)]),
        "mul_scalar": (lambda a: a * 0.3, [(3, 4)]),
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
        "block_dct": (lambda a: block_dct(a, inverse=True), [(1, 2, 8, 16)]),
        "ffd": (lambda a: ffd(a), [(1, 6, 8, 16)]),
        "iffd": (lambda a: iffd(a * 1.5), [(1, 384, 1, 2)]),
        "cross_entropy": (lambda a: cross_entropy(a, np.array([0, 1, 1])), [(3, 2)]),
        "angle_norm_loss": (lambda a, b: angle_norm_loss(a, b)[2], [(3, 6), (3, 6)]),
    }


def _subnet_cases(seed: int = 0) -> dict[str, tuple]:
    """Each full subnet and network map at small size: name -> (fn, input shapes)."""
    gen = ad.rng(seed)
    dense = DenseBlock(4, 4, gen, growth=3)
    attention = Sequential(ChannelAttentionConv(4, gen), DenseBlock(4, 4, gen, growth=3))
    transformer = TransformerSubnet(8, 4, gen, heads=2)
    model = MragModel(MragConfig(height=8, width=16, growth=3, fusion_layers=1, seed=seed))
    surrogate = Surrogate(16, 16, seed=seed)
    for i, m in enumerate((dense, attention, transformer, model)):
        randomize(m, seed + i, 0.1)
    return {
        "dense_block_subnet": (lambda a: dense(a), [(2, 4, 4, 4)]),
        "attention_dense_subnet": (lambda a: attention(a), [(2, 4, 4, 4)]),
        "transformer_subnet": (lambda a: transformer(a), [(2, 8, 2, 2)]),
        "local_coupling": (lambda a: model.local_branch(a), [(1, 6, 8, 16)]),
        "local_coupling_inverse": (lambda a: model.local_branch.inverse(a), [(1, 6, 8, 16)]),
        "global_coupling": (lambda a: model.global_branch(a), [(1, 384, 1, 2)]),
        "fusion_stack": (lambda a: model.fusion_forward(a), [(1, 12, 8, 8)]),
        "forward_maps": (lambda a: model.forward_maps(a), [(1, 6, 8, 16)]),
        "backward_maps": (lambda a, b: model.backward_maps(a, b), [(1, 3, 8, 16), (1, 9, 8, 16)]),
        "surrogate_features": (lambda a: surrogate.features(a * 0.05), [(2, 3, 16, 16)]),
    }


GRADIENT_TOLERANCE = {32: 1e-3, 64: 1e-6}


def gradient_suite(bits: int, seed: int = 0, probes: int = 16) -> dict[str, float]:
    """Worst relative gradient error of every case at the given precision."""
    out = {}
    with ad.precision(bits):
        cases = {**_op_cases(), **_subnet_cases(seed)}
        for i, (name, (fn, shapes)) in enumerate(cases.items()):
            gen = np.random.default_rng(seed + i)
            inputs = [Tensor(gen.normal(size=s)) for s in shapes]
            out[name] = check(fn, inputs, probes=probes, seed=seed + i)
    return out


# ----------------------------------------------------------- desk-scale run


@dataclass
class DeskRun:
    pretrain: PretrainResult
    training: TrainResult
    report: MetricsReport
    standins: list
    pretrain_seconds: float
    eval_seconds: float

    def loss_ratio(self) -> tuple[float, float]:
        """(median of the first 50 L_total, median of the last 50)."""
        totals = self.training.totals()
        return float(np.median(totals[:50])), float(np.median(totals[-50:]))

    def summary(self) -> dict:
        first, last = self.loss_ratio()
        return {
            "surrogate_accuracy": self.pretrain.accuracy[self.pretrain.best_epoch],
            "surrogate_epochs": len(self.pretrain.accuracy),
            "median_l_total_first50": first,
            "median_l_total_last50": last,
            **self.report.summary(),
            "pretrain_seconds": self.pretrain_seconds,
            "train_seconds": self.training.seconds,
            "eval_seconds": self.eval_seconds,
        }


def desk_run(pairs=32, size: int = 64, quality: int = 75, steps: int = 500, seed: int = 0,
             growth: int = 32, standin_rate: float = 0.1, surrogate_epochs: int = 30,
             on_step=None) -> DeskRun:
    """Pretrain the surrogate on +-1 stand-in stegos, train MRAG against it and
    evaluate on the training pairs."""
    pairs = make_pairs(pairs, size, quality, seed)
    covers = [p.cover for p in pairs]
    standins = [standin_stego(c, standin_rate, seed + i) for i, c in enumerate(covers)]
    with ad.precision(32):
        t = time.perf_counter()
        pre = pretrain_surrogate(covers, standins, surrogate_epochs, seed=seed,
                                 target_accuracy=0.95, quality=quality)
        pretrain_seconds = time.perf_counter() - t
        model = MragModel(MragConfig(height=size, width=size, growth=growth, seed=seed))
        result = train(model, pre.surrogate, pairs, TrainConfig(steps=steps, seed=seed), on_step)
        t = time.perf_counter()
        report = evaluate(model, pairs, pre.surrogate, standins)
        report.loss_log = result.log
    return DeskRun(pre, result, report, standins, pretrain_seconds, time.perf_counter() - t)
