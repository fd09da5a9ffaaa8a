"""Surrogate steganalyzer, classified features and the training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import weights
from .autodiff import Tensor
from .dct import unblockify
from .freq import COVER_SCALE, cover_maps
from .inn import Conv2d, Linear, Module
from .jpeg import AC_LIMIT, JpegImage, quant_tables_for_quality

MAGIC = b"MSTG"
WIDTHS = (16, 32, 64, 128)
FEATURES = 128
TRUNCATE = 2.0  # coefficient magnitude beyond which inputs saturate


class SurrogateNotReady(RuntimeError):
    pass


def coefficient_scale(quality: int, height: int, width: int) -> np.ndarray:
    """(3, H, W) factors mapping cover coarse maps back to quantized-coefficient
    units; the DC plane is masked because block means dwarf everything else."""
    luma, chroma = quant_tables_for_quality(quality)
    q = np.stack([luma.values, chroma.values, chroma.values]).astype(np.float64)
    scale = 1.0 / (q * COVER_SCALE)
    scale[:, 0, 0] = 0.0
    hb, wb = height // 8, width // 8
    return unblockify(np.broadcast_to(scale[:, None, None], (3, hb, wb, 8, 8)))


class Surrogate(Module):
    """Small CNN over (N, 3, H, W) cover-channel coefficient maps.

    Four stages of [3x3 conv, leaky ReLU, stride-2 3x3 conv], global average
    pooling, a 128-unit hidden layer whose activations are the classified
    features, and a 2-way output layer.
    """

    def __init__(self, height: int = 64, width: int = 64, quality: int = 75,
                 seed: int | None = 0, slope: float = 0.2):
        gen = ad.rng(0 if seed is None else seed)
        self.slope = slope
        self.truncate = TRUNCATE
        self.quality = quality
        self.scale = coefficient_scale(quality, height, width)
        self.convs = []
        self.downs = []
        c = 3
        for w in WIDTHS:
            self.convs.append(Conv2d(c, w, 3, gen))
            self.downs.append(Conv2d(w, w, 3, gen, stride=2))
            c = w
        self.hidden = Linear(c, FEATURES, gen)
        self.head = Linear(FEATURES, 2, gen)
        gain = np.sqrt(2.0 / (1.0 + slope ** 2))  # He scaling for leaky ReLU
        for p in self.parameters():
            if p.data.ndim > 1:
                p.data = (p.data * gain).astype(p.data.dtype)
        self.ready = seed is not None
        self.name_parameters()

    def preprocess(self, maps: Tensor) -> Tensor:
        n = maps.shape[0]
        if maps.shape[1:] != self.scale.shape:
            raise ad.ShapeError(f"surrogate built for {self.scale.shape}, got {maps.shape[1:]}")
        scale = Tensor(np.broadcast_to(self.scale, (n,) + self.scale.shape).astype(maps.dtype))
        return ad.clip(maps * scale, -self.truncate, self.truncate)

    def features(self, maps: Tensor) -> Tensor:
        if not self.ready:
            raise SurrogateNotReady("surrogate weights are not initialized or loaded")
        x = self.preprocess(maps)
        for conv, down in zip(self.convs, self.downs):
            x = down(ad.leaky_relu(conv(x), self.slope))
        pooled = ad.mean(x, axis=(2, 3))
        return ad.leaky_relu(self.hidden(pooled), self.slope)

    def logits(self, maps: Tensor) -> Tensor:
        return self.head(self.features(maps))

    def predict(self, maps: np.ndarray, batch: int = 16) -> np.ndarray:
        out = []
        with ad.no_grad():
            for i in range(0, len(maps), batch):
                out.append(self.logits(Tensor(maps[i:i + batch])).data.argmax(-1))
        return np.concatenate(out)

    def save(self, path) -> None:
        weights.save(path, self.state_dict(), MAGIC)

    @classmethod
    def load(cls, path, height: int = 64, width: int = 64, quality: int = 75) -> "Surrogate":
        model = cls(height, width, quality, seed=None)
        model.load_state_dict(weights.load(path, MAGIC))
        model.ready = True
        return model


def classified_features(maps: Tensor, surrogate: Surrogate) -> Tensor:
    return surrogate.features(maps)


# ----------------------------------------------------------------- losses


def mse(a: Tensor, b: Tensor) -> Tensor:
    return ad.mean(ad.square(a - b))


def angle_norm_loss(f_c: Tensor, f_s: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Return (L_a, L_n, L_an) for (N, D) feature batches.

    L_a is the per-sample cosine similarity and L_n the per-sample mean squared
    difference, both averaged over the batch; L_an = -L_a + L_n.
    """
    if f_c.shape != f_s.shape or f_c.ndim != 2:
        raise ad.ShapeError(f"feature batches must both be (N, D), got {f_c.shape} and {f_s.shape}")
    nc = ad.sqrt(ad.sum_(ad.square(f_c), axis=1))
    ns = ad.sqrt(ad.sum_(ad.square(f_s), axis=1))
    if np.any(nc.data == 0) or np.any(ns.data == 0):
        raise ValueError("cosine similarity is undefined for a zero feature vector")
    dot = ad.sum_(f_c * f_s, axis=1)
    l_a = ad.mean(ad.div(dot, nc * ns))
    l_n = ad.mean(ad.mean(ad.square(f_c - f_s), axis=1))
    return l_a, l_n, -l_a + l_n


@dataclass
class LossBreakdown:
    l_hi: Tensor
    l_re: Tensor
    l_a: Tensor
    l_n: Tensor
    l_an: Tensor
    l_total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(v.data) for k, v in vars(self).items()}


def total_loss(cover: Tensor, stego: Tensor, secret: Tensor, revealed: Tensor,
               surrogate: Surrogate) -> LossBreakdown:
    """cover/stego: (N, 3, H, W) coarse cover channels; secret/revealed:
    (N, 3, H, W) normalized pixels."""
    l_hi = mse(cover, stego)
    l_re = mse(secret, revealed)
    f_c = classified_features(cover, surrogate)
    f_s = classified_features(stego, surrogate)
    l_a, l_n, l_an = angle_norm_loss(f_c, f_s)
    return LossBreakdown(l_hi, l_re, l_a, l_n, l_an, l_hi + l_re + l_an)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean two-class (or k-class) softmax cross-entropy."""
    z = logits.data
    shifted = z - z.max(-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return ad._make(np.asarray(loss, dtype=z.dtype), (logits,), bw, "cross_entropy")


# ------------------------------------------------------- stand-in embedding


def standin_stego(cover: JpegImage, rate: float, seed: int) -> JpegImage:
    """Add +-1 to a seeded ``rate`` fraction of the nonzero AC coefficients."""
    if not 0 < rate <= 0.2:
        raise ValueError(f"rate must be in (0, 0.2], got {rate}")
    coef = cover.coef.copy()
    ac = np.ones(coef.shape, dtype=bool)
    ac[..., 0, 0] = False
    candidates = np.flatnonzero((coef != 0) & ac)
    gen = ad.rng(seed)
    count = int(round(rate * len(candidates)))
    chosen = gen.choice(candidates, size=count, replace=False)
    flat = coef.reshape(-1)
    flat[chosen] += gen.choice(np.array([-1, 1], dtype=coef.dtype), size=count)
    np.clip(flat, -AC_LIMIT, AC_LIMIT, out=flat)
    return cover.with_coefficients(coef)


def stack_maps(images: list[JpegImage]) -> np.ndarray:
    return np.stack([cover_maps(im) for im in images])


def detection_accuracy(surrogate: Surrogate, covers: list[JpegImage], stegos: list[JpegImage]) -> float:
    if not covers or not stegos:
        raise ValueError("need at least one cover and one stego")
    pred_c = surrogate.predict(stack_maps(covers).astype(ad.get_dtype()))
    pred_s = surrogate.predict(stack_maps(stegos).astype(ad.get_dtype()))
    correct = np.sum(pred_c == 0) + np.sum(pred_s == 1)
    return float(correct / (len(covers) + len(stegos)))


@dataclass
class PretrainResult:
    surrogate: Surrogate
    accuracy: list[float]  # train accuracy after each epoch
    losses: list[float]  # mean loss per epoch
    best_epoch: int


def pretrain_surrogate(covers: list[JpegImage], stegos: list[JpegImage], epochs: int = 30,
                       lr: float = 5e-4, pairs_per_batch: int = 2, seed: int = 0,
                       target_accuracy: float | None = None, quality: int = 75) -> PretrainResult:
    """Cross-entropy training of a fresh surrogate on covers (label 0) versus
    their stegos (label 1).

    Every mini-batch holds matched cover/stego pairs, the learning rate decays
    linearly to zero, and the weights of the most accurate epoch are kept.
    Training stops early once ``target_accuracy`` is reached. Weights are
    frozen on return.
    """
    from .train import AdamConfig, AdamState, adam_step

    if len(covers) != len(stegos):
        raise ValueError("covers and stegos must be matched pairs")
    if len(covers) < 16:
        raise ValueError("need at least 16 cover/stego pairs")
    xc = stack_maps(covers).astype(ad.get_dtype())
    xs = stack_maps(stegos).astype(ad.get_dtype())
    if np.array_equal(xc, xs):
        raise ValueError("covers and stegos are identical; only one class present")
    x = np.concatenate([xc, xs])
    y = np.concatenate([np.zeros(len(xc), int), np.ones(len(xs), int)])
    n = len(xc)
    model = Surrogate(x.shape[2], x.shape[3], quality, seed=seed)
    params = model.parameters()
    cfg = AdamConfig(lr=lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
    state = AdamState.create(params)
    gen = ad.rng(seed + 1)
    steps_per_epoch = -(-n // pairs_per_batch)
    total_steps = epochs * steps_per_epoch
    accs, losses = [], []
    best, best_state = -1.0, None
    for epoch in range(epochs):
        order = gen.permutation(n)
        run = 0.0
        for b, i in enumerate(range(0, n, pairs_per_batch)):
            idx = order[i:i + pairs_per_batch]
            cfg.lr = lr * (1.0 - (epoch * steps_per_epoch + b) / total_steps)
            model.zero_grad()
            batch = np.concatenate([xc[idx], xs[idx]])
            labels = np.concatenate([np.zeros(len(idx), int), np.ones(len(idx), int)])
            loss = cross_entropy(model.logits(Tensor(batch)), labels)
            ad.backward(loss)
            adam_step(params, state, cfg)
            run += float(loss.data) * len(idx)
        losses.append(run / n)
        accs.append(float(np.mean(model.predict(x) == y)))
        if accs[-1] > best:
            best, best_epoch = accs[-1], epoch
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        if target_accuracy is not None and accs[-1] >= target_accuracy:
            break
    model.load_state_dict(best_state)
    model.freeze()
    return PretrainResult(model, accs, losses, best_epoch)
