"""Adam, the MRAG training loop and evaluation on cover/secret pairs."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import Pair
from .freq import block_dct, cfd, normalize_secret
from .jpeg import decode_pixels, encode, parse
from .losses import LossBreakdown, Surrogate, detection_accuracy, total_loss
from .metrics import apd, psnr, ssim
from .network import STEGO_CHANNELS, MragModel, hide, reveal


class TrainingError(FloatingPointError):
    pass


# ------------------------------------------------------------------- adam


@dataclass
class AdamConfig:
    lr: float = 5e-4
    betas: tuple[float, float] = (0.5, 0.999)
    eps: float = 1e-6
    weight_decay: float = 5e-4


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def create(cls, params: list[Parameter]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: list[Parameter], state: AdamState, cfg: AdamConfig) -> None:
    """One Adam update with weight decay folded into the gradient.

    Parameters without a gradient are treated as having a zero gradient.
    """
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p, g in zip(params, grads):
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {p.name or 'parameter'}; step aborted")
    b1, b2 = cfg.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g + cfg.weight_decay * p.data if cfg.weight_decay else g
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = (p.data - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)


# ------------------------------------------------------------------ train


@dataclass
class TrainConfig:
    lr: float = 5e-4
    betas: tuple[float, float] = (0.5, 0.999)
    eps: float = 1e-6
    weight_decay: float = 5e-4
    batch_size: int = 4
    steps: int = 500
    seed: int = 0
    precision: int = 32

    def adam(self) -> AdamConfig:
        return AdamConfig(self.lr, tuple(self.betas), self.eps, self.weight_decay)


@dataclass
class TrainResult:
    model: MragModel
    log: list[dict[str, float]]
    seconds: float

    def totals(self) -> np.ndarray:
        return np.array([row["l_total"] for row in self.log])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps({"seconds": self.seconds, "log": self.log}, indent=1))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(self.log[0]))
            writer.writeheader()
            writer.writerows(self.log)


def batch_arrays(pairs: list[Pair], dtype) -> tuple[np.ndarray, np.ndarray]:
    """Coarse maps (N, 6, H, W) and normalized secrets (N, 3, H, W)."""
    coarse = np.stack([cfd(p.cover, p.secret) for p in pairs]).astype(dtype)
    secrets = np.stack([normalize_secret(p.secret) for p in pairs]).astype(dtype)
    return coarse, secrets


def loss_on_batch(model: MragModel, surrogate: Surrogate, coarse: np.ndarray,
                  secrets: np.ndarray) -> LossBreakdown:
    x = Tensor(coarse)
    y = model.forward_maps(x)
    stego, residual = ad.split(y, [STEGO_CHANNELS, 12 - STEGO_CHANNELS], axis=1)
    x_hat = model.backward_maps(stego, Tensor(np.zeros(residual.shape, dtype=coarse.dtype)))
    _, secret_dct = ad.split(x_hat, [3, 3], axis=1)
    revealed = block_dct(secret_dct, inverse=True)
    cover = Tensor(coarse[:, :STEGO_CHANNELS])
    return total_loss(cover, stego, Tensor(secrets), revealed, surrogate)


def train(model: MragModel, surrogate: Surrogate, pairs: list[Pair], config: TrainConfig,
          on_step: Callable[[int, dict[str, float]], None] | None = None) -> TrainResult:
    """Adam on L_total over seeded mini-batches; the surrogate must be frozen."""
    if len(pairs) < 8:
        raise ValueError("training needs at least 8 pairs")
    if any(p.requires_grad for p in surrogate.parameters()):
        raise ValueError("surrogate must be frozen before training")
    dtype = np.float32 if config.precision == 32 else np.float64
    coarse, secrets = batch_arrays(pairs, dtype)
    params = model.parameters()
    for p in params:
        p.data = p.data.astype(dtype)
    state = AdamState.create(params)
    adam = config.adam()
    gen = ad.rng(config.seed)
    order: list[int] = []
    log = []
    start = time.perf_counter()
    with ad.precision(config.precision):
        for step in range(config.steps):
            if len(order) < config.batch_size:
                order.extend(gen.permutation(len(pairs)).tolist())
            idx, order = order[: config.batch_size], order[config.batch_size:]
            model.zero_grad()
            try:
                parts = loss_on_batch(model, surrogate, coarse[idx], secrets[idx])
            except ad.NonFiniteError as e:
                raise TrainingError(f"step {step}: {e}") from None
            row = {"step": step, **parts.values()}
            if not np.isfinite(row["l_total"]):
                raise TrainingError(f"step {step}: non-finite loss {row}")
            ad.backward(parts.l_total)
            adam_step(params, state, adam)
            log.append(row)
            if on_step is not None:
                on_step(step, row)
    return TrainResult(model, log, time.perf_counter() - start)


# --------------------------------------------------------------- evaluate


@dataclass
class PairMetrics:
    stego_psnr: float
    stego_ssim: float
    stego_apd: float
    secret_psnr: float
    secret_ssim: float
    secret_apd: float


@dataclass
class MetricsReport:
    pairs: list[PairMetrics]
    loss_log: list[dict[str, float]] = field(default_factory=list)
    detection_standin: float | None = None
    detection_mrag: float | None = None

    def mean(self, key: str) -> float:
        return float(np.mean([getattr(p, key) for p in self.pairs]))

    def summary(self) -> dict[str, float | None]:
        out = {k: self.mean(k) for k in PairMetrics.__dataclass_fields__}
        out["detection_standin"] = self.detection_standin
        out["detection_mrag"] = self.detection_mrag
        return out

    def to_json(self) -> str:
        return json.dumps({"summary": self.summary(), "pairs": [asdict(p) for p in self.pairs]}, indent=1)


def evaluate(model: MragModel, pairs: list[Pair], surrogate: Surrogate | None = None,
             standins: list | None = None) -> MetricsReport:
    """Hide every pair, export and re-parse the stego JPEG, reveal with a zero
    residual, and score both images in 8-bit pixels."""
    rows, stegos = [], []
    for p in pairs:
        stego = parse(encode(hide(p.cover, p.secret, model).stego))
        stegos.append(stego)
        cover_px, stego_px = decode_pixels(p.cover), decode_pixels(stego)
        revealed = reveal(stego, model)
        rows.append(PairMetrics(
            psnr(cover_px, stego_px), ssim(cover_px, stego_px), apd(cover_px, stego_px),
            psnr(p.secret, revealed), ssim(p.secret, revealed), apd(p.secret, revealed)))
    report = MetricsReport(rows)
    if surrogate is not None:
        covers = [p.cover for p in pairs]
        report.detection_mrag = detection_accuracy(surrogate, covers, stegos)
        if standins:
            report.detection_standin = detection_accuracy(surrogate, covers, standins)
    return report
