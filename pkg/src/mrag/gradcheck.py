"""Central finite-difference comparison against reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


@dataclass
class GradReport:
    error: float  # worst relative error over inputs
    skipped: int  # probes rejected because the interval held a kink

    def __float__(self) -> float:
        return self.error


def check_report(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                 probes: int = 24, seed: int = 0) -> GradReport:
    """Compare backprop with central differences of ``sum(fn(*inputs) * r)``
    for a fixed random ``r`` on up to ``probes`` coordinates per input.

    The analytic gradient is taken at the inputs' own precision. The numeric
    side always runs in 64-bit on the same values (float32 values are exact
    in float64), so 32-bit results are judged against a precise reference
    rather than against float32 roundoff. Each probe is differenced with
    steps ``eps`` and ``eps / 2``; when the two disagree by more than smooth
    behaviour allows, the interval holds a non-differentiable point (a ReLU
    kink, say) and another coordinate is drawn.
    """
    gen = np.random.default_rng(seed)
    out = fn(*inputs)
    r = gen.normal(size=out.shape)
    weights = Tensor(r, dtype=out.dtype)

    for t in inputs:
        t.grad = None
        t.requires_grad = True
    ad.backward(ad.sum_(fn(*inputs) * weights))
    analytic = [np.zeros(t.data.size) if t.grad is None else t.grad.astype(np.float64).reshape(-1)
                for t in inputs]

    wide = [Tensor(t.data.astype(np.float64), dtype=np.float64) for t in inputs]

    def value() -> float:
        return float(np.sum(fn(*wide).data.astype(np.float64) * r))

    def slope(flat: np.ndarray, i: int, h: float) -> float:
        old = flat[i]
        flat[i] = old + h
        up = value()
        flat[i] = old - h
        down = value()
        flat[i] = old
        return (up - down) / (2 * h)

    worst, skipped = 0.0, 0
    with ad.precision(64), ad.no_grad():
        for t, grad in zip(wide, analytic):
            flat = t.data.reshape(-1)
            scale = np.sqrt(np.mean(grad ** 2)) + 1e-12
            want = min(probes, flat.size)
            picked, numeric = [], []
            for i in gen.permutation(flat.size):
                if len(picked) == want:
                    break
                d1 = slope(flat, i, eps)
                d2 = slope(flat, i, eps / 2)
                if abs(d1 - d2) > 0.05 * (abs(d1) + abs(d2)) + 1e-2 * scale and skipped < 4 * probes:
                    skipped += 1
                    continue
                picked.append(i)
                numeric.append(d1)
            worst = max(worst, relative_error(grad[picked], numeric))
    return GradReport(worst, skipped)


def check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
          probes: int = 24, seed: int = 0) -> float:
    """Worst relative error; see :func:`check_report`."""
    return check_report(fn, inputs, eps, probes, seed).error
