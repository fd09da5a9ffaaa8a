"""Coarse (CFD) and fine (FFD / IFFD) frequency decompositions.

Coarse maps are (N, 6, H, W): channels Y, Cb, Cr carry the cover's dequantized
coefficients scaled by 1/1024, channels R, G, B carry the secret's block DCT
of pixels normalized to [-0.5, 0.5]. Every coefficient sits at its
within-block position. Fine maps are (N, 384, H/8, W/8) with channel
``zigzag_rank * 6 + coarse_channel``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .dct import DCT8, ZIGZAG, blockify, dct8_forward, dct8_inverse, round_half_away, unblockify
from .jpeg import AC_LIMIT, DC_RANGE, JpegImage

COVER_SCALE = 1.0 / 1024.0
FINE_CHANNELS = 64 * 6


def normalize_secret(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) in [-0.5, 0.5]."""
    return (np.moveaxis(np.asarray(rgb, dtype=np.float64), -1, 0) - 127.5) / 255.0


def denormalize_secret(x: np.ndarray) -> np.ndarray:
    """(3, H, W) normalized -> (H, W, 3) uint8, rounded half away from zero."""
    px = round_half_away(np.moveaxis(np.asarray(x, dtype=np.float64), 0, -1) * 255.0 + 127.5)
    return np.clip(px, 0, 255).astype(np.uint8)


def cover_maps(cover: JpegImage) -> np.ndarray:
    """(3, H, W) dequantized, scaled coefficients of a JPEG cover."""
    deq = cover.coef.astype(np.float64) * cover.quant_stack()[:, None, None]
    return unblockify(deq) * COVER_SCALE


def secret_maps(secret: np.ndarray) -> np.ndarray:
    return unblockify(dct8_forward(blockify(normalize_secret(secret))))


def cfd(cover: JpegImage, secret: np.ndarray) -> np.ndarray:
    """Coarse maps (6, H, W) for one cover/secret pair."""
    secret = np.asarray(secret)
    if secret.shape != (cover.height, cover.width, 3):
        raise ShapeError(
            f"secret is {secret.shape[:2]} but cover is {(cover.height, cover.width)}")
    return np.concatenate([cover_maps(cover), secret_maps(secret)], axis=0)


def inverse_cfd_cover(channels: np.ndarray, template: JpegImage) -> JpegImage:
    """Requantize (3, H, W) coarse cover channels into a JpegImage.

    Tables and Huffman settings come from ``template``; coefficients are
    rounded half away from zero and clamped to the baseline-encodable range.
    """
    channels = np.asarray(channels, dtype=np.float64)
    if channels.shape != (3, template.height, template.width):
        raise ShapeError(f"expected (3, {template.height}, {template.width}), got {channels.shape}")
    q = template.quant_stack()[:, None, None].astype(np.float64)
    coef = round_half_away(blockify(channels / COVER_SCALE) / q)
    coef = np.clip(coef, -AC_LIMIT, AC_LIMIT)
    coef[..., 0, 0] = np.clip(coef[..., 0, 0], *DC_RANGE)
    return template.with_coefficients(coef.astype(np.int32))


def inverse_cfd_secret(channels: np.ndarray) -> np.ndarray:
    """(3, H, W) secret DCT channels -> (H, W, 3) uint8 image."""
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim != 3 or channels.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W), got {channels.shape}")
    return denormalize_secret(unblockify(dct8_inverse(blockify(channels))))


# ------------------------------------------------------------ differentiable ops


def block_dct(x: Tensor, inverse: bool = False) -> Tensor:
    """Per-8x8-block orthonormal DCT over the last two axes of (N, C, H, W)."""
    n, c, h, w = x.shape
    if h % 8 or w % 8:
        raise ShapeError(f"spatial size {(h, w)} is not a multiple of 8")
    d = DCT8.astype(x.dtype)
    fwd, bwd = (d.T, d) if inverse else (d, d.T)

    def apply(arr, m):
        b = arr.reshape(n, c, h // 8, 8, w // 8, 8)
        b = np.einsum("ij,ncyjxk,lk->ncyixl", m, b, m, optimize=True)
        return b.reshape(n, c, h, w)

    out = apply(x.data, fwd)
    # orthonormal: the adjoint of the transform is its inverse
    return ad._make(out, (x,), lambda g: (apply(g, bwd),), "block_dct")


def _fine_permutation(h: int, w: int) -> np.ndarray:
    """Flat index map: fine[j] = coarse[perm[j]] for one sample."""
    hb, wb = h // 8, w // 8
    c, by, u, bx, v = np.meshgrid(np.arange(6), np.arange(hb), np.arange(8), np.arange(wb),
                                  np.arange(8), indexing="ij")
    coarse_flat = ((c * h + 8 * by + u) * w + 8 * bx + v)
    z = ZIGZAG.ranks[u, v]
    fine_flat = ((z * 6 + c) * hb + by) * wb + bx
    perm = np.empty(6 * h * w, dtype=np.int64)
    perm[fine_flat.ravel()] = coarse_flat.ravel()
    return perm


_PERM_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _perms(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    if (h, w) not in _PERM_CACHE:
        p = _fine_permutation(h, w)
        _PERM_CACHE[(h, w)] = (p, np.argsort(p))
    return _PERM_CACHE[(h, w)]


def ffd(x: Tensor) -> Tensor:
    """(N, 6, H, W) coarse -> (N, 384, H/8, W/8) fine; a pure index permutation."""
    n, c, h, w = x.shape
    if c != 6 or h % 8 or w % 8:
        raise ShapeError(f"ffd expects (N, 6, 8k, 8m), got {x.shape}")
    perm, _ = _perms(h, w)
    flat = ad.reshape(x, (n, 6 * h * w))
    return ad.reshape(ad.take(flat, perm, axis=1), (n, FINE_CHANNELS, h // 8, w // 8))


def iffd(y: Tensor) -> Tensor:
    """Exact inverse of :func:`ffd`."""
    n, c, hb, wb = y.shape
    if c != FINE_CHANNELS:
        raise ShapeError(f"iffd expects (N, 384, h, w), got {y.shape}")
    _, inv = _perms(hb * 8, wb * 8)
    flat = ad.reshape(y, (n, c * hb * wb))
    return ad.reshape(ad.take(flat, inv, axis=1), (n, 6, hb * 8, wb * 8))


def coarse_batch(covers: list[JpegImage], secrets: list[np.ndarray]) -> np.ndarray:
    return np.stack([cfd(c, s) for c, s in zip(covers, secrets)])
