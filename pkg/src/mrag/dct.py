"""8x8 orthonormal DCT-II and the JPEG zigzag traversal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ZigzagPerm:
    """Bijection between 8x8 frequency positions and scan ranks 0..63."""

    positions: tuple[tuple[int, int], ...]  # rank -> (u, v)

    @property
    def ranks(self) -> np.ndarray:
        """(8, 8) array: ranks[u, v] is the scan rank of (u, v)."""
        r = np.empty((8, 8), dtype=np.int64)
        for k, (u, v) in enumerate(self.positions):
            r[u, v] = k
        return r

    @property
    def natural_index(self) -> np.ndarray:
        """natural_index[k] = 8*u + v for the position at rank k."""
        return np.array([8 * u + v for u, v in self.positions], dtype=np.int64)

    def rank(self, u: int, v: int) -> int:
        return self.positions.index((u, v))


def zigzag_order() -> ZigzagPerm:
    # walk anti-diagonals u+v = s, alternating direction
    out = []
    for s in range(15):
        diag = [(u, s - u) for u in range(8) if 0 <= s - u < 8]
        if s % 2 == 0:
            diag.reverse()  # even diagonals run bottom-left -> top-right
        out.extend(diag)
    return ZigzagPerm(tuple(out))


def dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos((2 * i + 1) * k * np.pi / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


DCT8 = dct_matrix(8)
ZIGZAG = zigzag_order()


def dct8_forward(block: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the trailing two (8, 8) axes."""
    d = DCT8.astype(np.result_type(block, np.float32), copy=False)
    return d @ block @ d.T


def dct8_inverse(coef: np.ndarray) -> np.ndarray:
    d = DCT8.astype(np.result_type(coef, np.float32), copy=False)
    return d.T @ coef @ d


def blockify(plane: np.ndarray) -> np.ndarray:
    """(..., H, W) -> (..., H/8, W/8, 8, 8)."""
    *lead, h, w = plane.shape
    x = plane.reshape(*lead, h // 8, 8, w // 8, 8)
    return np.swapaxes(x, -3, -2)


def unblockify(blocks: np.ndarray) -> np.ndarray:
    """(..., H/8, W/8, 8, 8) -> (..., H, W)."""
    *lead, hb, wb, _, _ = blocks.shape
    return np.swapaxes(blocks, -3, -2).reshape(*lead, hb * 8, wb * 8)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
