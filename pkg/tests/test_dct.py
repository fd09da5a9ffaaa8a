import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrag.dct import (DCT8, ZIGZAG, blockify, dct8_forward, dct8_inverse, round_half_away,
                      unblockify)


def naive_dct(block):
    """Direct double sum with C(0) = 1/sqrt(2)."""
    out = np.zeros((8, 8))
    c = lambda k: 1 / np.sqrt(2) if k == 0 else 1.0
    for u in range(8):
        for v in range(8):
            s = sum(block[x, y] * np.cos((2 * x + 1) * u * np.pi / 16) * np.cos((2 * y + 1) * v * np.pi / 16)
                    for x in range(8) for y in range(8))
            out[u, v] = 0.25 * c(u) * c(v) * s
    return out


def walked_zigzag():
    """Zigzag order by walking anti-diagonals, alternating direction."""
    order = []
    for s in range(15):
        cells = [(i, s - i) for i in range(8) if 0 <= s - i < 8]
        order.extend(cells if s % 2 else cells[::-1])
    return [8 * u + v for u, v in order]


def test_matrix_is_orthonormal():
    assert np.allclose(DCT8 @ DCT8.T, np.eye(8), atol=1e-15)


def test_forward_matches_double_sum():
    block = np.random.default_rng(0).normal(size=(8, 8)) * 50
    assert np.allclose(dct8_forward(block), naive_dct(block), atol=1e-10)


def test_dc_of_constant_block():
    assert np.isclose(dct8_forward(np.full((8, 8), 10.0))[0, 0], 80.0)


def test_zigzag_matches_walk():
    assert ZIGZAG.natural_index.tolist() == walked_zigzag()
    assert ZIGZAG.rank(7, 7) == 63 and ZIGZAG.rank(0, 1) == 1 and ZIGZAG.rank(1, 0) == 2


@given(arrays(np.float64, (3, 8, 8), elements=st.floats(-1024, 1024)))
def test_roundtrip_property(blocks):
    assert np.abs(dct8_inverse(dct8_forward(blocks)) - blocks).max() <= 1e-10


@given(st.integers(1, 4), st.integers(1, 4))
def test_blockify_inverse(hb, wb):
    plane = np.arange(2 * 8 * hb * 8 * wb).reshape(2, 8 * hb, 8 * wb)
    blocks = blockify(plane)
    assert blocks.shape == (2, hb, wb, 8, 8)
    assert np.array_equal(blocks[1, hb - 1, 0], plane[1, 8 * (hb - 1):, :8])
    assert np.array_equal(unblockify(blocks), plane)


def test_round_half_away():
    assert round_half_away(np.array([-2.5, -0.5, 0.5, 1.5, 2.4])).tolist() == [-3, -1, 1, 2, 2]
