"""Forward hiding and backward revealing through the local branch, the global
branch and the fusion stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import weights
from .autodiff import ShapeError, Tensor
from .freq import cfd, cover_maps, ffd, iffd, inverse_cfd_cover, inverse_cfd_secret
from .inn import (AffineCoupling, ChannelAttentionConv, DenseBlock, InvertibleConv1x1, Module,
                  Sequential, TransformerSubnet)
from .jpeg import JpegImage, encode

MAGIC = b"MRAG"
STEGO_CHANNELS = 3


@dataclass
class MragConfig:
    height: int = 64
    width: int = 64
    fusion_layers: int = 3
    growth: int = 32
    heads: int = 4
    mlp_ratio: int = 2
    clamp: float = 2.0
    mixer_init: str = "identity"
    seed: int = 0


class MragModel(Module):
    def __init__(self, config: MragConfig | None = None):
        cfg = config or MragConfig()
        if cfg.height % 8 or cfg.width % 8:
            raise ShapeError("image size must be a multiple of 8")
        if cfg.fusion_layers < 1:
            raise ValueError("need at least one fusion coupling layer")
        self.config = cfg
        gen = ad.rng(cfg.seed)
        tokens = (cfg.height // 8) * (cfg.width // 8)

        def dense(c):
            return DenseBlock(c, c, gen, cfg.growth)

        def attention_dense(c):
            return Sequential(ChannelAttentionConv(c, gen), DenseBlock(c, c, gen, cfg.growth))

        def transformer(c):
            return TransformerSubnet(c, tokens, gen, cfg.heads, cfg.mlp_ratio)

        self.local_branch = AffineCoupling(6, dense, cfg.clamp)
        self.global_branch = AffineCoupling(384, transformer, cfg.clamp)
        self.mixers = [InvertibleConv1x1(12, gen, cfg.mixer_init) for _ in range(cfg.fusion_layers)]
        self.fusion = [AffineCoupling(12, attention_dense, cfg.clamp) for _ in range(cfg.fusion_layers)]
        self.name_parameters()

    # ------------------------------------------------------------- maps

    def fusion_forward(self, z: Tensor) -> Tensor:
        for mixer, coupling in zip(self.mixers, self.fusion):
            z = coupling(mixer(z))
        return z

    def fusion_inverse(self, y: Tensor) -> Tensor:
        for mixer, coupling in zip(reversed(self.mixers), reversed(self.fusion)):
            y = mixer.inverse(coupling.inverse(y))
        return y

    def forward_maps(self, x: Tensor) -> Tensor:
        """(N, 6, H, W) coarse maps -> (N, 12, H, W) fused output."""
        if x.ndim != 4 or x.shape[1] != 6:
            raise ShapeError(f"expected (N, 6, H, W) coarse maps, got {x.shape}")
        local = self.local_branch(x)
        glob = iffd(self.global_branch(ffd(x)))
        return self.fusion_forward(ad.concat([local, glob], axis=1))

    def branch_preimages(self, stego: Tensor, residual: Tensor) -> tuple[Tensor, Tensor]:
        if stego.shape[1] != STEGO_CHANNELS or residual.shape[1] != 12 - STEGO_CHANNELS:
            raise ShapeError(f"expected 3 stego + 9 residual channels, got {stego.shape[1]} + {residual.shape[1]}")
        z = self.fusion_inverse(ad.concat([stego, residual], axis=1))
        l_part, g_part = ad.split(z, [6, 6], axis=1)
        x_local = self.local_branch.inverse(l_part)
        x_global = iffd(self.global_branch.inverse(ffd(g_part)))
        return x_local, x_global

    def backward_maps(self, stego: Tensor, residual: Tensor) -> Tensor:
        """Average of the two branch pre-images of (stego, residual)."""
        x_local, x_global = self.branch_preimages(stego, residual)
        return (x_local + x_global) * 0.5

    @property
    def dtype(self):
        return self.mixers[0].weight.data.dtype

    def cast(self, dtype) -> "MragModel":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    # ------------------------------------------------------------- io

    def save(self, path) -> None:
        weights.save(path, self.state_dict(), MAGIC)

    @classmethod
    def load(cls, path, config: MragConfig | None = None) -> "MragModel":
        state = weights.load(path, MAGIC)
        model = cls(config or infer_config(state))
        model.load_state_dict(state)
        return model


def infer_config(state: dict[str, np.ndarray]) -> MragConfig:
    """Recover architecture sizes from parameter shapes (square images assumed)."""
    tokens = state["global_branch.phi.block.pos"].shape[0]
    side = int(round(np.sqrt(tokens)))
    if side * side != tokens:
        raise ShapeError("cannot infer a non-square image size; pass a config")
    fusion = sum(1 for k in state if k.startswith("mixers.") and k.endswith(".weight"))
    growth = state["local_branch.phi.convs.0.weight"].shape[0]
    return MragConfig(height=8 * side, width=8 * side, fusion_layers=fusion, growth=growth)


@dataclass
class StegoBundle:
    stego: JpegImage
    residual: np.ndarray  # (9, H, W) before zeroing
    stego_coarse: np.ndarray  # (3, H, W) real-valued, before rounding

    def to_bytes(self) -> bytes:
        return encode(self.stego)


def hide(cover: JpegImage, secret: np.ndarray, model: MragModel) -> StegoBundle:
    with ad.no_grad():
        x = Tensor(cfd(cover, secret)[None], dtype=model.dtype)
        y = model.forward_maps(x).data[0].astype(np.float64)
    stego_coarse = y[:STEGO_CHANNELS]
    return StegoBundle(
        stego=inverse_cfd_cover(stego_coarse, cover),
        residual=y[STEGO_CHANNELS:],
        stego_coarse=stego_coarse,
    )


def reveal(stego: JpegImage, model: MragModel, residual: np.ndarray | None = None) -> np.ndarray:
    """Recover the secret image from a stego JPEG; the residual defaults to zeros."""
    coarse = cover_maps(stego)
    if residual is None:
        residual = np.zeros((12 - STEGO_CHANNELS,) + coarse.shape[1:])
    with ad.no_grad():
        x_hat = model.backward_maps(Tensor(coarse[None], dtype=model.dtype),
                                    Tensor(np.asarray(residual)[None], dtype=model.dtype))
    return inverse_cfd_secret(x_hat.data[0, 3:6])
