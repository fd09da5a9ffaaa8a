"""Invertible building blocks and the subnets used inside coupling layers."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor


class Module:
    """Parameter container; attributes that are Parameters, Modules or lists
    of Modules are discovered in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def name_parameters(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for n, p in own.items():
            arr = np.asarray(state[n])
            if arr.shape != p.shape:
                raise ShapeError(f"{n}: expected {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype).copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _normal(gen: np.random.Generator, shape, std: float) -> Parameter:
    return Parameter(gen.normal(0.0, std, size=shape))


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, gen: np.random.Generator,
                 zero: bool = False, stride: int = 1):
        std = 0.0 if zero else np.sqrt(1.0 / (c_in * k * k))
        self.weight = _normal(gen, (c_out, c_in, k, k), std)
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride

    def forward(self, x: Tensor, channels_last: bool = False) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, "same", self.stride, channels_last)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, gen: np.random.Generator, zero: bool = False):
        std = 0.0 if zero else np.sqrt(1.0 / n_in)
        self.weight = _normal(gen, (n_in, n_out), std)
        self.bias = Parameter(np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class DenseBlock(Module):
    """Five 3x3 convolutions; layer i sees the input and every earlier output."""

    def __init__(self, c_in: int, c_out: int, gen: np.random.Generator, growth: int = 32,
                 n_layers: int = 5, slope: float = 0.2):
        self.slope = slope
        self.convs = [Conv2d(c_in + i * growth, growth, 3, gen) for i in range(n_layers - 1)]
        self.convs.append(Conv2d(c_in + (n_layers - 1) * growth, c_out, 3, gen, zero=True))

    def input_channels(self) -> list[int]:
        return [c.weight.shape[1] for c in self.convs]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.convs[0].weight.shape[1]:
            raise ShapeError(f"dense block expects {self.convs[0].weight.shape[1]} channels, got {x.shape[1]}")
        return ad.dense_block(x, [c.weight for c in self.convs], [c.bias for c in self.convs], self.slope)

    def forward_composed(self, x: Tensor) -> Tensor:
        """Same map built from separate conv / concat / activation ops."""
        feats = [x]
        for conv in self.convs[:-1]:
            inp = feats[0] if len(feats) == 1 else ad.concat(feats, axis=1)
            feats.append(ad.leaky_relu(conv(inp), self.slope))
        return self.convs[-1](ad.concat(feats, axis=1))


class ChannelAttentionConv(Module):
    """1x1 convolution scaled per channel by a squeeze-and-excitation gate."""

    def __init__(self, channels: int, gen: np.random.Generator, slope: float = 0.2):
        hidden = max(channels // 4, 1)
        self.conv = Conv2d(channels, channels, 1, gen)
        self.squeeze = Linear(channels, hidden, gen)
        self.excite = Linear(hidden, channels, gen)
        self.slope = slope

    def gate(self, x: Tensor) -> Tensor:
        pooled = ad.mean(x, axis=(2, 3))
        return ad.sigmoid(self.excite(ad.leaky_relu(self.squeeze(pooled), self.slope)))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        g = ad.broadcast_to(ad.reshape(self.gate(x), (n, c, 1, 1)), (n, c, h, w))
        return self.conv(x) * g


class TransformerBlock(Module):
    """One Pre-LN encoder block over an (h, w) token grid.

    Learned positional embeddings are added to the query/key inputs only, so
    the residual stream carries the input untouched when both output
    projections are zero.
    """

    def __init__(self, dim: int, n_tokens: int, gen: np.random.Generator, heads: int = 4,
                 mlp_ratio: int = 2, slope: float = 0.2):
        if dim % heads:
            raise ShapeError(f"token dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.slope = slope
        self.pos = _normal(gen, (n_tokens, dim), 0.02)
        self.ln1 = LayerNorm(dim)
        self.q = Linear(dim, dim, gen)
        self.k = Linear(dim, dim, gen)
        self.v = Linear(dim, dim, gen)
        self.proj = Linear(dim, dim, gen)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_ratio * dim, gen)
        self.fc2 = Linear(mlp_ratio * dim, dim, gen)
        self.last_attention: np.ndarray | None = None

    def _heads(self, t: Tensor) -> Tensor:
        n, tk, d = t.shape
        return ad.transpose(ad.reshape(t, (n, tk, self.heads, d // self.heads)), (0, 2, 1, 3))

    def attend(self, t: Tensor) -> Tensor:
        n, tk, d = t.shape
        a = self.ln1(t)
        qk_in = a + ad.broadcast_to(self.pos, (n, tk, d))
        q, k, v = self._heads(self.q(qk_in)), self._heads(self.k(qk_in)), self._heads(self.v(a))
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d // self.heads))
        weights = ad.softmax(scores, axis=-1)
        self.last_attention = weights.data
        mixed = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (n, tk, d))
        return self.proj(mixed)

    def forward_tokens(self, t: Tensor) -> Tensor:
        t = t + self.attend(t)
        return t + self.fc2(ad.leaky_relu(self.fc1(self.ln2(t)), self.slope))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.pos.shape[1] or h * w != self.pos.shape[0]:
            raise ShapeError(f"transformer built for {self.pos.shape[1]} ch / {self.pos.shape[0]} tokens, got {x.shape}")
        t = ad.transpose(ad.reshape(x, (n, c, h * w)), (0, 2, 1))
        t = self.forward_tokens(t)
        return ad.reshape(ad.transpose(t, (0, 2, 1)), (n, c, h, w))


class TransformerSubnet(Module):
    """Transformer block followed by a zero-initialized linear output projection."""

    def __init__(self, dim: int, n_tokens: int, gen: np.random.Generator, heads: int = 4,
                 mlp_ratio: int = 2):
        self.block = TransformerBlock(dim, n_tokens, gen, heads, mlp_ratio)
        self.out = Linear(dim, dim, gen, zero=True)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        t = ad.transpose(ad.reshape(x, (n, c, h * w)), (0, 2, 1))
        t = self.out(self.block.forward_tokens(t))
        return ad.reshape(ad.transpose(t, (0, 2, 1)), (n, c, h, w))


def transformer_apply(x: Tensor, block: TransformerBlock) -> Tensor:
    return block(x)


class AffineCoupling(Module):
    """u_o = u + phi(l);  l_o = l * exp(clamp * tanh(rho(u_o))) + eta(u_o)."""

    def __init__(self, channels: int, make_subnet: Callable[[int], Module], clamp: float = 2.0):
        if channels % 2:
            raise ShapeError(f"coupling needs an even channel count, got {channels}")
        half = channels // 2
        self.channels = channels
        self.clamp = clamp
        self.phi = make_subnet(half)
        self.rho = make_subnet(half)
        self.eta = make_subnet(half)

    def _split(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[1] != self.channels:
            raise ShapeError(f"coupling built for {self.channels} channels, got {x.shape[1]}")
        half = self.channels // 2
        u, l = ad.split(x, [half, half], axis=1)
        return u, l

    def scale(self, u_o: Tensor) -> Tensor:
        return ad.tanh(self.rho(u_o)) * self.clamp

    def forward(self, x: Tensor) -> Tensor:
        u, l = self._split(x)
        u_o = u + self.phi(l)
        l_o = l * ad.exp(self.scale(u_o)) + self.eta(u_o)
        return ad.concat([u_o, l_o], axis=1)

    def inverse(self, y: Tensor) -> Tensor:
        u_o, l_o = self._split(y)
        l_i = (l_o - self.eta(u_o)) * ad.exp(-self.scale(u_o))
        u_i = u_o - self.phi(l_i)
        return ad.concat([u_i, l_i], axis=1)


def coupling_forward(x: Tensor, layer: AffineCoupling) -> Tensor:
    return layer.forward(x)


def coupling_inverse(y: Tensor, layer: AffineCoupling) -> Tensor:
    return layer.inverse(y)


class InvertibleConv1x1(Module):
    """Channel mixing y = W x at every pixel; inverse uses an explicit W^-1."""

    max_condition = 1e6

    def __init__(self, channels: int, gen: np.random.Generator, init: str = "identity"):
        if init == "identity":
            w = np.eye(channels)
        elif init == "orthogonal":
            w, r = np.linalg.qr(gen.normal(size=(channels, channels)))
            w = w * np.sign(np.diag(r))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w)

    def _checked(self) -> None:
        cond = np.linalg.cond(self.weight.data.astype(np.float64))
        if not np.isfinite(cond) or cond > self.max_condition:
            raise FloatingPointError(f"1x1 mixing matrix is degenerate (cond={cond:.3g})")

    def forward(self, x: Tensor) -> Tensor:
        self._checked()
        c = self.weight.shape[0]
        return ad.conv2d(x, ad.reshape(self.weight, (c, c, 1, 1)))

    def inverse(self, y: Tensor) -> Tensor:
        self._checked()
        c = self.weight.shape[0]
        return ad.conv2d(y, ad.reshape(ad.matrix_inverse(self.weight), (c, c, 1, 1)))
