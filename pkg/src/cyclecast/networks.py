"""Generator / discriminator architectures over PyTorch.

The generator is an encoder (7-3-3 conv stack, two stride-2 downsamples), a body
of SE-residual blocks, and a mirrored transposed-conv decoder ending in a 7x7
"fine resizing" conv with tanh. The discriminator is a patch classifier whose
k3 stride pattern (2,2,2,1) gives a 31x31 receptive field per output score; it
emits raw scores (no sigmoid) because the adversarial objective is least
squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 1
    base_width: int = 64
    bottleneck_channels: int = 256
    n_res_blocks: int = 16
    se_reduction: int = 16
    dropout_rate: float = 0.4
    bn_momentum: float = 0.8
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        if min(self.in_channels, self.base_width, self.bottleneck_channels, self.n_res_blocks) < 1:
            raise ValueError("channel counts and block count must be positive")
        if self.se_reduction < 1 or self.bottleneck_channels % self.se_reduction != 0:
            raise ValueError("bottleneck_channels must be divisible by se_reduction")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0 < self.bn_momentum < 1:
            raise ValueError("bn_momentum must lie in (0, 1)")
        if self.leaky_slope <= 0:
            raise ValueError("leaky_slope must be positive")


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 1
    base_width: int = 64
    leaky_slope: float = 0.2
    bn_momentum: float = 0.8

    def __post_init__(self) -> None:
        if self.in_channels < 1 or self.base_width < 1:
            raise ValueError("channel counts must be positive")
        if not 0 < self.bn_momentum < 1:
            raise ValueError("bn_momentum must lie in (0, 1)")


def _bn(channels: int, retention: float) -> nn.BatchNorm2d:
    # `retention` is the fraction of the running statistic kept per batch
    # (Keras-style); torch's momentum argument is the complementary update weight.
    return nn.BatchNorm2d(channels, momentum=1.0 - retention)


class SqueezeExcite(nn.Module):
    """Channel gate: global average pool -> bottleneck MLP -> sigmoid rescale."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        squeezed = channels // reduction
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.gate = nn.Sequential(
            nn.Conv2d(channels, squeezed, kernel_size=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(squeezed, channels, kernel_size=1),
            nn.Sigmoid(),
        )

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gate(self.pool(x))


class SEResidualBlock(nn.Module):
    """Two 3x3 convs with BN and dropout between them, summed skip, then SE gate."""

    def __init__(self, channels: int, spec: GeneratorSpec):
        super().__init__()
        self.branch = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            _bn(channels, spec.bn_momentum),
            nn.LeakyReLU(spec.leaky_slope, inplace=True),
            nn.Dropout2d(spec.dropout_rate),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            _bn(channels, spec.bn_momentum),
        )
        self.se = SqueezeExcite(channels, spec.se_reduction)

    def forward(self, x: Tensor) -> Tensor:
        return self.se(x + self.branch(x))


class Generator(nn.Module):
    """Maps a normalized field batch to a same-shape batch strictly inside (-1, 1)."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        w, bneck = spec.base_width, spec.bottleneck_channels
        act = nn.LeakyReLU(spec.leaky_slope, inplace=True)
        self.encoder = nn.Sequential(
            nn.Conv2d(spec.in_channels, w, 7, padding=3, padding_mode="reflect"),
            _bn(w, spec.bn_momentum),
            act,
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1, padding_mode="reflect"),
            _bn(2 * w, spec.bn_momentum),
            act,
            nn.Conv2d(2 * w, bneck, 3, stride=2, padding=1, padding_mode="reflect"),
            _bn(bneck, spec.bn_momentum),
            act,
        )
        self.body = nn.Sequential(
            *[SEResidualBlock(bneck, spec) for _ in range(spec.n_res_blocks)]
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(bneck, 2 * w, 3, stride=2, padding=1, output_padding=1),
            _bn(2 * w, spec.bn_momentum),
            act,
            nn.ConvTranspose2d(2 * w, w, 3, stride=2, padding=1, output_padding=1),
            _bn(w, spec.bn_momentum),
            act,
            nn.Conv2d(w, spec.in_channels, 7, padding=3, padding_mode="reflect"),
            nn.Tanh(),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.decoder(self.body(self.encoder(x)))


class Discriminator(nn.Module):
    """Patch classifier emitting an unbounded score map (31x31 receptive field)."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        w = spec.base_width
        act = nn.LeakyReLU(spec.leaky_slope, inplace=True)
        self.stack = nn.Sequential(
            nn.Conv2d(spec.in_channels, w, 3, stride=2, padding=1),
            act,
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            _bn(2 * w, spec.bn_momentum),
            act,
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1),
            _bn(4 * w, spec.bn_momentum),
            act,
            nn.Conv2d(4 * w, 1, 3, stride=1, padding=1),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.stack(x)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


def build_generator(spec: GeneratorSpec) -> Generator:
    """Construct and initialize a generator (weights drawn from the global RNG)."""
    g = Generator(spec)
    g.apply(_init_weights)
    return g


def build_discriminator(spec: DiscriminatorSpec) -> Discriminator:
    """Construct and initialize a discriminator (weights drawn from the global RNG)."""
    d = Discriminator(spec)
    d.apply(_init_weights)
    return d


def _check_batch(batch: Tensor, in_channels: int) -> None:
    if batch.ndim != 4:
        raise ValueError(f"expected a (batch, channel, height, width) tensor, got ndim={batch.ndim}")
    if batch.shape[1] != in_channels:
        raise ValueError(f"expected {in_channels} channels, got {batch.shape[1]}")


def forward_generator(g: Generator, batch: Tensor) -> Tensor:
    """Forward pass with shape validation; spatial dims must be divisible by 4."""
    _check_batch(batch, g.spec.in_channels)
    if batch.shape[-2] % 4 or batch.shape[-1] % 4:
        raise ValueError(f"spatial dims must be divisible by 4, got {tuple(batch.shape[-2:])}")
    return g(batch)


def forward_discriminator(d: Discriminator, batch: Tensor) -> Tensor:
    """Forward pass with shape validation; returns the patch score map."""
    _check_batch(batch, d.spec.in_channels)
    return d(batch)


def receptive_field(d: Discriminator) -> int:
    """Receptive field of one output score, computed from the realized conv stack."""
    rf, jump = 1, 1
    for module in d.stack:
        if isinstance(module, nn.Conv2d):
            k = module.kernel_size[0]
            s = module.stride[0]
            rf += (k - 1) * jump
            jump *= s
    return rf


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
