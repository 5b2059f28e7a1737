"""Completion / extrapolation generators and the global discriminator."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

#: Probabilities leaving the discriminator are clamped to [EPS, 1 - EPS].
EPS = 1e-7

# silu is smooth; used where finite differences must not straddle a kink
ACTIVATIONS = {
    "relu": nn.ReLU,
    "leaky_relu": lambda: nn.LeakyReLU(0.2),
    "silu": nn.SiLU,
}


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 16
    downsample_stages: int = 2
    dilated_blocks: tuple[int, ...] = (2, 4, 8)
    input_channels: int = 4
    output_channels: int = 3
    resolution: int = 64
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {sorted(ACTIVATIONS)}")
        object.__setattr__(self, "dilated_blocks", tuple(int(d) for d in self.dilated_blocks))
        if self.base_channels < 1 or self.downsample_stages < 0:
            raise ValueError("base_channels must be >= 1 and downsample_stages >= 0")
        if any(d < 1 for d in self.dilated_blocks):
            raise ValueError(f"dilation rates must be >= 1, got {self.dilated_blocks}")
        if any(b < a for a, b in zip(self.dilated_blocks, self.dilated_blocks[1:])):
            raise ValueError(f"dilation rates must be nondecreasing, got {self.dilated_blocks}")
        if self.resolution % (2**self.downsample_stages):
            raise ValueError(
                f"resolution {self.resolution} not divisible by 2**{self.downsample_stages}"
            )


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 16
    downsample_stages: int = 4
    input_channels: int = 3
    resolution: int = 64
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {sorted(ACTIVATIONS)}")
        if self.resolution % (2**self.downsample_stages):
            raise ValueError(
                f"resolution {self.resolution} not divisible by 2**{self.downsample_stages}"
            )


def receptive_field(cfg: GeneratorConfig) -> int:
    """Receptive field (input pixels) of one bottleneck unit after the dilated blocks."""
    rf, jump = 7, 1
    for _ in range(cfg.downsample_stages):
        rf += 2 * jump
        jump *= 2
    for d in cfg.dilated_blocks:
        # dilated 3x3 followed by a plain 3x3
        rf += 2 * d * jump + 2 * jump
    return rf


def _init_weights(module: nn.Module, generator: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()


class DilatedResidualBlock(nn.Module):
    def __init__(self, channels: int, dilation: int, activation: str = "relu"):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=dilation, dilation=dilation, bias=False),
            nn.InstanceNorm2d(channels),
            ACTIVATIONS[activation](),
            nn.Conv2d(channels, channels, 3, padding=1, bias=False),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class Generator(nn.Module):
    """Encoder, dilated residual middle, decoder, tanh output.

    The same class serves as completion network and as extrapolation network;
    only the input differs (which pixels are kept and which mask channel is
    appended).
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        act = ACTIVATIONS[cfg.activation]
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.input_channels, ch, 7, padding=3, bias=False),
            nn.InstanceNorm2d(ch),
            act(),
        ]
        for _ in range(cfg.downsample_stages):
            layers += [nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1, bias=False), nn.InstanceNorm2d(ch * 2), act()]
            ch *= 2
        layers += [DilatedResidualBlock(ch, d, cfg.activation) for d in cfg.dilated_blocks]
        for _ in range(cfg.downsample_stages):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 3, stride=2, padding=1, output_padding=1, bias=False),
                nn.InstanceNorm2d(ch // 2),
                act(),
            ]
            ch //= 2
        layers += [nn.Conv2d(ch, cfg.output_channels, 3, padding=1), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.cfg.input_channels:
            raise ValueError(
                f"generator expects (N, {self.cfg.input_channels}, H, W) input, got {tuple(x.shape)}"
            )
        return self.net(x)


class Discriminator(nn.Module):
    """Whole-image classifier: strided convs down to one logit, then sigmoid."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        act = ACTIVATIONS[cfg.activation]
        layers: list[nn.Module] = [nn.Conv2d(cfg.input_channels, ch, 4, stride=2, padding=1), act()]
        for _ in range(cfg.downsample_stages - 1):
            layers += [nn.Conv2d(ch, ch * 2, 4, stride=2, padding=1, bias=False), nn.InstanceNorm2d(ch * 2), act()]
            ch *= 2
        self.features = nn.Sequential(*layers)
        side = cfg.resolution // 2**cfg.downsample_stages
        self.head = nn.Linear(ch * side * side, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        r = self.cfg.resolution
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.cfg.input_channels, r, r):
            raise ValueError(
                f"discriminator expects (N, {self.cfg.input_channels}, {r}, {r}) input, got {tuple(x.shape)}"
            )
        return self.head(self.features(x).flatten(1)).squeeze(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x)).clamp(EPS, 1 - EPS)


def build_generator(cfg: GeneratorConfig, generator: torch.Generator | int) -> Generator:
    if isinstance(generator, int):
        generator = torch.Generator().manual_seed(generator)
    net = Generator(cfg)
    _init_weights(net, generator)
    return net


def build_discriminator(cfg: DiscriminatorConfig, generator: torch.Generator | int) -> Discriminator:
    if isinstance(generator, int):
        generator = torch.Generator().manual_seed(generator)
    net = Discriminator(cfg)
    _init_weights(net, generator)
    return net


@dataclass(eq=False)
class ModelBundle:
    """The three networks; ``optimizers`` is filled in once training starts."""

    C: Generator
    E: Generator
    D: Discriminator
    optimizers: dict | None = None

    @property
    def generator_config(self) -> GeneratorConfig:
        return self.C.cfg

    @property
    def discriminator_config(self) -> DiscriminatorConfig:
        return self.D.cfg

    def named_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for prefix, net in (("C", self.C), ("E", self.E), ("D", self.D)):
            for name, p in net.named_parameters():
                out[f"{prefix}.{name}"] = p
        return out

    def to(self, dtype: torch.dtype) -> "ModelBundle":
        for net in (self.C, self.E, self.D):
            net.to(dtype)
        return self


def build_bundle(gcfg: GeneratorConfig, dcfg: DiscriminatorConfig, seed: int) -> ModelBundle:
    g = torch.Generator().manual_seed(seed)
    return ModelBundle(build_generator(gcfg, g), build_generator(gcfg, g), build_discriminator(dcfg, g))


def complete(C: Generator, x_masked_with_mask: torch.Tensor) -> torch.Tensor:
    """Completion pass: input is (1-M)*x with M appended as the last channel."""
    return C(x_masked_with_mask)


def extrapolate(E: Generator, x_outside_masked_with_complement: torch.Tensor) -> torch.Tensor:
    """Extrapolation pass: input is M*x with 1-M appended as the last channel."""
    return E(x_outside_masked_with_complement)


def discriminate(D: Discriminator, x: torch.Tensor) -> torch.Tensor:
    """Per-image probability of being real, clamped to [EPS, 1 - EPS]."""
    return D(x)
