"""Style-modulated convolutional generator for fixed-size mel clips.

A mapping network turns latent draws into style vectors; a synthesis
network grows a learned constant through four 2x upsampling blocks whose
convolutions are modulated by the style and demodulated for stability.
Per-block skip connections accumulate the output in mel space, and the
final tanh map is center-cropped along time to the clip geometry. Noise
injection exists but stays off unless asked for: on short loops it buys
nothing and costs texture stability.
"""

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import melpipe
from .errors import ConfigError, ShapeError

# const height/width doubling four times gives (64, 208); time is then
# center-cropped to the 200-frame clip
CONST_SHAPE = (4, 13)
N_BLOCKS = 4
SYNTH_WIDTHS = (128, 128, 64, 32)
Z_DIM_RANGE = (8, 128)
LEAK = 0.2
ACT_GAIN = math.sqrt(2.0)


@dataclass
class GeneratorConfig:
    z_dim: int = 32
    w_dim: int = 64
    widths: tuple = SYNTH_WIDTHS
    const_channels: int = 128
    mapping_layers: int = 6
    use_noise: bool = False
    ema_decay: float = 0.999

    def __post_init__(self):
        self.widths = tuple(self.widths)
        lo, hi = Z_DIM_RANGE
        if not (lo <= self.z_dim <= hi):
            raise ConfigError(
                f"z_dim must be in [{lo}, {hi}], got {self.z_dim}; oversized "
                "latent spaces are a known mode-collapse configuration on "
                "loop corpora"
            )
        if self.w_dim < 8:
            raise ConfigError(f"w_dim must be at least 8, got {self.w_dim}")
        if len(self.widths) != N_BLOCKS or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must be {N_BLOCKS} positive ints, got {self.widths}")
        if self.const_channels < 1:
            raise ConfigError("const_channels must be positive")
        if self.mapping_layers < 1:
            raise ConfigError("mapping_layers must be at least 1")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ConfigError(f"ema_decay must be in [0, 1), got {self.ema_decay}")


class EqualizedLinear(nn.Module):
    """Linear layer with runtime weight scaling (equalized learning rate)."""

    def __init__(self, in_dim, out_dim, lr_mul=1.0, bias_init=0.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim) / lr_mul)
        self.bias = nn.Parameter(torch.full((out_dim,), float(bias_init)))
        self.weight_gain = lr_mul / math.sqrt(in_dim)
        self.bias_gain = lr_mul

    def forward(self, x):
        return F.linear(x, self.weight * self.weight_gain, self.bias * self.bias_gain)


def pixel_norm(x, eps=1e-8):
    return x * torch.rsqrt(x.square().mean(dim=1, keepdim=True) + eps)


class MappingNetwork(nn.Module):
    def __init__(self, z_dim, w_dim, n_layers, lr_mul=0.01):
        super().__init__()
        dims = [z_dim] + [w_dim] * n_layers
        self.layers = nn.ModuleList(
            EqualizedLinear(dims[i], dims[i + 1], lr_mul=lr_mul) for i in range(n_layers)
        )

    def forward(self, z):
        x = pixel_norm(z)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), LEAK) * ACT_GAIN
        return x


class ModulatedConv2d(nn.Module):
    """Conv whose kernel is scaled per-sample by a style, optionally
    demodulated back to unit output variance."""

    def __init__(self, in_ch, out_ch, kernel, w_dim, demodulate=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.affine = EqualizedLinear(w_dim, in_ch, bias_init=1.0)
        self.weight_gain = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.out_ch = out_ch
        self.kernel = kernel
        self.demodulate = demodulate

    def forward(self, x, w):
        b, c, h, wid = x.shape
        style = self.affine(w)
        weight = self.weight * self.weight_gain
        weight = weight[None] * style[:, None, :, None, None]
        if self.demodulate:
            decoef = torch.rsqrt(weight.square().sum(dim=(2, 3, 4)) + 1e-8)
            weight = weight * decoef[:, :, None, None, None]
        # grouped conv applies each sample's modulated kernel in one call
        x = x.reshape(1, b * c, h, wid)
        weight = weight.reshape(b * self.out_ch, c, self.kernel, self.kernel)
        y = F.conv2d(x, weight, padding=self.kernel // 2, groups=b)
        return y.reshape(b, self.out_ch, h, wid) + self.bias[None, :, None, None]


def _up2(x):
    return F.interpolate(x, scale_factor=2, mode="nearest")


class SynthesisBlock(nn.Module):
    def __init__(self, in_ch, out_ch, w_dim, use_noise):
        super().__init__()
        self.conv0 = ModulatedConv2d(in_ch, out_ch, 3, w_dim)
        self.conv1 = ModulatedConv2d(out_ch, out_ch, 3, w_dim)
        self.to_mel = ModulatedConv2d(out_ch, 1, 1, w_dim, demodulate=False)
        self.use_noise = use_noise
        if use_noise:
            self.noise_scale0 = nn.Parameter(torch.zeros(()))
            self.noise_scale1 = nn.Parameter(torch.zeros(()))

    def _noise(self, x, scale):
        if not self.use_noise:
            return x
        return x + scale * torch.randn(x.shape[0], 1, *x.shape[2:], device=x.device)

    def forward(self, x, skip, w):
        x = _up2(x)
        x = F.leaky_relu(self._noise(self.conv0(x, w), getattr(self, "noise_scale0", None)), LEAK)
        x = x * ACT_GAIN
        x = F.leaky_relu(self._noise(self.conv1(x, w), getattr(self, "noise_scale1", None)), LEAK)
        x = x * ACT_GAIN
        mel = self.to_mel(x, w)
        skip = mel if skip is None else _up2(skip) + mel
        return x, skip


class SynthesisNetwork(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.const = nn.Parameter(torch.randn(config.const_channels, *CONST_SHAPE))
        chans = (config.const_channels,) + tuple(config.widths)
        self.blocks = nn.ModuleList(
            SynthesisBlock(chans[i], chans[i + 1], config.w_dim, config.use_noise)
            for i in range(N_BLOCKS)
        )
        self.out_frames = melpipe.N_FRAMES

    def forward(self, w):
        x = self.const[None].expand(w.shape[0], -1, -1, -1)
        skip = None
        for block in self.blocks:
            x, skip = block(x, skip, w)
        full = torch.tanh(skip)
        margin = (full.shape[-1] - self.out_frames) // 2
        return full[..., margin : margin + self.out_frames]


class Generator(nn.Module):
    """Latents in, (batch, 1, 64, 200) mel clips in [-1, 1] out."""

    def __init__(self, config: Optional[GeneratorConfig] = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        self.mapping = MappingNetwork(
            self.config.z_dim, self.config.w_dim, self.config.mapping_layers
        )
        self.synthesis = SynthesisNetwork(self.config)

    def forward(self, z):
        if z.dim() != 2 or z.shape[1] != self.config.z_dim:
            raise ShapeError(
                f"expected latents shaped (n, {self.config.z_dim}), got {tuple(z.shape)}"
            )
        return self.synthesis(self.mapping(z))


class GeneratorEMA:
    """Exponential moving average of generator weights for inference."""

    def __init__(self, generator: Generator, decay: Optional[float] = None):
        self.decay = generator.config.ema_decay if decay is None else decay
        self.shadow = copy.deepcopy(generator)
        self.shadow.eval()
        for p in self.shadow.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def update(self, generator: Generator):
        for ps, p in zip(self.shadow.parameters(), generator.parameters()):
            ps.lerp_(p, 1.0 - self.decay)
        for bs, b in zip(self.shadow.buffers(), generator.buffers()):
            bs.copy_(b)

    def state_dict(self):
        return self.shadow.state_dict()

    def load_state_dict(self, state):
        self.shadow.load_state_dict(state)


def sample_latents(seed_material, n, z_dim) -> torch.Tensor:
    """Deterministic latent batch from reproducible seed material.

    seed_material can be anything numpy SeedSequence accepts (an int or a
    tuple of ints), so callers can derive per-step streams.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed_material))
    return torch.from_numpy(rng.standard_normal((n, z_dim)).astype(np.float32))


def generate_batch(generator: Generator, seed, n: int, batch_size: int = 16) -> np.ndarray:
    """Sample n clips deterministically; returns (n, 64, 200) float32."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    generator.eval()
    outs = []
    z = sample_latents(seed, n, generator.config.z_dim)
    with torch.no_grad():
        for start in range(0, n, batch_size):
            out = generator(z[start : start + batch_size])
            outs.append(out[:, 0].numpy().astype(np.float32))
    return np.concatenate(outs, axis=0)
