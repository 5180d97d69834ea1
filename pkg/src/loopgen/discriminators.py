"""Discriminator heads over projected features, plus the GAN objective.

Each projected scale gets its own small spectral-normalized conv head
ending in a 1x1 logit map; heads are scored independently and the
non-saturating logistic losses sum over heads. A conventional trainable
discriminator over raw clips is included as the comparison baseline; it
exposes the same list-of-logits interface so the loss code and trainer
treat both identically.
"""

import math
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.parametrizations import spectral_norm

from . import melpipe
from .errors import ConfigError, ShapeError

HEAD_WIDTH = 64
HEAD_DEPTH = 4
LEAK = 0.2
OBJECTIVES = ("sum", "exp")


def _sn_conv(in_ch, out_ch, kernel, stride=1):
    return spectral_norm(
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2)
    )


class DiscriminatorHead(nn.Module):
    """Stride-2 conv column on one feature map, 1x1 logit map at the end."""

    def __init__(self, in_channels: int, width: int = HEAD_WIDTH):
        super().__init__()
        layers = []
        ch = in_channels
        for _ in range(HEAD_DEPTH):
            layers.append(_sn_conv(ch, width, 3, stride=2))
            ch = width
        self.convs = nn.ModuleList(layers)
        self.logit = _sn_conv(ch, 1, 1)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LEAK)
        return self.logit(x)


class MultiDiscriminator(nn.Module):
    """One head per projected scale map, scored independently."""

    def __init__(self, in_channels: list, width: int = HEAD_WIDTH):
        super().__init__()
        if not in_channels:
            raise ConfigError("need at least one feature map channel count")
        self.heads = nn.ModuleList(DiscriminatorHead(c, width) for c in in_channels)
        self.in_channels = list(in_channels)

    def forward(self, maps: list) -> list:
        if len(maps) != len(self.heads):
            raise ShapeError(
                f"got {len(maps)} feature maps for {len(self.heads)} heads"
            )
        for m, c in zip(maps, self.in_channels):
            if m.shape[1] != c:
                raise ShapeError(
                    f"feature map has {m.shape[1]} channels, head expects {c}"
                )
        return [head(m) for head, m in zip(self.heads, maps)]


def multi_discriminator_for(stacks: list, width: int = HEAD_WIDTH) -> MultiDiscriminator:
    """Build the head bank matching a list of projector stacks."""
    channels = []
    for stack in stacks:
        channels.extend(stack.out_channels)
    return MultiDiscriminator(channels, width)


class BaselineDiscriminator(nn.Module):
    """Conventional trainable conv discriminator on raw mel clips.

    Same list-of-logits contract as MultiDiscriminator so the training
    loop does not care which kind it drives.
    """

    WIDTHS = (32, 64, 128, 256)

    def __init__(self):
        super().__init__()
        layers = []
        ch = 1
        for w in self.WIDTHS:
            layers.append(_sn_conv(ch, w, 3, stride=2))
            ch = w
        self.convs = nn.ModuleList(layers)
        self.logit = _sn_conv(ch, 1, 1)

    def forward(self, clips) -> list:
        x = clips
        if x.dim() == 3:
            x = x[:, None]
        full = (1, melpipe.N_MELS, melpipe.N_FRAMES)
        if x.dim() != 4 or tuple(x.shape[1:]) != full:
            raise ShapeError(f"expected clips shaped (n, {full[0]}, {full[1]}, {full[2]})")
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LEAK)
        return [self.logit(x)]


@dataclass
class GanLossReport:
    """Total objective (a tensor, ready for backward) plus the detached
    per-head means that sum to it."""

    total: torch.Tensor
    per_head: list

    def __post_init__(self):
        if not self.per_head:
            raise ConfigError("loss needs at least one head")


def _check_objective(objective):
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}, expected one of {OBJECTIVES}")


def _combine(head_losses: list, objective: str) -> GanLossReport:
    if not head_losses:
        raise ConfigError("loss needs at least one head")
    if objective == "exp":
        # exp(t) - 1 keeps the zero fixed point while amplifying heads
        # that are losing badly
        terms = [torch.expm1(t) for t in head_losses]
    else:
        terms = head_losses
    total = torch.stack(terms).sum()
    return GanLossReport(total=total, per_head=[float(t.detach()) for t in terms])


def d_loss(real_logits: list, fake_logits: list, objective: str = "sum") -> GanLossReport:
    """Non-saturating logistic discriminator loss, summed over heads.

    All-zero logits give 2 * L * log(2).
    """
    _check_objective(objective)
    if len(real_logits) != len(fake_logits):
        raise ShapeError("real and fake logit lists differ in length")
    head_losses = [
        F.softplus(-r).mean() + F.softplus(f).mean()
        for r, f in zip(real_logits, fake_logits)
    ]
    return _combine(head_losses, objective)


def g_loss(fake_logits: list, objective: str = "sum") -> GanLossReport:
    """Non-saturating generator loss; all-zero logits give L * log(2)."""
    _check_objective(objective)
    head_losses = [F.softplus(-f).mean() for f in fake_logits]
    return _combine(head_losses, objective)


def logit_map_extent(size: int, depth: int = HEAD_DEPTH) -> int:
    """Spatial extent after the stride-2 conv column (kernel 3, pad 1)."""
    for _ in range(depth):
        size = (size - 1) // 2 + 1
    return size
