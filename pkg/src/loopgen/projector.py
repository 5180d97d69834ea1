"""Fixed random projections over frozen feature pyramids.

Each stack owns one frozen feature network and two kinds of untrained
random mixing: a 1x1 cross-channel conv at every tap (CCM) and a top-down
cross-scale path (CSM) that sends deeper maps through a random 3x3 conv,
bilinear-resizes them to the exact shallower geometry, channel-matches
with a random 1x1, and adds them in. Projection weights are drawn once
from a seeded generator and never trained; gradients pass through them to
the input. A clip is projected per chunk and the two chunk features are
concatenated along channels, so every scale map covers the whole loop.
"""

import hashlib
from typing import Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import melpipe
from .errors import ConfigError, InputError, ShapeError
from .featurenets import CHUNK_SHAPE, N_SCALES, FrozenAdapter

MODES = ("general", "domain", "fusion")


def _random_conv(in_ch, out_ch, kernel, gen) -> nn.Conv2d:
    conv = nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2, bias=False)
    fan_in = in_ch * kernel * kernel
    with torch.no_grad():
        conv.weight.copy_(
            torch.randn(conv.weight.shape, generator=gen) / np.sqrt(fan_in)
        )
    conv.weight.requires_grad_(False)
    return conv


class ProjectorStack(nn.Module):
    """One frozen network plus its fixed random CCM/CSM mixing."""

    def __init__(self, adapter: FrozenAdapter, seed: int):
        super().__init__()
        self.adapter = adapter
        # registering the frozen net lets dtype/device moves and
        # state_dict cover the whole projection path
        self.backbone = adapter.network.net
        self.seed = int(seed)
        specs = adapter.scale_specs
        if len(specs) != N_SCALES:
            raise ShapeError(f"expected {N_SCALES} scales, got {len(specs)}")
        gen = torch.Generator().manual_seed(
            int(np.random.SeedSequence(self.seed).generate_state(1)[0])
        )
        chans = [s[0] for s in specs]
        self.ccm = nn.ModuleList(_random_conv(c, c, 1, gen) for c in chans)
        # one flow step per adjacent scale pair, deepest first
        self.csm_conv = nn.ModuleList(
            _random_conv(chans[i], chans[i], 3, gen) for i in range(N_SCALES - 1, 0, -1)
        )
        self.csm_match = nn.ModuleList(
            _random_conv(chans[i], chans[i - 1], 1, gen)
            if chans[i] != chans[i - 1]
            else nn.Identity()
            for i in range(N_SCALES - 1, 0, -1)
        )
        self.out_channels = [2 * c for c in chans]

    def weight_digest(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.state_dict().items()):
            if name.startswith("backbone."):
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.detach().numpy()).tobytes())
        return h.hexdigest()

    def _mix(self, taps):
        feats = [ccm(t) for ccm, t in zip(self.ccm, taps)]
        fused = [None] * N_SCALES
        fused[-1] = feats[-1]
        for step, level in enumerate(range(N_SCALES - 1, 0, -1)):
            flow = self.csm_conv[step](fused[level])
            flow = F.interpolate(
                flow, size=feats[level - 1].shape[-2:], mode="bilinear", align_corners=False
            )
            flow = self.csm_match[step](flow)
            fused[level - 1] = feats[level - 1] + flow
        return fused

    def project_chunks(self, x: torch.Tensor) -> list:
        """Project a (batch, 1, 64, 100) chunk batch to 4 fused maps."""
        if x.dim() != 4 or tuple(x.shape[1:]) != (1,) + CHUNK_SHAPE:
            raise ShapeError(
                f"expected chunk batch shaped (n, 1, {CHUNK_SHAPE[0]}, {CHUNK_SHAPE[1]}),"
                f" got {tuple(x.shape)}"
            )
        taps, _ = self.backbone.taps(x)
        return self._mix(taps)

    def forward(self, clips: torch.Tensor) -> list:
        """Project full clips; chunk features concatenate along channels."""
        x = _as_clip_batch(clips)
        half = CHUNK_SHAPE[1]
        b = x.shape[0]
        # both chunks ride one batch through the frozen net
        stacked = torch.cat([x[..., :half], x[..., half:]], dim=0)
        fused = self.project_chunks(stacked)
        return [torch.cat([f[:b], f[b:]], dim=1) for f in fused]


def _as_clip_batch(clips) -> torch.Tensor:
    if isinstance(clips, melpipe.MelClip):
        clips = torch.from_numpy(clips.values)
    elif isinstance(clips, np.ndarray):
        clips = torch.from_numpy(np.ascontiguousarray(clips, dtype=np.float32))
    if not isinstance(clips, torch.Tensor):
        raise InputError(f"cannot project {type(clips).__name__}")
    if clips.dim() == 2:
        clips = clips[None, None]
    elif clips.dim() == 3:
        clips = clips[:, None]
    full = (melpipe.N_MELS, melpipe.N_FRAMES)
    if clips.dim() != 4 or tuple(clips.shape[1:]) != (1,) + full:
        raise ShapeError(f"expected clips shaped (n, 1, {full[0]}, {full[1]})")
    return clips.float()


def build_projectors(adapters: dict, mode: str, seed: int) -> list:
    """Assemble the projector stacks for a training mode.

    general and domain use their single network; fusion runs both with
    independently seeded projections, doubling the feature count.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown projection mode {mode!r}, expected one of {MODES}")
    wanted = ("general", "domain") if mode == "fusion" else (mode,)
    stacks = []
    for i, kind in enumerate(wanted):
        adapter = adapters.get(kind)
        if adapter is None:
            raise ConfigError(f"mode {mode!r} needs a frozen {kind!r} network")
        if adapter.kind != kind:
            raise ConfigError(f"adapter under key {kind!r} has kind {adapter.kind!r}")
        stack_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        stacks.append(ProjectorStack(adapter, stack_seed))
    return stacks


def project(stacks: list, clips) -> list:
    """Flat list of fused maps from every stack, shallowest scale first
    within each stack. Length is 4 per stack (8 under fusion)."""
    maps = []
    for stack in stacks:
        maps.extend(stack(clips))
    return maps
