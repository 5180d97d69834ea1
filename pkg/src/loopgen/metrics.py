"""Objective metrics over embedded clips.

Three families: a Frechet distance between Gaussian fits of embedding
sets (the audio-embedding variant of FID), an inception-style score from
domain classifier probabilities, and density/coverage over a k-NN
manifold of real embeddings. Embeddings come either from the trained
general network (Frechet) or from a fixed random-weight net (density and
coverage), so the manifold judge is independent of anything the training
loop optimized.

Every embedding set carries the digest of the network that produced it;
mixing embeddings from different networks is a config error, not a
silent wrong number.
"""

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
from scipy.spatial.distance import cdist

from . import melpipe
from .errors import ConfigError, NumericalError, ShapeError
from .featurenets import CHUNK_SHAPE, FrozenAdapter

COV_EPS = 1e-6
EIG_TOL = -1e-8
DC_NEIGHBORS = 5
IS_SPLITS = 10
DC_EMBED_DIM = 64


@dataclass
class EmbeddingSet:
    """Row-per-clip embeddings tagged with their embedder's digest."""

    vectors: np.ndarray
    digest: str
    source: str = ""  # "real" | "generated" | free-form

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ShapeError("embeddings must be a non-empty (n, d) matrix")
        if not np.all(np.isfinite(self.vectors)):
            raise NumericalError("embeddings contain non-finite values")

    def __len__(self):
        return self.vectors.shape[0]


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int
    digest: str

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (d, d):
            raise ShapeError("mean must be (d,) and cov (d, d)")


def fit_gaussian(embeddings: EmbeddingSet) -> GaussianStats:
    """Sample mean and covariance; ridge-regularized when n <= d."""
    x = embeddings.vectors
    n, d = x.shape
    if n < 2:
        raise ConfigError(f"need at least 2 embeddings to fit a Gaussian, got {n}")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    cov = np.atleast_2d(cov)
    if n <= d:
        cov = cov + COV_EPS * np.eye(d)
    return GaussianStats(mean=mean, cov=cov, n=n, digest=embeddings.digest)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < EIG_TOL:
        raise NumericalError(
            f"matrix is not positive semidefinite (eigenvalue {vals.min():.3e})"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fad_from_stats(real: GaussianStats, fake: GaussianStats) -> float:
    """Frechet distance between two Gaussians.

    ||mu_r - mu_g||^2 + tr(S_r) + tr(S_g) - 2 tr((S_r S_g)^(1/2)),
    with the cross term computed through an eigendecomposition of the
    symmetrized product so there is no complex arithmetic to clean up.
    """
    if real.digest != fake.digest:
        raise ConfigError(
            "embedding digests differ; both sides must come from the same embedder"
        )
    if real.mean.shape != fake.mean.shape:
        raise ShapeError("Gaussian dimensions differ")
    diff = real.mean - fake.mean
    sqrt_r = _sqrtm_psd(real.cov)
    inner = sqrt_r @ fake.cov @ sqrt_r
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < EIG_TOL:
        raise NumericalError(
            f"cross-covariance product left the PSD cone (eigenvalue {vals.min():.3e})"
        )
    tr_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    value = float(diff @ diff + np.trace(real.cov) + np.trace(fake.cov) - 2.0 * tr_sqrt)
    return value


def fad(real: EmbeddingSet, fake: EmbeddingSet) -> float:
    return fad_from_stats(fit_gaussian(real), fit_gaussian(fake))


def split_half_fad(embeddings: EmbeddingSet, seed: int = 0) -> float:
    """Frechet distance between two disjoint random halves of one set.

    The scale of this number is what a perfect generator would score, so
    convergence thresholds are set relative to it.
    """
    n = len(embeddings)
    if n < 4:
        raise ConfigError(f"need at least 4 embeddings to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    half = n // 2
    a = EmbeddingSet(embeddings.vectors[order[:half]], embeddings.digest)
    b = EmbeddingSet(embeddings.vectors[order[half : 2 * half]], embeddings.digest)
    return fad(a, b)


def inception_score_from_probs(probs: np.ndarray, n_splits: int = IS_SPLITS) -> float:
    """Mean over splits of exp(mean KL(p_i || split marginal))."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeError("probs must be (n, classes)")
    n = probs.shape[0]
    if n_splits < 1:
        raise ConfigError("n_splits must be at least 1")
    if n < n_splits:
        raise ConfigError(f"need at least {n_splits} rows, got {n}")
    if probs.min() < -1e-9 or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-3:
        raise ConfigError("rows must be probability vectors")
    scores = []
    for part in np.array_split(np.arange(n), n_splits):
        p = probs[part]
        marginal = p.mean(axis=0, keepdims=True)
        kl = np.where(p > 0, p * (np.log(p, where=p > 0) - np.log(marginal)), 0.0)
        scores.append(np.exp(kl.sum(axis=1).mean()))
    return float(np.mean(scores))


def density_coverage(
    real: EmbeddingSet, fake: EmbeddingSet, k: int = DC_NEIGHBORS
) -> tuple[float, float]:
    """Manifold density and coverage with k-NN balls around real points.

    Each real point's radius is the Euclidean distance to its k-th
    nearest other real point. Density counts fake points per ball
    (normalized by k and the fake count); coverage is the fraction of
    real balls holding at least one fake point.
    """
    if real.digest != fake.digest:
        raise ConfigError(
            "embedding digests differ; both sides must come from the same embedder"
        )
    n = len(real)
    if n <= k:
        raise ConfigError(f"need more than k={k} real embeddings, got {n}")
    rr = cdist(real.vectors, real.vectors)
    # k-th nearest excluding self: self sits at distance 0, column k is it
    radii = np.sort(rr, axis=1)[:, k]
    rf = cdist(real.vectors, fake.vectors)
    inside = rf <= radii[:, None]
    density = float(inside.sum() / (k * len(fake)))
    coverage = float(inside.any(axis=1).mean())
    return density, coverage


class RandomEmbedder(nn.Module):
    """Never-trained conv embedder for manifold metrics.

    The classic 16-layer topology (five conv blocks of 2, 2, 3, 3, 3
    layers, two fully connected layers on top) at desk-scale widths.
    Weights are drawn once from a fixed seed and frozen; the second fully
    connected layer is the 64-d embedding output.
    """

    BLOCKS = ((8, 2), (16, 2), (32, 3), (64, 3), (64, 3))
    FC_DIM = 64

    def __init__(self, seed: int = 707):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        layers = []
        ends = []
        ch = 1
        for width, convs in self.BLOCKS:
            for _ in range(convs):
                conv = nn.Conv2d(ch, width, 3, padding=1)
                with torch.no_grad():
                    conv.weight.copy_(
                        torch.randn(conv.weight.shape, generator=gen)
                        / math.sqrt(ch * 9)
                    )
                    conv.bias.zero_()
                layers.append(conv)
                ch = width
            ends.append(len(layers) - 1)
        self.convs = nn.ModuleList(layers)
        # conv indices that close a block, where pooling happens
        self.block_ends = set(ends)
        h = w = None
        hh, ww = CHUNK_SHAPE
        for _ in self.BLOCKS:
            hh, ww = math.ceil(hh / 2), math.ceil(ww / 2)
        flat = self.BLOCKS[-1][0] * hh * ww
        self.fc1 = nn.Linear(flat, self.FC_DIM)
        self.fc2 = nn.Linear(self.FC_DIM, DC_EMBED_DIM)
        for fc in (self.fc1, self.fc2):
            with torch.no_grad():
                fc.weight.copy_(
                    torch.randn(fc.weight.shape, generator=gen)
                    / math.sqrt(fc.weight.shape[1])
                )
                fc.bias.zero_()
        self.seed = int(seed)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"random-embedder-{self.seed}".encode())
        for name, t in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.detach().numpy()).tobytes())
        return h.hexdigest()

    def forward(self, x):
        if x.dim() != 4 or tuple(x.shape[1:]) != (1,) + CHUNK_SHAPE:
            raise ShapeError(
                f"expected chunks shaped (n, 1, {CHUNK_SHAPE[0]}, {CHUNK_SHAPE[1]})"
            )
        for i, conv in enumerate(self.convs):
            x = F.relu(conv(x))
            if i in self.block_ends:
                x = F.max_pool2d(x, 2, ceil_mode=True)
        x = x.flatten(1)
        x = F.relu(self.fc1(x))
        return self.fc2(x)


def _clips_to_chunks(clips) -> torch.Tensor:
    """(n, 64, 200) clips in any accepted form -> (2n, 1, 64, 100)."""
    if isinstance(clips, list):
        clips = np.stack(
            [c.values if isinstance(c, melpipe.MelClip) else np.asarray(c) for c in clips]
        )
    if isinstance(clips, torch.Tensor):
        clips = clips.detach().cpu().numpy()
    clips = np.asarray(clips, dtype=np.float32)
    if clips.ndim == 2:
        clips = clips[None]
    full = (melpipe.N_MELS, melpipe.N_FRAMES)
    if clips.ndim != 3 or clips.shape[1:] != full:
        raise ShapeError(f"expected clips shaped (n, {full[0]}, {full[1]})")
    half = melpipe.N_FRAMES // 2
    stacked = np.concatenate([clips[..., :half], clips[..., half:]], axis=0)
    return torch.from_numpy(stacked[:, None])


def _chunk_mean_embed(net_fn, clips, batch_size: int) -> np.ndarray:
    chunks = _clips_to_chunks(clips)
    n = chunks.shape[0] // 2
    outs = []
    with torch.no_grad():
        for start in range(0, chunks.shape[0], batch_size):
            outs.append(net_fn(chunks[start : start + batch_size]).double())
    emb = torch.cat(outs, dim=0)
    return ((emb[:n] + emb[n:]) / 2.0).numpy()


def embed_for_fad(
    adapter: FrozenAdapter, clips, batch_size: int = 64, source: str = ""
) -> EmbeddingSet:
    """Clip embeddings from the trained general network (chunk mean)."""
    if adapter.kind != "general":
        raise ConfigError("Frechet embeddings come from the general network")
    adapter.verify()
    net = adapter.network.net
    net.eval()
    vecs = _chunk_mean_embed(net.embed, clips, batch_size)
    return EmbeddingSet(vectors=vecs, digest=adapter.digest, source=source)


def embed_for_dc(
    embedder: RandomEmbedder, clips, batch_size: int = 64, source: str = ""
) -> EmbeddingSet:
    """Clip embeddings from the fixed random net (chunk mean)."""
    vecs = _chunk_mean_embed(embedder, clips, batch_size)
    return EmbeddingSet(vectors=vecs, digest=embedder.digest(), source=source)


def class_probs(adapter: FrozenAdapter, clips, batch_size: int = 64) -> np.ndarray:
    """Domain classifier probabilities, one row per chunk."""
    if adapter.kind != "domain":
        raise ConfigError("class probabilities come from the domain network")
    adapter.verify()
    chunks = _clips_to_chunks(clips)
    outs = []
    for start in range(0, chunks.shape[0], batch_size):
        outs.append(adapter.predict_proba(chunks[start : start + batch_size]).double())
    return torch.cat(outs, dim=0).numpy()


def inception_score(
    adapter: FrozenAdapter, clips, n_splits: int = IS_SPLITS, batch_size: int = 64
) -> float:
    return inception_score_from_probs(class_probs(adapter, clips, batch_size), n_splits)


def metric_report(
    metric: str,
    value: float,
    n_real: Optional[int] = None,
    n_fake: Optional[int] = None,
    embedder_digest: str = "",
    k: Optional[int] = None,
    splits: Optional[int] = None,
) -> dict:
    """Uniform JSON-ready record for one computed metric."""
    return {
        "metric": metric,
        "value": value,
        "n_real": n_real,
        "n_fake": n_fake,
        "embedder_digest": embedder_digest,
        "k": k,
        "splits": splits,
    }
