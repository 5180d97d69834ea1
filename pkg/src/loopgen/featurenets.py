"""Feature networks that supply frozen multi-scale taps for projection.

Two architectures cover the two roles: a residual short-chunk CNN used as
the domain classifier, and a plain VGG-style net with an embedding head
used as the general encoder. Both expose activations at four scales
(input resolution over 2, 4, 8, 16) so downstream projection code can
treat them uniformly. After training, ``freeze`` wraps a network in a
read-only adapter whose weight digest lets later stages verify that the
parameters never drift.
"""

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import melpipe
from .errors import ConfigError, InputError, ShapeError, TrainingDiverged

CHUNK_SHAPE = (melpipe.N_MELS, melpipe.N_FRAMES // 2)
N_SCALES = 4
SCNN_CHANNELS = (16, 32, 64, 128, 128, 128)
GENERAL_CHANNELS = (16, 32, 64, 128)
GENERAL_EMBED_DIM = 128
N_DISTRACTORS = 2  # colored-noise classes appended when training a general net


def _pool(x):
    # ceil mode keeps odd extents alive: 100 -> 50 -> 25 -> 13 -> 7 -> 4 -> 2
    return F.max_pool2d(x, kernel_size=2, ceil_mode=True)


class ResidualBlock(nn.Module):
    """Conv-BN-ReLU with an additive shortcut, then a 2x2 max-pool."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)
        if in_ch != out_ch:
            self.shortcut = nn.Conv2d(in_ch, out_ch, 1, bias=False)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        y = F.relu(self.bn(self.conv(x)))
        return _pool(y + self.shortcut(x))


class ShortChunkCNN(nn.Module):
    """Six residual blocks over a mel chunk, with a linear classifier head.

    Taps come from the first four blocks; the remaining two blocks only
    feed the classification head.
    """

    def __init__(self, class_count: int):
        super().__init__()
        if class_count < 1:
            raise ConfigError("class_count must be at least 1")
        chans = (1,) + SCNN_CHANNELS
        self.blocks = nn.ModuleList(
            ResidualBlock(chans[i], chans[i + 1]) for i in range(len(SCNN_CHANNELS))
        )
        self.head = nn.Linear(SCNN_CHANNELS[-1], class_count)
        self.class_count = class_count

    def taps(self, x):
        out = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < N_SCALES:
                out.append(x)
        return out, x

    def forward(self, x):
        _, x = self.taps(x)
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.head(x)


class GeneralNet(nn.Module):
    """Plain conv stages with an embedding head and an optional classifier.

    The embedding is what downstream metric code consumes; the classifier
    head only exists so the embedding can be trained with a supervised
    objective.
    """

    def __init__(self, embedding_dim: int, class_count: int):
        super().__init__()
        if embedding_dim < 1:
            raise ConfigError("embedding_dim must be at least 1")
        if class_count < 1:
            raise ConfigError("class_count must be at least 1")
        chans = (1,) + GENERAL_CHANNELS
        stages = []
        for i in range(len(GENERAL_CHANNELS)):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(chans[i], chans[i + 1], 3, padding=1, bias=False),
                    nn.BatchNorm2d(chans[i + 1]),
                    nn.ReLU(inplace=True),
                )
            )
        self.stages = nn.ModuleList(stages)
        self.embed_head = nn.Linear(GENERAL_CHANNELS[-1], embedding_dim)
        self.head = nn.Linear(embedding_dim, class_count)
        self.embedding_dim = embedding_dim
        self.class_count = class_count

    def taps(self, x):
        out = []
        for stage in self.stages:
            x = _pool(stage(x))
            out.append(x)
        return out, x

    def embed(self, x):
        _, x = self.taps(x)
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.embed_head(x)

    def forward(self, x):
        return self.head(self.embed(x))


def _state_digest(net: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(net.state_dict().items()):
        h.update(name.encode())
        arr = tensor.detach().cpu().numpy()
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class FeatureNetwork:
    """An architecture plus its role metadata and tap geometry."""

    kind: str  # "domain" or "general"
    net: nn.Module
    class_count: int
    embedding_dim: Optional[int]
    scale_specs: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("domain", "general"):
            raise ConfigError(f"unknown feature network kind {self.kind!r}")
        if not self.scale_specs:
            self.scale_specs = self._probe_scales()

    def _probe_scales(self):
        self.net.eval()
        with torch.no_grad():
            taps, _ = self.net.taps(torch.zeros(1, 1, *CHUNK_SHAPE))
        if len(taps) != N_SCALES:
            raise ShapeError(f"expected {N_SCALES} taps, got {len(taps)}")
        return [tuple(t.shape[1:]) for t in taps]

    def digest(self) -> str:
        return _state_digest(self.net)

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        self.net.eval()
        with torch.no_grad():
            return F.softmax(self.net(x), dim=1)


def build_scnn(class_count: int) -> FeatureNetwork:
    if class_count < 2:
        raise ConfigError("domain classifier needs at least 2 classes")
    return FeatureNetwork(
        kind="domain",
        net=ShortChunkCNN(class_count),
        class_count=class_count,
        embedding_dim=None,
    )


def build_general(embedding_dim: int = GENERAL_EMBED_DIM, class_count: int = 2) -> FeatureNetwork:
    return FeatureNetwork(
        kind="general",
        net=GeneralNet(embedding_dim, class_count),
        class_count=class_count,
        embedding_dim=embedding_dim,
    )


@dataclass
class TrainClassifierConfig:
    epochs: int = 12
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not (self.lr > 0):
            raise ConfigError("lr must be positive")


@dataclass
class EvalReport:
    """Held-out metrics for a trained classifier.

    ROC and PR AUC are absent (None) when the label set is degenerate,
    i.e. fewer than two classes appear in the test split.
    """

    accuracy: float
    roc_auc: Optional[float]
    pr_auc: Optional[float]
    best_epoch: int
    val_accuracy: float
    n_train: int
    n_val: int
    n_test: int

    def to_dict(self):
        return asdict(self)


def chunk_tensors(corpus: melpipe.CorpusManifest, split: str):
    """Load a split as (x, y) chunk tensors. Each clip yields two chunks."""
    tags = corpus.tags()
    label = {t: i for i, t in enumerate(tags)}
    xs, ys = [], []
    for entry in corpus.for_split(split):
        clip = corpus.load_clip(entry)
        for chunk in melpipe.split_chunks(clip):
            xs.append(torch.from_numpy(chunk.values[None]))
            ys.append(label[entry.tag])
    if not xs:
        raise InputError(f"split {split!r} is empty")
    return torch.stack(xs), torch.tensor(ys, dtype=torch.long)


def distractor_chunks(corpus: melpipe.CorpusManifest, seed: int, per_class: int):
    """Colored-noise chunks labeled after the corpus tags.

    The general embedder trains against these extra classes so its features
    key on broad spectral statistics rather than corpus identity alone. One
    class per spectral tilt: flat, then power falling as 1/f per step.
    """
    n_tags = len(corpus.tags())
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD157]))
    freqs = np.fft.rfftfreq(melpipe.CLIP_SAMPLES, 1.0 / melpipe.SAMPLE_RATE)
    xs, ys = [], []
    for j in range(N_DISTRACTORS):
        for _ in range(per_class):
            spec = np.fft.rfft(rng.standard_normal(melpipe.CLIP_SAMPLES))
            spec[1:] = spec[1:] / freqs[1:] ** (j / 2.0)
            wave = np.fft.irfft(spec, n=melpipe.CLIP_SAMPLES)
            wave = wave * (0.9 / max(np.max(np.abs(wave)), 1e-9))
            loop = melpipe.AudioLoop(wave, melpipe.SAMPLE_RATE, melpipe.TARGET_BPM)
            clip = melpipe.mel_spectrogram(loop, corpus.stats)
            for chunk in melpipe.split_chunks(clip):
                xs.append(torch.from_numpy(chunk.values[None]))
                ys.append(n_tags + j)
    return torch.stack(xs), torch.tensor(ys, dtype=torch.long)


def _split_metrics(net, x, y, class_count):
    from sklearn.metrics import average_precision_score, roc_auc_score

    net.eval()
    with torch.no_grad():
        logits = net(x)
        probs = F.softmax(logits, dim=1).numpy()
    pred = probs.argmax(axis=1)
    y_np = y.numpy()
    accuracy = float((pred == y_np).mean())
    present = np.unique(y_np)
    if len(present) < 2:
        return accuracy, None, None
    onehot = np.zeros((len(y_np), class_count))
    onehot[np.arange(len(y_np)), y_np] = 1.0
    # restrict to classes present so AUC stays defined on small splits
    roc = float(roc_auc_score(onehot[:, present], probs[:, present], average="macro"))
    pr = float(average_precision_score(onehot[:, present], probs[:, present], average="macro"))
    return accuracy, roc, pr


def train_classifier(
    fnet: FeatureNetwork,
    corpus: melpipe.CorpusManifest,
    config: Optional[TrainClassifierConfig] = None,
) -> tuple[FeatureNetwork, EvalReport]:
    """Supervised training on corpus tags; returns the best-val weights.

    The incoming network must have at least as many output classes as the
    corpus has tags (plus N_DISTRACTORS for a general net: its train split
    is augmented with colored-noise classes, while val and test stay pure
    corpus tags). Divergence (non-finite loss) raises TrainingDiverged
    carrying the last finite state.
    """
    config = config or TrainClassifierConfig()
    tags = corpus.tags()
    needed = len(tags) + (N_DISTRACTORS if fnet.kind == "general" else 0)
    if fnet.class_count < needed:
        raise ConfigError(
            f"network has {fnet.class_count} outputs but needs {needed} "
            f"({len(tags)} corpus tags)"
        )
    torch.manual_seed(config.seed)
    x_train, y_train = chunk_tensors(corpus, "train")
    x_val, y_val = chunk_tensors(corpus, "val")
    x_test, y_test = chunk_tensors(corpus, "test")
    if fnet.kind == "general":
        per_class = max(1, len(corpus.for_split("train")) // max(len(tags), 1))
        dx, dy = distractor_chunks(corpus, config.seed, per_class)
        x_train = torch.cat([x_train, dx])
        y_train = torch.cat([y_train, dy])

    net = fnet.net
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    best_state = {k: v.clone() for k, v in net.state_dict().items()}
    best_val, best_epoch = -1.0, 0
    n = len(x_train)
    for epoch in range(1, config.epochs + 1):
        net.train()
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss = F.cross_entropy(net(x_train[idx]), y_train[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_good_state=best_state
                )
            loss.backward()
            opt.step()
        val_acc, _, _ = _split_metrics(net, x_val, y_val, fnet.class_count)
        if val_acc > best_val:
            best_val, best_epoch = val_acc, epoch
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
    net.load_state_dict(best_state)
    accuracy, roc, pr = _split_metrics(net, x_test, y_test, fnet.class_count)
    report = EvalReport(
        accuracy=accuracy,
        roc_auc=roc,
        pr_auc=pr,
        best_epoch=best_epoch,
        val_accuracy=best_val,
        n_train=len(y_train),
        n_val=len(y_val),
        n_test=len(y_test),
    )
    return fnet, report


@dataclass
class FrozenAdapter:
    """Read-only wrapper: eval mode, no trainable parameters, pinned digest.

    Inputs still carry gradients through the frozen weights, which is what
    adversarial training needs.
    """

    network: FeatureNetwork
    digest: str = ""

    def __post_init__(self):
        net = self.network.net
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        if not self.digest:
            self.digest = self.network.digest()

    @property
    def kind(self):
        return self.network.kind

    @property
    def scale_specs(self):
        return self.network.scale_specs

    def verify(self):
        current = self.network.digest()
        if current != self.digest:
            raise ConfigError(
                "frozen feature network weights changed "
                f"(digest {current[:12]} != {self.digest[:12]})"
            )

    def predict_proba(self, x):
        return self.network.predict_proba(x)


def freeze(fnet: FeatureNetwork) -> FrozenAdapter:
    return FrozenAdapter(network=fnet)


def _as_batch(chunk) -> torch.Tensor:
    if isinstance(chunk, melpipe.Chunk):
        arr = chunk.values
    elif isinstance(chunk, np.ndarray):
        arr = chunk
    elif isinstance(chunk, torch.Tensor):
        t = chunk
        if t.dim() == 2:
            t = t[None, None]
        elif t.dim() == 3:
            t = t[:, None]
        if t.dim() != 4 or tuple(t.shape[1:]) != (1,) + CHUNK_SHAPE:
            raise ShapeError(f"expected chunks shaped {CHUNK_SHAPE}, got {tuple(chunk.shape)}")
        return t.float()
    else:
        raise InputError(f"cannot extract features from {type(chunk).__name__}")
    if arr.shape != CHUNK_SHAPE:
        raise ShapeError(f"expected chunk shape {CHUNK_SHAPE}, got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))[None, None]


def extract_scales(adapter: FrozenAdapter, chunk) -> list:
    """Run the frozen net on one chunk (or a prepared batch of chunks).

    Returns the four tap activations, shallowest first. No weight updates
    happen here, but the graph back to the input is kept intact.
    """
    x = _as_batch(chunk)
    taps, _ = adapter.network.net.taps(x)
    return taps


def save_feature_network(
    fnet: FeatureNetwork,
    path: Union[str, Path],
    train_config: Optional[TrainClassifierConfig] = None,
    corpus_id: str = "",
    report: Optional[EvalReport] = None,
):
    """Write weights plus a JSON header describing how to rebuild them."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(fnet.net.state_dict(), path.with_suffix(".pt"))
    header = {
        "kind": fnet.kind,
        "class_count": fnet.class_count,
        "embedding_dim": fnet.embedding_dim,
        "scale_specs": [list(s) for s in fnet.scale_specs],
        "digest": fnet.digest(),
        "train_config": asdict(train_config) if train_config else None,
        "corpus_id": corpus_id,
        "report": report.to_dict() if report else None,
        "pipeline_version": melpipe.PIPELINE_VERSION,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")


def load_feature_network(path: Union[str, Path]) -> FeatureNetwork:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header["kind"] == "domain":
        fnet = build_scnn(header["class_count"])
    else:
        fnet = build_general(header["embedding_dim"], header["class_count"])
    state = torch.load(path.with_suffix(".pt"), weights_only=True)
    fnet.net.load_state_dict(state)
    digest = fnet.digest()
    if digest != header["digest"]:
        raise ConfigError(
            f"checkpoint digest mismatch ({digest[:12]} != {header['digest'][:12]})"
        )
    specs = [tuple(s) for s in header["scale_specs"]]
    if specs != fnet.scale_specs:
        raise ShapeError("checkpoint scale_specs do not match rebuilt architecture")
    return fnet
