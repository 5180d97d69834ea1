"""Adversarial training loop over projected features.

One step is a discriminator update on a fresh real/fake pair followed by
a generator update on new latents, then an EMA update of the generator
shadow. All randomness (real-batch choice, latents) is drawn from
per-step seed streams, so a run is a pure function of its config and
corpus: replaying a seed reproduces every loss and metric. Frozen
networks and projection weights are digest-checked at every evaluation;
non-finite losses abort with the last evaluated state attached.

The baseline mode swaps the projected discriminator bank for one
conventional trainable discriminator on raw clips and changes nothing
else, which is what makes wall-clock comparisons between the two
meaningful.
"""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch

from . import discriminators as disc_mod
from . import melpipe, metrics, projector
from .discriminators import BaselineDiscriminator, d_loss, g_loss, multi_discriminator_for
from .errors import ConfigError, TooFewClips, TrainingDiverged
from .featurenets import FrozenAdapter
from .generator import (
    Generator,
    GeneratorConfig,
    GeneratorEMA,
    generate_batch,
    sample_latents,
)

MODES = ("general", "domain", "fusion", "baseline")
CSV_HEADER = "step,seconds,fad,is"
CONVERGENCE_FACTOR = 1.5
# role tags keep the per-step seed streams disjoint
ROLE_REAL, ROLE_D_LATENT, ROLE_G_LATENT, ROLE_EVAL = 0, 1, 2, 3


@dataclass
class TrainConfig:
    mode: str = "fusion"
    steps: int = 2000
    batch_size: int = 16
    lr: float = 0.002
    beta1: float = 0.0
    beta2: float = 0.99
    ema_decay: float = 0.999
    seed: int = 0
    objective: str = "sum"
    eval_every: int = 200
    n_eval: int = 64
    compute_dc: bool = False
    max_seconds: Optional[float] = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not (self.lr > 0):
            raise ConfigError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if not (0 <= self.ema_decay < 1):
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be non-negative")
        if self.n_eval < 4:
            raise ConfigError("n_eval must be at least 4")
        if self.max_seconds is not None and not (self.max_seconds > 0):
            raise ConfigError("max_seconds must be positive when set")
        if self.objective not in disc_mod.OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if isinstance(self.generator, dict):
            self.generator = GeneratorConfig(**self.generator)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class EvalRecord:
    step: int
    seconds: float
    fad: float
    inception: float
    density: Optional[float] = None
    coverage: Optional[float] = None
    d_loss: Optional[float] = None
    g_loss: Optional[float] = None


@dataclass
class RunManifest:
    """Everything a finished (or aborted) run reports."""

    config: dict
    records: list
    tau: float
    converged_step: Optional[int]
    adapter_digests: dict
    projector_digests: list
    final_step: int
    checkpoints: list = field(default_factory=list)

    def save(self, out_dir: Union[str, Path]):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "config": self.config,
            "records": [asdict(r) for r in self.records],
            "tau": self.tau,
            "converged_step": self.converged_step,
            "adapter_digests": self.adapter_digests,
            "projector_digests": self.projector_digests,
            "final_step": self.final_step,
            "checkpoints": self.checkpoints,
        }
        (out / "run.json").write_text(json.dumps(payload, indent=2) + "\n")
        lines = [CSV_HEADER]
        for r in self.records:
            # repr keeps the shortest exact form, so the CSV round-trips
            # to the same floats the JSON and plot sidecar carry
            lines.append(f"{r.step},{r.seconds!r},{r.fad!r},{r.inception!r}")
        (out / "metrics.csv").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, out_dir: Union[str, Path]) -> "RunManifest":
        payload = json.loads((Path(out_dir) / "run.json").read_text())
        return cls(
            config=payload["config"],
            records=[EvalRecord(**r) for r in payload["records"]],
            tau=payload["tau"],
            converged_step=payload["converged_step"],
            adapter_digests=payload["adapter_digests"],
            projector_digests=payload["projector_digests"],
            final_step=payload["final_step"],
            checkpoints=payload.get("checkpoints", []),
        )


def convergence_threshold(real_embeddings: metrics.EmbeddingSet, n_splits: int = 3) -> float:
    """Convergence target: 1.5x the split-half distance of the real set.

    The split-half value is the noise floor a perfect generator would
    sit at for this corpus size, so hitting 1.5x of it means generated
    embeddings are statistically close to a fresh real sample.
    """
    vals = [metrics.split_half_fad(real_embeddings, seed=s) for s in range(n_splits)]
    return CONVERGENCE_FACTOR * float(np.mean(vals))


class Trainer:
    def __init__(
        self,
        corpus: melpipe.CorpusManifest,
        adapters: dict,
        config: Optional[TrainConfig] = None,
        embedder: Optional[metrics.RandomEmbedder] = None,
    ):
        self.config = config or TrainConfig()
        for kind in ("general", "domain"):
            adapter = adapters.get(kind)
            if adapter is None or adapter.kind != kind:
                raise ConfigError(f"need a frozen {kind!r} network for evaluation")
        self.adapters = adapters
        self.corpus = corpus

        clips = corpus.load_split("train")
        if len(clips) < self.config.batch_size:
            raise TooFewClips(
                f"train split has {len(clips)} clips, batch needs {self.config.batch_size}"
            )
        self.real = torch.from_numpy(
            np.stack([c.values for c in clips])[:, None]
        )

        torch.manual_seed(self.config.seed)
        self.generator = Generator(self.config.generator)
        self.ema = GeneratorEMA(self.generator, decay=self.config.ema_decay)
        if self.config.mode == "baseline":
            self.stacks = []
            self.discriminator = BaselineDiscriminator()
        else:
            self.stacks = projector.build_projectors(
                adapters, self.config.mode, self.config.seed
            )
            self.discriminator = multi_discriminator_for(self.stacks)
        betas = (self.config.beta1, self.config.beta2)
        self.opt_g = torch.optim.Adam(
            self.generator.parameters(), lr=self.config.lr, betas=betas
        )
        self.opt_d = torch.optim.Adam(
            self.discriminator.parameters(), lr=self.config.lr, betas=betas
        )

        self.embedder = embedder or metrics.RandomEmbedder()
        self.real_fad = metrics.embed_for_fad(adapters["general"], self.real[:, 0])
        self.real_dc = (
            metrics.embed_for_dc(self.embedder, self.real[:, 0])
            if self.config.compute_dc
            else None
        )
        self.tau = convergence_threshold(self.real_fad)

        self.step = 0
        self.train_seconds = 0.0
        self.records: list = []
        self._last_good = None

    # ------------------------------------------------------------ batches

    def _real_batch(self, step: int) -> torch.Tensor:
        rng = np.random.default_rng(
            np.random.SeedSequence((self.config.seed, step, ROLE_REAL))
        )
        n = self.real.shape[0]
        idx = rng.choice(n, size=self.config.batch_size, replace=n < self.config.batch_size)
        return self.real[torch.from_numpy(idx)]

    def _latents(self, step: int, role: int) -> torch.Tensor:
        return sample_latents(
            (self.config.seed, step, role),
            self.config.batch_size,
            self.config.generator.z_dim,
        )

    def _score(self, clips: torch.Tensor) -> list:
        if self.config.mode == "baseline":
            return self.discriminator(clips)
        return self.discriminator(projector.project(self.stacks, clips))

    # ------------------------------------------------------------ training

    def train_step(self) -> dict:
        """One discriminator update then one generator update."""
        self.step += 1
        step = self.step
        t0 = time.perf_counter()

        real = self._real_batch(step)
        with torch.no_grad():
            fake = self.generator(self._latents(step, ROLE_D_LATENT))
        d_rep = d_loss(
            self._score(real), self._score(fake), objective=self.config.objective
        )
        self._check_finite(d_rep.total, "discriminator")
        self.opt_d.zero_grad()
        d_rep.total.backward()
        self.opt_d.step()

        fake = self.generator(self._latents(step, ROLE_G_LATENT))
        g_rep = g_loss(self._score(fake), objective=self.config.objective)
        self._check_finite(g_rep.total, "generator")
        self.opt_g.zero_grad()
        g_rep.total.backward()
        self.opt_g.step()
        self.ema.update(self.generator)

        self.train_seconds += time.perf_counter() - t0
        return {
            "step": step,
            "d_loss": float(d_rep.total.detach()),
            "g_loss": float(g_rep.total.detach()),
            "d_report": d_rep,
            "g_report": g_rep,
        }

    def _check_finite(self, loss: torch.Tensor, which: str):
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"{which} loss became non-finite at step {self.step}",
                last_good_state=self._last_good,
            )

    # ------------------------------------------------------------ evaluation

    def verify_frozen(self):
        for adapter in self.adapters.values():
            adapter.verify()
        for stack in self.stacks:
            stack.adapter.verify()

    def evaluate(self, losses: Optional[dict] = None) -> EvalRecord:
        self.verify_frozen()
        fakes = self.sample_ema(self.config.n_eval)
        fake_fad = metrics.embed_for_fad(self.adapters["general"], fakes)
        fad_val = metrics.fad(self.real_fad, fake_fad)
        n_rows = 2 * self.config.n_eval
        is_val = metrics.inception_score(
            self.adapters["domain"], fakes, n_splits=min(metrics.IS_SPLITS, n_rows)
        )
        density = coverage = None
        if self.real_dc is not None:
            fake_dc = metrics.embed_for_dc(self.embedder, fakes)
            density, coverage = metrics.density_coverage(self.real_dc, fake_dc)
        record = EvalRecord(
            step=self.step,
            seconds=self.train_seconds,
            fad=fad_val,
            inception=is_val,
            density=density,
            coverage=coverage,
            d_loss=(losses or {}).get("d_loss"),
            g_loss=(losses or {}).get("g_loss"),
        )
        self.records.append(record)
        self._last_good = {
            "step": self.step,
            "generator": {k: v.clone() for k, v in self.generator.state_dict().items()},
            "ema": {k: v.clone() for k, v in self.ema.state_dict().items()},
            "discriminator": {
                k: v.clone() for k, v in self.discriminator.state_dict().items()
            },
        }
        return record

    def sample_ema(self, n: int) -> np.ndarray:
        """Deterministic EMA samples for the current step."""
        return generate_batch(
            self.ema.shadow, (self.config.seed, self.step, ROLE_EVAL), n
        )

    # ------------------------------------------------------------ run loop

    def run(self, out_dir: Optional[Union[str, Path]] = None) -> RunManifest:
        checkpoints = []

        def snapshot():
            if out_dir is None:
                return
            path = Path(out_dir) / f"checkpoint_{self.step:06d}.pt"
            self.save_checkpoint(path)
            checkpoints.append(str(path))

        losses = None
        budget = self.config.max_seconds
        for _ in range(self.config.steps):
            losses = self.train_step()
            if self.config.eval_every and self.step % self.config.eval_every == 0:
                self.evaluate(losses)
                snapshot()
            # wall-clock budget, for equal-time comparisons between modes
            if budget is not None and self.train_seconds >= budget:
                break
        if not self.records or self.records[-1].step != self.step:
            self.evaluate(losses)
            snapshot()
        converged = next(
            (r.step for r in self.records if r.fad <= self.tau), None
        )
        manifest = RunManifest(
            config=self.config.to_dict(),
            records=self.records,
            tau=self.tau,
            converged_step=converged,
            adapter_digests={k: a.digest for k, a in self.adapters.items()},
            projector_digests=[s.weight_digest() for s in self.stacks],
            final_step=self.step,
            checkpoints=checkpoints,
        )
        if out_dir is not None:
            manifest.save(out_dir)
        return manifest

    # ------------------------------------------------------------ checkpoints

    def save_checkpoint(self, path: Union[str, Path]):
        """Weight blob plus a small JSON header describing it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "step": self.step,
            "train_seconds": self.train_seconds,
            "config": self.config.to_dict(),
            "adapter_digests": {k: a.digest for k, a in self.adapters.items()},
            "projector_digests": [s.weight_digest() for s in self.stacks],
        }
        path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")
        torch.save(
            {
                "step": self.step,
                "train_seconds": self.train_seconds,
                "config": self.config.to_dict(),
                "generator": self.generator.state_dict(),
                "ema": self.ema.state_dict(),
                "discriminator": self.discriminator.state_dict(),
                "opt_g": self.opt_g.state_dict(),
                "opt_d": self.opt_d.state_dict(),
                "projector_seeds": [s.seed for s in self.stacks],
                "projector_digests": [s.weight_digest() for s in self.stacks],
                "adapter_digests": {k: a.digest for k, a in self.adapters.items()},
                "norm_stats": self.corpus.stats.to_dict(),
            },
            path,
        )

    def restore(self, path: Union[str, Path]):
        """Load a checkpoint saved by a trainer with the same config."""
        state = torch.load(path, weights_only=True)
        if state["config"] != self.config.to_dict():
            raise ConfigError("checkpoint config does not match this trainer")
        self.generator.load_state_dict(state["generator"])
        self.ema.load_state_dict(state["ema"])
        self.discriminator.load_state_dict(state["discriminator"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        self.step = state["step"]
        self.train_seconds = state["train_seconds"]
        digests = {k: a.digest for k, a in self.adapters.items()}
        if state["adapter_digests"] != digests:
            raise ConfigError("checkpoint was trained with different frozen networks")


def load_for_generation(path: Union[str, Path]) -> tuple[Generator, melpipe.NormStats]:
    """EMA generator weights plus the corpus normalization, enough to
    sample clips and reconstruct audio."""
    state = torch.load(path, weights_only=True)
    config = TrainConfig.from_dict(state["config"])
    gen = Generator(config.generator)
    gen.load_state_dict(state["ema"])
    gen.eval()
    stats = melpipe.NormStats.from_dict(state["norm_stats"])
    return gen, stats
