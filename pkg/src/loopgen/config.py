"""Run configuration files: one flat TOML or JSON document per run.

The document mirrors the training options plus the paths and export
switches the command line needs. Keys are validated strictly; a typo'd
or unknown key is a ConfigError rather than a silently ignored setting.
"""

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .generator import GeneratorConfig
from .trainer import TrainConfig


@dataclass
class RunConfig:
    # paths
    corpus: str = ""
    out_dir: str = "run"
    general_net: str = ""
    domain_net: str = ""
    # training
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
    # generator
    gen_z_dim: int = 32
    gen_w_dim: int = 64
    gen_widths: list = field(default_factory=lambda: [128, 128, 64, 32])
    gen_const_channels: int = 128
    gen_mapping_layers: int = 6
    gen_use_noise: bool = False
    # export options
    export_wav: bool = True
    export_png: bool = True

    def __post_init__(self):
        self.gen_widths = list(self.gen_widths)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            ema_decay=self.ema_decay,
            seed=self.seed,
            objective=self.objective,
            eval_every=self.eval_every,
            n_eval=self.n_eval,
            compute_dc=self.compute_dc,
            max_seconds=self.max_seconds,
            generator=GeneratorConfig(
                z_dim=self.gen_z_dim,
                w_dim=self.gen_w_dim,
                widths=tuple(self.gen_widths),
                const_channels=self.gen_const_channels,
                mapping_layers=self.gen_mapping_layers,
                use_noise=self.gen_use_noise,
            ),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: Union[str, Path]):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        if path.suffix == ".toml":
            data = tomllib.loads(path.read_text())
        elif path.suffix == ".json":
            data = json.loads(path.read_text())
        else:
            raise ConfigError(f"config must be .toml or .json, got {path.suffix!r}")
        if not isinstance(data, dict):
            raise ConfigError("config document must be a table of key = value pairs")
        return cls.from_dict(data)
