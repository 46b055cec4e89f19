"""Run configuration: a single JSON file of nested key/value sections."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .attention import EncoderConfig
from .heads import HeadConfig


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-5
    warmup_fraction: float = 0.1
    epochs: int = 10
    batch_size: int = 32

    def __post_init__(self):
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class PretrainConfig:
    steps: int = 200
    learning_rate: float = 1e-3
    warmup_fraction: float = 0.1
    batch_size: int = 4
    min_span_len: int = 1
    max_span_len: int = 10


@dataclass
class Paths:
    schema: str = "schema.json"
    dialogues: str = "dialogues.json"
    dev_dialogues: str | None = None
    vocab: str = "vocab.json"
    params: str = "params.bin"
    init_params: str | None = None
    corpus: str = "rss_corpus.txt"
    output: str = "out"
    variants: list[str] = field(default_factory=list)


@dataclass
class SynthConfig:
    n_services: int = 4
    n_dialogues: int = 64
    n_variants: int = 2


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    paths: Paths = field(default_factory=Paths)
    seed: int = 0
    matching_mode: str = "fuzzy"
    fuzzy_threshold: float = 0.9
    # Relative paths resolve against this directory (the config file's location).
    base_dir: str = "."

    def path(self, name: str) -> Path | None:
        value = getattr(self.paths, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        sections = {"encoder": EncoderConfig, "head": HeadConfig, "optimizer": OptimizerConfig,
                    "pretrain": PretrainConfig, "synth": SynthConfig, "paths": Paths}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in d.items():
            if k in sections:
                sub = sections[k]
                bad = set(v) - {f.name for f in fields(sub)}
                if bad:
                    raise ValueError(f"unknown keys in [{k}]: {sorted(bad)}")
                kwargs[k] = sub(**v)
            else:
                kwargs[k] = v
        kwargs.setdefault("base_dir", str(base_dir))
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def desk_config(**overrides) -> RunConfig:
    """Small CPU configuration: 2 layers, width 64, 4 heads, half-window 16.

    Trained from scratch for 10 epochs, so it differs from the large-model
    defaults: fan-in weight init, no dropout, one example per update at
    peak lr 7e-4, and head MLPs twice the encoder width.
    """
    cfg = RunConfig(
        encoder=EncoderConfig(n_layers=2, d_model=64, n_heads=4, d_ff=128, window_w=16,
                              max_seq_len=512, dropout_rate=0.0, weight_init="fan_in"),
        head=HeadConfig(l_ans=30, d_model=64, d_hidden=128),
        optimizer=OptimizerConfig(learning_rate=7e-4, warmup_fraction=0.1, epochs=10, batch_size=1),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg
