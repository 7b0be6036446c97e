"""Run configuration: one flat record for the whole pipeline.

Config files are plain ``key = value`` text, UTF-8, one pair per line, with
``#`` comments and blank lines allowed. Every field below is settable from
a file; CLI flags override file values. ``to_text`` emits the fully
resolved config in the same format (this is also what ``--print-config``
echoes and what checkpoints embed).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .encoders import EncoderConfig
from .errors import ConfigError


@dataclass
class RunConfig:
    # image encoder
    image_size: int = 32
    patch_size: int = 8
    image_d_model: int = 32
    image_layers: int = 3
    image_heads: int = 4
    # text encoder
    text_d_model: int = 32
    text_layers: int = 3
    text_heads: int = 4
    vocab_size: int = 32
    max_context: int = 16
    # cross-modal fusion
    fusion_layers: int = 1
    fusion_heads: int = 4
    # objective
    local_loss_weight: float = 0.5
    temperature_global: float = 0.07
    temperature_local: float = 1.0
    # optimizer
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # training run
    batch_size: int = 16
    steps: int = 2000
    seed: int = 0
    # data
    corpus_path: str = "corpus.txt"
    checkpoint_path: str = "model.ckpt"
    n_pairs: int = 600
    noise_sigma: float = 0.1
    train_fraction: float = 0.8
    zero_shot_finding: int = 3  # -1 disables the template holdout
    # evaluation
    decision_threshold: float = 0.5
    # behavior flags
    residual_rollout: bool = False
    symmetric_local: bool = False
    keep_duplicates: bool = False

    def validate(self) -> None:
        if self.local_loss_weight < 0:
            raise ConfigError("local_loss_weight must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("contrastive training needs batch_size >= 2")
        if self.steps < 1:
            raise ConfigError("steps must be positive")
        if self.image_d_model != self.text_d_model:
            raise ConfigError(
                "image_d_model and text_d_model must match for cross-modal "
                f"fusion (got {self.image_d_model} vs {self.text_d_model})"
            )
        if self.image_d_model % self.fusion_heads != 0:
            raise ConfigError("d_model must divide by fusion_heads")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie strictly in (0, 1)")
        if self.temperature_global <= 0 or self.temperature_local <= 0:
            raise ConfigError("temperatures must be positive")
        # encoder invariants (divisibility etc.) checked by construction
        self.image_encoder_config()
        self.text_encoder_config()

    def validate_paths(self, need_corpus: bool = False, need_checkpoint: bool = False) -> None:
        if need_corpus and not Path(self.corpus_path).is_file():
            raise ConfigError(f"corpus not found: {self.corpus_path}")
        if need_checkpoint and not Path(self.checkpoint_path).is_file():
            raise ConfigError(f"checkpoint not found: {self.checkpoint_path}")
        parent = Path(self.checkpoint_path).resolve().parent
        if not parent.is_dir():
            raise ConfigError(f"checkpoint directory does not exist: {parent}")

    def image_encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            d_model=self.image_d_model,
            n_layers=self.image_layers,
            n_heads=self.image_heads,
            vocab_size=self.vocab_size,
            max_context=self.max_context,
        )

    def text_encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            d_model=self.text_d_model,
            n_layers=self.text_layers,
            n_heads=self.text_heads,
            vocab_size=self.vocab_size,
            max_context=self.max_context,
        )

    # ------------------------------------------------------------- text form

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, float):
                rendered = repr(value)
            else:
                rendered = str(value)
            lines.append(f"{f.name} = {rendered}")
        return "\n".join(lines) + "\n"

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type for f in fields(cls)}

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "RunConfig":
        cfg = cls()
        known = {f.name: f for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, _parse_value(key, raw, type(getattr(cfg, key))))
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_mapping(parse_config_text(Path(path).read_text(), source=str(path)))

    def apply_overrides(self, overrides: dict[str, object]) -> None:
        for key, value in overrides.items():
            if value is None:
                continue
            setattr(self, key, value)


def _parse_value(key: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false"):
                raise ValueError("expected true or false")
            return lowered == "true"
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    mapping: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping
