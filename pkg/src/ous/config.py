"""Run configuration: nested dataclasses with strict JSON round-tripping."""

import dataclasses
import json
import typing
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class GeneratorConfig:
    seed: int = 0
    clips_per_class: int = 200
    T: int = 8
    C: int = 3
    H: int = 64
    W: int = 64
    face_size: int = 32
    ambiguous_fraction: float = 0.5
    val_fraction: float = 0.2
    noise_std: float = 0.03

    def validate(self, patch=None):
        if not 0 <= self.seed < 2**64:
            raise ConfigError("data.seed must be an unsigned 64-bit integer")
        for name in ("clips_per_class", "T", "C", "H", "W", "face_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"data.{name} must be positive")
        if not 0 <= self.ambiguous_fraction <= 1:
            raise ConfigError("data.ambiguous_fraction must lie in [0, 1]")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("data.val_fraction must lie in (0, 1)")
        if self.noise_std < 0:
            raise ConfigError("data.noise_std must be non-negative")
        if self.H < 2 * self.face_size or self.W < 2 * self.face_size:
            raise ConfigError("frame extents must be at least twice face_size")
        if patch is not None:
            for name in ("H", "W", "face_size"):
                if getattr(self, name) % patch:
                    raise ConfigError(f"data.{name} must be divisible by patch {patch}")


@dataclass
class VisionEncoderConfig:
    patch: int = 16
    D: int = 64
    depth: int = 6
    heads: int = 4
    early_blocks: int = 4
    mlp_ratio: int = 4
    seed: int = 20240529

    def validate(self):
        if self.D % self.heads:
            raise ConfigError("vision.D must be divisible by vision.heads")
        if not 1 <= self.early_blocks < self.depth:
            raise ConfigError("vision.depth must exceed vision.early_blocks")


@dataclass
class StreamConfig:
    F: int = 64
    F_p: int = 32
    frames_depth: int = 1
    frames_heads: int = 4
    conv_kernel: int = 3
    scene_input: str = "full"

    def validate(self):
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError("streams.conv_kernel must be a positive odd number")
        if self.scene_input not in ("full", "zero"):
            raise ConfigError("streams.scene_input must be 'full' or 'zero'")


@dataclass
class TFEConfig:
    blocks: int = 12
    n_q: int = 8
    D_f: int = 64
    heads: int = 4
    mlp_hidden: int = 256
    mu: float = 0.0
    sigma: float = 0.02
    residual: bool = True
    fusion: str = "tfe"

    def validate(self):
        if self.blocks < 1 or self.n_q < 1:
            raise ConfigError("tfe.blocks and tfe.n_q must be positive")
        if self.D_f % self.heads:
            raise ConfigError("tfe.D_f must be divisible by tfe.heads")
        if self.sigma < 0:
            raise ConfigError("tfe.sigma must be non-negative")
        if self.fusion not in ("tfe", "mean_pool"):
            raise ConfigError("tfe.fusion must be 'tfe' or 'mean_pool'")


@dataclass
class TextConfig:
    prompt_length: int = 64
    D_t: int = 64
    depth: int = 2
    heads: int = 4
    tau_init: float = 0.07
    context_std: float = 0.02
    vocab_seed: int = 7
    pair_contrast_weight: float = 0.0

    def validate(self):
        if self.prompt_length < 1:
            raise ConfigError("text.prompt_length must be positive")
        if self.D_t % self.heads:
            raise ConfigError("text.D_t must be divisible by text.heads")
        if self.tau_init <= 0:
            raise ConfigError("text.tau_init must be positive")


@dataclass
class TrainConfig:
    lr: float = 0.002
    batch: int = 16
    max_epochs: int = 60
    plateau_patience: int = 5
    lr_decay_factor: float = 1 / 3
    lr_floor: float = 1e-7
    overfit_guard: float = 0.99
    seed: int = 0
    loss_strategy: str = "global"

    def validate(self):
        if self.lr <= 0 or self.lr_floor <= 0:
            raise ConfigError("train.lr and train.lr_floor must be positive")
        if self.batch < 1 or self.max_epochs < 1 or self.plateau_patience < 1:
            raise ConfigError("train.batch, max_epochs and plateau_patience must be positive")
        if not 0 < self.lr_decay_factor < 1:
            raise ConfigError("train.lr_decay_factor must lie in (0, 1)")
        if not 0 < self.overfit_guard <= 1:
            raise ConfigError("train.overfit_guard must lie in (0, 1]")
        if self.loss_strategy not in ("global", "ce_only"):
            raise ConfigError("train.loss_strategy must be 'global' or 'ce_only'")


@dataclass
class GateConfig:
    alpha: float = 2.0

    def validate(self):
        if self.alpha < 0:
            raise ConfigError("gate.alpha must be non-negative")


@dataclass
class RunConfig:
    data: GeneratorConfig = field(default_factory=GeneratorConfig)
    vision: VisionEncoderConfig = field(default_factory=VisionEncoderConfig)
    streams: StreamConfig = field(default_factory=StreamConfig)
    tfe: TFEConfig = field(default_factory=TFEConfig)
    text: TextConfig = field(default_factory=TextConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    output_dir: str = "runs/default"

    def validate(self):
        self.data.validate(patch=self.vision.patch)
        for section in (self.vision, self.streams, self.tfe, self.text, self.train, self.gate):
            section.validate()
        if self.vision.D % self.streams.frames_heads:
            raise ConfigError("vision.D must be divisible by streams.frames_heads")
        if self.tfe.fusion == "mean_pool" and self.streams.F != self.tfe.D_f:
            raise ConfigError("mean_pool fusion needs streams.F == tfe.D_f")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, raw):
        return _build(cls, raw, "").validate()

    @classmethod
    def from_json(cls, text):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def replace(self, **sections):
        """Copy with some fields of some sections overridden.

        ``cfg.replace(train={"lr": 1e-3}, tfe={"blocks": 8})``
        """
        raw = self.to_dict()
        for key, value in sections.items():
            if isinstance(value, dict):
                if key not in raw or not isinstance(raw[key], dict):
                    raise ConfigError(f"unknown section {key!r}")
                raw[key].update(value)
            else:
                raw[key] = value
        return RunConfig.from_dict(raw)


def _build(cls, raw, path):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        kind = hints[name]
        where = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(kind):
            kwargs[name] = _build(kind, value, where)
        else:
            kwargs[name] = _coerce(kind, value, where)
    return cls(**kwargs)


def _coerce(kind, value, where):
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"{where} must be of type {kind.__name__}, got {value!r}")
