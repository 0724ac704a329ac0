"""Run configuration: documented keys, validation, presets."""

import dataclasses
import json
import math

from promptclip.errors import ConfigError

CHANNELS = 3


@dataclasses.dataclass
class RunConfig:
    """Every knob a run can turn.  Unknown keys are rejected by name."""

    d_p: int = 64                 # patch/token embedding width
    n_r: int = 20                 # learnable prompt count
    patch_size: int = 16          # pixels per patch side
    image_side: int = 64          # square image side, divisible by patch_size
    latent_dim: int = 32          # shared image/text latent width
    vocab_size: int = 512         # token vocabulary cap, incl. <unk>
    max_tokens: int = 76          # token sequence truncation length
    lr: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 200
    batch_size: int = 16
    tau_init: float = 1.0 / 0.07  # initial similarity temperature
    top_p: float = 20.0           # keyword retention percentage
    seed: int = 0
    use_prompt_pool: bool = True  # prompt-guided patch pooling on the image side
    use_visual_refine: bool = True  # vision-guided refinement on the text side
    augment_flips: bool = False   # random horizontal/vertical flips during training
    manifest: str | None = None
    out_dir: str | None = None
    checkpoint: str | None = None

    def validate(self):
        positive_ints = (
            "d_p", "n_r", "patch_size", "image_side", "latent_dim",
            "vocab_size", "max_tokens", "epochs", "batch_size", "seed",
        )
        for key in positive_ints:
            val = getattr(self, key)
            if not isinstance(val, int) or isinstance(val, bool) or val < 0:
                raise ConfigError(f"{key} must be a non-negative integer, got {val!r}")
        for key in ("d_p", "n_r", "patch_size", "image_side", "latent_dim",
                    "vocab_size", "max_tokens", "epochs", "batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key in ("lr", "weight_decay", "tau_init", "top_p"):
            val = getattr(self, key)
            if not isinstance(val, (int, float)) or isinstance(val, bool) \
                    or not math.isfinite(val):
                raise ConfigError(f"{key} must be a finite number, got {val!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.tau_init <= 0:
            raise ConfigError("tau_init must be positive")
        if not 0 < self.top_p <= 100:
            raise ConfigError("top_p must be in (0, 100]")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (contrastive negatives)")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2 (<unk> plus content)")
        if self.image_side % self.patch_size != 0:
            raise ConfigError(
                f"image_side {self.image_side} not divisible by patch_size {self.patch_size}"
            )
        for key in ("use_prompt_pool", "use_visual_refine", "augment_flips"):
            if not isinstance(getattr(self, key), bool):
                raise ConfigError(f"{key} must be a boolean")
        for key in ("manifest", "out_dir", "checkpoint"):
            val = getattr(self, key)
            if val is not None and not isinstance(val, str):
                raise ConfigError(f"{key} must be a string path or null")
        return self

    @property
    def patches_per_side(self):
        return self.image_side // self.patch_size

    @property
    def n_patches(self):
        return self.patches_per_side ** 2

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * CHANNELS

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key: {unknown[0]!r}")
        cfg = cls(**d)
        return cfg.validate()

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(d)

    def replace(self, **kw):
        cfg = dataclasses.replace(self, **kw)
        return cfg.validate()


# Published hyperparameters at full scale.  Not runnable on a desk; kept as
# a documented preset for --help and the README.
PAPER_PRESET = {
    "d_p": 768,
    "n_r": 20,
    "patch_size": 16,
    "image_side": 512,
    "latent_dim": 512,
    "max_tokens": 76,
    "lr": 1e-4,
    "weight_decay": 1e-5,
    "epochs": 80,
    "batch_size": 512,
    "tau_init": 1.0 / 0.07,
    "top_p": 20.0,
}

# Small shapes for exhaustive finite-difference runs (grad-check command).
GRADCHECK_PRESET = {
    "d_p": 8,
    "n_r": 3,
    "patch_size": 4,
    "image_side": 8,
    "latent_dim": 6,
    "vocab_size": 24,
    "max_tokens": 12,
    "batch_size": 2,
}
