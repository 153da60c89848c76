"""Architecture configuration objects."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ovdet.errors import ConfigError

TEXT_MAX_LEN = 16


@dataclass(frozen=True)
class EncoderConfig:
    """Shared hyperparameters of the image and text towers.

    Both towers use the same width, so the text output dimension doubles as
    the shared query-embedding space.
    """

    image_size: int = 32
    patch_size: int = 8
    depth: int = 2
    width: int = 64
    n_heads: int = 4
    mlp_dim: int = 128
    text_vocab: int = 0
    text_max_len: int = TEXT_MAX_LEN
    droplayer_rate: float = 0.0
    channels: int = 3

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError("image_size must be divisible by patch_size")
        if self.width % self.n_heads != 0:
            raise ConfigError("width must be divisible by n_heads")
        if self.text_max_len != TEXT_MAX_LEN:
            raise ConfigError(f"text encoder input length is fixed at {TEXT_MAX_LEN} tokens")
        if not 0.0 <= self.droplayer_rate <= 1.0:
            raise ConfigError("droplayer_rate must be in [0, 1]")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid ** 2

    def check_capacity(self, max_instances: int):
        """The per-token predictor caps detections at one per token."""
        if self.n_tokens < max_instances:
            raise ConfigError(
                f"{self.n_tokens} tokens cannot cover {max_instances} instances per image")

    def with_image_size(self, image_size: int) -> "EncoderConfig":
        return EncoderConfig(**{**asdict(self), "image_size": image_size})


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    location_bias: bool = True
    size_bias: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d["encoder"])
        return ModelConfig(**d)
