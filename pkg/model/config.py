"""Architecture hyperparameters of the dual-stream detector."""

from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ModelConfig(BaseModel):
    """Architecture hyperparameters; the parameter set is a pure function of these."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    input_side: int = Field(default=256, description="Side length s of the square RGB input", ge=32)
    heads: int = Field(default=8, description="Number of cross-attention heads h", ge=1)
    embed_width: int = Field(default=256, description="Token width entering the cross-attention encoder", ge=1)
    encoder_repeats: int = Field(default=2, description="Number of encoder blocks (independent parameters)", ge=1)
    mlp_ratio: int = Field(default=4, description="Hidden expansion of the encoder MLP", ge=1)
    channel_plan: List[int] = Field(
        default=[64, 128, 256],
        description="Output channels of Module a and the two downsampling modules before attention",
    )
    post_channel_plan: List[int] = Field(
        default=[256, 256],
        description="Output channels of the two downsampling modules after attention",
    )
    enable_residual_stream: bool = Field(default=True, description="Keep the SRM residual stream")
    enable_content_stream: bool = Field(default=True, description="Keep the content stream")
    enable_cma: bool = Field(default=True, description="Keep the cross multi-head attention encoder")
    seed: int = Field(default=0, description="Parameter initialization seed")

    @field_validator("channel_plan")
    @classmethod
    def _three_pre_stages(cls, value: List[int]) -> List[int]:
        if len(value) != 3 or any(c < 1 for c in value):
            raise ValueError(f"channel_plan needs three positive widths, got {value}")
        return value

    @field_validator("post_channel_plan")
    @classmethod
    def _two_post_stages(cls, value: List[int]) -> List[int]:
        if len(value) != 2 or any(c < 1 for c in value):
            raise ValueError(f"post_channel_plan needs two positive widths, got {value}")
        return value

    @model_validator(mode="after")
    def _check_invariants(self) -> "ModelConfig":
        if self.input_side % 32 != 0:
            raise ValueError(f"input_side ({self.input_side}) must be divisible by 32")
        if self.embed_width % self.heads != 0:
            raise ValueError(f"embed_width ({self.embed_width}) must be divisible by heads ({self.heads})")
        if not (self.enable_residual_stream or self.enable_content_stream):
            raise ValueError("at least one stream must be enabled")
        if self.enable_cma and not (self.enable_residual_stream and self.enable_content_stream):
            raise ValueError("enable_cma requires both streams")
        if self.channel_plan[-1] != self.embed_width:
            raise ValueError(
                f"channel_plan[-1] ({self.channel_plan[-1]}) must equal embed_width ({self.embed_width})"
            )
        return self

    @property
    def head_width(self) -> int:
        """Per-head width d_k."""
        return self.embed_width // self.heads

    @property
    def feature_side(self) -> int:
        """Spatial side of the pre-attention feature maps (s/8)."""
        return self.input_side // 8

    @property
    def token_count(self) -> int:
        """Tokens per sample (s²/64)."""
        return self.feature_side ** 2

    @property
    def stream_count(self) -> int:
        return int(self.enable_residual_stream) + int(self.enable_content_stream)

    @property
    def classifier_width(self) -> int:
        return self.post_channel_plan[-1] * self.stream_count
