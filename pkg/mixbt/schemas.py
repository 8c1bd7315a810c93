from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional, Union

# --- Model architecture ---

class EncoderConfig(BaseModel):
    input_dim: int = Field(ge=1, description="Flattened pixel count D.")
    hidden_dims: List[int] = Field(min_length=1)
    activation: Literal["relu"] = "relu"

    @field_validator("hidden_dims")
    @classmethod
    def _positive_widths(cls, widths: List[int]) -> List[int]:
        if any(w < 1 for w in widths):
            raise ValueError("all encoder widths must be >= 1")
        return widths

class ProjectorConfig(BaseModel):
    hidden_dim: int = Field(ge=1)
    output_dim: int = Field(ge=2, description="Embedding dimension d.")

# --- Augmentation ---

class AugmentConfig(BaseModel):
    crop_scale_min: float = Field(default=0.6, gt=0.0, le=1.0)
    crop_scale_max: float = Field(default=1.0, gt=0.0, le=1.0)
    flip_p: float = Field(default=0.5, ge=0.0, le=1.0)
    jitter_p: float = Field(default=0.8, ge=0.0, le=1.0)
    contrast_min: float = Field(default=0.8, gt=0.0)
    contrast_max: float = Field(default=1.2, gt=0.0)
    brightness_delta: float = Field(default=0.1, ge=0.0)
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _ordered_ranges(self) -> "AugmentConfig":
        if self.crop_scale_min > self.crop_scale_max:
            raise ValueError("crop_scale_min must not exceed crop_scale_max")
        if self.contrast_min > self.contrast_max:
            raise ValueError("contrast_min must not exceed contrast_max")
        return self

    @classmethod
    def identity(cls) -> "AugmentConfig":
        """A configuration under which both views equal the input images."""
        return cls(crop_scale_min=1.0, crop_scale_max=1.0, flip_p=0.0, jitter_p=0.0)

# --- Objective and schedule ---

class LossWeights(BaseModel):
    lambda_bt: float = Field(default=0.0078125, ge=0.0)
    lambda_reg: float = Field(default=4 * 0.0078125, ge=0.0)
    tau: float = Field(default=0.5, gt=0.0)

class Schedule(BaseModel):
    base_lr: float = Field(ge=0.0)
    warmup_epochs: int = Field(ge=0)
    total_epochs: int = Field(ge=1)

    @model_validator(mode="after")
    def _warmup_before_end(self) -> "Schedule":
        if self.warmup_epochs >= self.total_epochs:
            raise ValueError("warmup_epochs must be smaller than total_epochs")
        return self

# --- Data ---

class DatasetMeta(BaseModel):
    height: int = Field(ge=1)
    width: int = Field(ge=1)
    channels: int = Field(ge=1)
    class_count: int = Field(ge=1)
    name: str

    @property
    def pixels(self) -> int:
        return self.height * self.width * self.channels

class SyntheticSpec(BaseModel):
    """Parameters of a generated dataset; also parsed from `synthetic:key=value,...` strings."""
    classes: int = Field(default=2, ge=1)
    per_class: int = Field(default=500, ge=1)
    dim: int = Field(default=64, ge=1)
    separation: float = Field(default=10.0, ge=0.0)
    seed: int = Field(default=0, ge=0)

    class Config:
        extra = "forbid"

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        prefix = "synthetic"
        if not text.startswith(prefix):
            raise ValueError(f"not a synthetic dataset spec: {text!r}")
        body = text[len(prefix):].lstrip(":")
        fields: Dict[str, Any] = {}
        for item in filter(None, body.split(",")):
            key, _, value = item.partition("=")
            fields[key.strip()] = value.strip()
        return cls(**fields)

# --- Run configuration ---

Objective = Literal["bt", "mixbt", "infonce"]

IMAGE_CROP_SCALE_MIN = 0.6
IMAGE_FLIP_P = 0.5

class RunConfig(BaseModel):
    """
    Every hyperparameter of a pre-training run. Keys map one-to-one onto the flat YAML
    run config; unknown keys are rejected.
    """
    # data
    dataset: Literal["synthetic", "cifar10", "cifar100", "tinyimagenet", "stl10"] = "synthetic"
    data_dir: Optional[str] = None
    max_per_class: Optional[int] = Field(default=None, ge=1)
    synthetic_classes: int = Field(default=2, ge=1)
    synthetic_per_class: int = Field(default=500, ge=1)
    synthetic_test_per_class: int = Field(default=100, ge=1)
    synthetic_dim: int = Field(default=64, ge=1)
    synthetic_separation: float = Field(default=10.0, ge=0.0)

    # architecture
    hidden_dims: List[int] = Field(default_factory=lambda: [256, 128], min_length=1)
    projector_hidden_dim: int = Field(default=256, ge=1)
    d: int = Field(default=64, ge=2, le=8192)

    # objective
    objective: Objective = "mixbt"
    lambda_bt: Union[float, Literal["inverse_d"]] = 0.0078125
    lambda_reg: Optional[float] = Field(default=None, ge=0.0, description="Defaults to 4 x lambda_bt.")
    alpha: float = Field(default=1.0, gt=0.0)
    tau: float = Field(default=0.5, gt=0.0)

    # optimisation
    batch_size: int = Field(default=256, ge=2)
    epochs: int = Field(default=100, ge=1)
    warmup_epochs: int = Field(default=10, ge=0)
    base_lr: float = Field(default=0.01, ge=0.0)
    weight_decay: float = Field(default=1e-6, ge=0.0)
    seed: Optional[int] = Field(default=None, ge=0)

    # evaluation
    eval_every: int = Field(default=5, ge=1)
    knn_k: Optional[int] = Field(default=None, ge=1)
    knn_temperature: float = Field(default=0.5, gt=0.0)
    linear_probe: bool = False
    linear_probe_epochs: int = Field(default=100, ge=1)
    linear_probe_batch_size: int = Field(default=512, ge=1)
    linear_probe_lr: float = Field(default=1e-3, gt=0.0)
    linear_probe_gamma: float = Field(default=0.97, gt=0.0, le=1.0)

    # augmentation; crop_scale_min and flip_p default per dataset (see _resolve)
    crop_scale_min: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    crop_scale_max: float = Field(default=1.0, gt=0.0, le=1.0)
    flip_p: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    jitter_p: float = Field(default=0.8, ge=0.0, le=1.0)
    contrast_min: float = Field(default=0.8, gt=0.0)
    contrast_max: float = Field(default=1.2, gt=0.0)
    brightness_delta: float = Field(default=0.1, ge=0.0)
    augment_workers: int = Field(default=1, ge=1)

    class Config:
        extra = "forbid"

    @field_validator("hidden_dims")
    @classmethod
    def _positive_widths(cls, widths: List[int]) -> List[int]:
        if any(w < 1 for w in widths):
            raise ValueError("all encoder widths must be >= 1")
        return widths

    @field_validator("lambda_bt")
    @classmethod
    def _non_negative_lambda_bt(cls, value):
        if isinstance(value, float) and value < 0:
            raise ValueError("lambda_bt must be >= 0")
        return value

    @model_validator(mode="after")
    def _resolve(self) -> "RunConfig":
        if self.lambda_bt == "inverse_d":
            self.lambda_bt = 1.0 / self.d
        if self.lambda_reg is None:
            self.lambda_reg = 4.0 * self.lambda_bt
        # synthetic vectors have no spatial layout: crops and flips would only scramble them
        geometric = self.dataset != "synthetic"
        if self.crop_scale_min is None:
            self.crop_scale_min = IMAGE_CROP_SCALE_MIN if geometric else self.crop_scale_max
        if self.flip_p is None:
            self.flip_p = IMAGE_FLIP_P if geometric else 0.0
        if self.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs")
        if self.dataset != "synthetic" and not self.data_dir:
            raise ValueError(f"dataset '{self.dataset}' needs data_dir")
        # surfaces range errors with the same messages as the nested model
        self.augment_config()
        return self

    def encoder_config(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(input_dim=input_dim, hidden_dims=list(self.hidden_dims))

    def projector_config(self) -> ProjectorConfig:
        return ProjectorConfig(hidden_dim=self.projector_hidden_dim, output_dim=self.d)

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            crop_scale_min=self.crop_scale_min,
            crop_scale_max=self.crop_scale_max,
            flip_p=self.flip_p,
            jitter_p=self.jitter_p,
            contrast_min=self.contrast_min,
            contrast_max=self.contrast_max,
            brightness_delta=self.brightness_delta,
            workers=self.augment_workers,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_bt=self.lambda_bt, lambda_reg=self.lambda_reg, tau=self.tau)

    def schedule(self) -> Schedule:
        return Schedule(base_lr=self.base_lr, warmup_epochs=self.warmup_epochs, total_epochs=self.epochs)

    def synthetic_spec(self, seed: int, test: bool = False) -> SyntheticSpec:
        # the held-out split shares class centres and draws fresh noise
        return SyntheticSpec(
            classes=self.synthetic_classes,
            per_class=self.synthetic_test_per_class if test else self.synthetic_per_class,
            dim=self.synthetic_dim,
            separation=self.synthetic_separation,
            seed=seed + 1 if test else seed,
        )
