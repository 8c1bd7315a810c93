"""
Encoder f_e and projector f_p.

Both are rectifier MLPs built from diffcore ops. Parameters are an ordered list of
(weight, bias) pairs: encoder layers first, then the projector hidden layer, then the
final affine map to the embedding dimension d. Embeddings are returned raw; batch
normalization is applied by the losses.
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from mixbt.core.exceptions import DimensionError
from mixbt.core.logging_config import get_logger
from mixbt.schemas import EncoderConfig, ProjectorConfig
from mixbt.utils import diffcore as dc
from mixbt.utils.diffcore import Tensor

logger = get_logger(__name__)


@dataclass
class ModelParams:
    layers: List[Tuple[Tensor, Tensor]]
    encoder_depth: int

    @property
    def tensors(self) -> List[Tensor]:
        return [t for pair in self.layers for t in pair]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layers[self.encoder_depth - 1][0].shape[1]

    def architecture(self) -> dict:
        widths = [w.shape[1] for w, _ in self.layers]
        return {
            "input_dim": self.input_dim,
            "hidden_dims": widths[:self.encoder_depth],
            "projector_hidden_dim": widths[self.encoder_depth],
            "d": widths[-1],
        }

    @classmethod
    def from_tensors(cls, tensors: Sequence[Tensor], encoder_depth: int) -> "ModelParams":
        """Rebuild from a flat [W1, b1, W2, b2, ...] list, checking that shapes chain."""
        if len(tensors) % 2:
            raise DimensionError("model", "parameter list must alternate weights and biases")
        layers = [(tensors[i], tensors[i + 1]) for i in range(0, len(tensors), 2)]
        if len(layers) != encoder_depth + 2:
            raise DimensionError("model", f"expected {encoder_depth + 2} layers, got {len(layers)}")
        for index, (weight, bias) in enumerate(layers):
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):
                raise DimensionError("model", f"layer {index}: weight {weight.shape} / bias {bias.shape}")
            if index and layers[index - 1][0].shape[1] != weight.shape[0]:
                raise DimensionError("model", f"layer {index} does not chain from layer {index - 1}")
        return cls(layers=layers, encoder_depth=encoder_depth)


def init_params(encoder: EncoderConfig, projector: ProjectorConfig, seed: int) -> ModelParams:
    """
    Draw weights from uniform(-s, s), s = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    """
    rng = np.random.default_rng(seed)
    widths = [encoder.input_dim, *encoder.hidden_dims, projector.hidden_dim, projector.output_dim]
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weight = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
        bias = Tensor(np.zeros(fan_out), requires_grad=True)
        layers.append((weight, bias))
    logger.debug(f"Initialised model {widths} with seed {seed}")
    return ModelParams(layers=layers, encoder_depth=len(encoder.hidden_dims))


def _affine(h: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return dc.add(dc.matmul(h, weight), dc.expand_rows(bias, h.shape[0]))


def _check_width(params: ModelParams, batch: Tensor) -> None:
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise DimensionError("forward", f"batch shape {batch.shape} does not match input_dim {params.input_dim}")


def encoder_features(params: ModelParams, batch: Tensor) -> Tensor:
    """Encoder output h (before the projector), unnormalized."""
    _check_width(params, batch)
    h = batch
    for weight, bias in params.layers[:params.encoder_depth]:
        h = dc.relu(_affine(h, weight, bias))
    return h


def forward(params: ModelParams, batch: Tensor) -> Tensor:
    """Raw N×d embeddings: encoder, projector hidden layer with rectifier, final affine."""
    h = encoder_features(params, batch)
    hidden_w, hidden_b = params.layers[params.encoder_depth]
    h = dc.relu(_affine(h, hidden_w, hidden_b))
    out_w, out_b = params.layers[-1]
    return _affine(h, out_w, out_b)


def extract_features(params: ModelParams, images: np.ndarray, chunk: int, projector: bool = False) -> np.ndarray:
    """Run the frozen network over `images` in chunks without recording a tape."""
    fn = forward if projector else encoder_features
    if images.shape[0] == 0:
        return np.zeros((0, params.output_dim if projector else params.feature_dim))
    pieces = []
    with dc.no_grad():
        for start in range(0, images.shape[0], chunk):
            pieces.append(fn(params, Tensor(images[start:start + chunk])).numpy())
    return np.concatenate(pieces, axis=0)
