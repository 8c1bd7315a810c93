"""
Stochastic views and mixed batches.

Each sample's augmentation draws from its own stream keyed by
(seed, epoch, sample_index, view_id), so a view depends only on those four integers:
batch composition, order and worker count do not change it.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from mixbt.core.exceptions import InputRangeError, ParameterError, PermutationError
from mixbt.core.logging_config import get_logger
from mixbt.schemas import AugmentConfig
from mixbt.utils.diffcore import Tensor
from mixbt.utils.rng import VIEW_STREAM, keyed_rng

logger = get_logger(__name__)

ImageShape = Tuple[int, int, int]  # channels, height, width (channel-planar)


@dataclass
class ViewPair:
    y_a: Tensor
    y_b: Tensor
    stream_keys: List[Tuple[int, int, int]]  # (seed, epoch, sample_index) per row


@dataclass
class MixedBatch:
    y_m: Tensor
    lam: float
    perm: np.ndarray


def hflip(image: np.ndarray) -> np.ndarray:
    """Mirror a (C, H, W) image left to right."""
    return image[:, :, ::-1].copy()


def _resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    # corner-aligned sampling: same-size resize returns the input exactly
    _, h, w = image.shape
    ys = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = image[:, y0][:, :, x0] * (1.0 - wx) + image[:, y0][:, :, x1] * wx
    bottom = image[:, y1][:, :, x0] * (1.0 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def crop_and_resize(image: np.ndarray, scale: float, u_top: float, u_left: float) -> np.ndarray:
    """Crop a `scale`-sized window at a relative offset and resize it back to full size."""
    _, h, w = image.shape
    crop_h = min(h, max(1, int(round(scale * h))))
    crop_w = min(w, max(1, int(round(scale * w))))
    top = min(int(u_top * (h - crop_h + 1)), h - crop_h)
    left = min(int(u_left * (w - crop_w + 1)), w - crop_w)
    window = image[:, top:top + crop_h, left:left + crop_w]
    if window.shape[1:] == (h, w):
        return window.copy()
    return _resize_bilinear(window, h, w)


def augment_sample(pixels: np.ndarray, image_shape: ImageShape, cfg: AugmentConfig,
                   rng: np.random.Generator) -> np.ndarray:
    # every draw happens regardless of the probabilities so streams stay aligned across configs
    scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max)
    u_top, u_left = rng.random(2)
    flip_u = rng.random()
    jitter_u = rng.random()
    contrast = rng.uniform(cfg.contrast_min, cfg.contrast_max)
    brightness = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta)

    image = pixels.reshape(image_shape)
    image = crop_and_resize(image, scale, u_top, u_left)
    if flip_u < cfg.flip_p:
        image = hflip(image)
    if jitter_u < cfg.jitter_p:
        image = np.clip(image * contrast + brightness, 0.0, 1.0)
    return image.reshape(-1)


def _augment_row(pixels, image_shape, cfg, seed, epoch, index, view_id) -> np.ndarray:
    return augment_sample(pixels, image_shape, cfg, keyed_rng(VIEW_STREAM, seed, epoch, index, view_id))


def make_views(images: Tensor, epoch: int, cfg: AugmentConfig, *, image_shape: ImageShape,
               seed: int, indices: Optional[Sequence[int]] = None) -> ViewPair:
    """
    Two independently augmented copies of `images` (N×D, values in [0, 1]).

    `indices` are the dataset indices of the rows and key the per-sample streams; they
    default to 0..N-1.
    """
    data = images.data
    if data.size and (data.min() < 0.0 or data.max() > 1.0):
        raise InputRangeError(f"pixel values must lie in [0, 1], got [{data.min()}, {data.max()}]")
    n = data.shape[0]
    indices = list(range(n)) if indices is None else [int(i) for i in indices]
    if len(indices) != n:
        raise InputRangeError(f"{len(indices)} stream indices for {n} images")

    jobs = [(row, view) for view in (0, 1) for row in range(n)]
    if cfg.workers > 1:
        outputs = Parallel(n_jobs=cfg.workers, prefer="threads")(
            delayed(_augment_row)(data[row], image_shape, cfg, seed, epoch, indices[row], view)
            for row, view in jobs
        )
    else:
        outputs = [_augment_row(data[row], image_shape, cfg, seed, epoch, indices[row], view) for row, view in jobs]
    y_a = np.stack(outputs[:n]) if n else np.zeros_like(data)
    y_b = np.stack(outputs[n:]) if n else np.zeros_like(data)
    return ViewPair(y_a=Tensor(y_a), y_b=Tensor(y_b), stream_keys=[(seed, epoch, i) for i in indices])


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """Draw the mix ratio from Beta(alpha, alpha), strictly inside (0, 1)."""
    if not alpha > 0:
        raise ParameterError(f"Beta concentration alpha must be > 0, got {alpha}")
    while True:
        if alpha == 1.0:
            lam = rng.random()
        else:
            g1, g2 = rng.standard_gamma(alpha), rng.standard_gamma(alpha)
            if g1 + g2 == 0.0:
                continue
            lam = g1 / (g1 + g2)
        if 0.0 < lam < 1.0:
            return float(lam)


def validate_permutation(perm, n: int) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (n,) or not np.issubdtype(perm.dtype, np.integer):
        raise PermutationError(f"expected {n} integer indices, got shape {perm.shape} ({perm.dtype})")
    if not np.array_equal(np.sort(perm), np.arange(n)):
        raise PermutationError(details={"perm": perm.tolist()})
    return perm.astype(np.int64)


def mix_batch(pair: ViewPair, lam: float, perm) -> MixedBatch:
    """Y^M = lam * Y^A + (1 - lam) * Y^B[perm]."""
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"mix ratio must lie in [0, 1], got {lam}")
    perm = validate_permutation(perm, pair.y_a.shape[0])
    y_m = lam * pair.y_a.data + (1.0 - lam) * pair.y_b.data[perm]
    return MixedBatch(y_m=Tensor(y_m), lam=float(lam), perm=perm)
