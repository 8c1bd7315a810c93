"""Objective registry.

Maps objective names from the run config ("bt", "mixbt", "infonce") to the functions that
turn a pair of augmented views into a `LossBreakdown`, using the same decorator-based
registration as the rest of the services. The trainer looks objectives up by name and
never branches on them itself.
"""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from mixbt.core.exceptions import ConfigurationError
from mixbt.core.logging_config import get_logger
from mixbt.schemas import LossWeights
from mixbt.services.augment import ViewPair, mix_batch, sample_lambda
from mixbt.services.losses import (
    LossBreakdown,
    barlow_twins_loss,
    cross_correlation,
    ground_truth_cc,
    info_nce_loss,
    mixup_reg_loss,
    normalize_embeddings,
    total_loss,
)
from mixbt.services.model import ModelParams, forward
from mixbt.utils.diffcore import Tensor
from mixbt.utils.rng import MIX_STREAM, keyed_rng

logger = get_logger(__name__)


@dataclass
class StepContext:
    """Keys of the current step; objectives record the mixing draw here for diagnostics."""
    seed: int
    epoch: int
    step: int
    alpha: float = 1.0
    lam: Optional[float] = None
    perm: Optional[np.ndarray] = None


# An objective takes (params, views, weights, ctx) and returns the step's LossBreakdown.
Objective = Callable[[ModelParams, ViewPair, LossWeights, StepContext], LossBreakdown]


class ObjectiveRegistry:
    """A registry for training objectives."""
    def __init__(self):
        self._registry: Dict[str, Objective] = {}

    def register(self, name: str) -> Callable[[Objective], Objective]:
        """Returns a decorator that registers an objective function."""
        def decorator(fn: Objective) -> Objective:
            logger.debug(f"Registering objective: '{name}'")
            if name in self._registry:
                logger.warning(f"Objective '{name}' is already registered. Overwriting with {fn.__name__}")
            self._registry[name] = fn
            return fn
        return decorator

    def get(self, name: str) -> Objective:
        try:
            return self._registry[name]
        except KeyError:
            raise ConfigurationError(
                f"Unknown objective '{name}'. Available: {', '.join(self.names())}", key="objective"
            ) from None

    def names(self) -> List[str]:
        return sorted(self._registry)


objective_registry = ObjectiveRegistry()


def mix_draw(seed: int, epoch: int, step: int, alpha: float, n: int):
    """(lam, perm) for one step, from the step's own keyed stream."""
    rng = keyed_rng(MIX_STREAM, seed, epoch, step)
    lam = sample_lambda(alpha, rng)
    perm = rng.permutation(n)
    return lam, perm


def _breakdown_without_reg(terms, weights: LossWeights) -> LossBreakdown:
    return total_loss(terms, Tensor(0.0), weights)


@objective_registry.register("bt")
def barlow_twins_objective(params: ModelParams, views: ViewPair, weights: LossWeights,
                           ctx: StepContext) -> LossBreakdown:
    za_n = normalize_embeddings(forward(params, views.y_a))
    zb_n = normalize_embeddings(forward(params, views.y_b))
    terms = barlow_twins_loss(cross_correlation(za_n, zb_n), weights.lambda_bt)
    return _breakdown_without_reg(terms, weights)


@objective_registry.register("mixbt")
def mixed_barlow_twins_objective(params: ModelParams, views: ViewPair, weights: LossWeights,
                                 ctx: StepContext) -> LossBreakdown:
    """
    Barlow Twins plus the mixup regularizer. The mixed batch is embedded and correlated
    against both views; the targets are the ground-truth cross-correlations implied by
    linear interpolation of the normalized view embeddings.
    """
    if weights.lambda_reg == 0.0:
        # the regularizer has no weight: identical arithmetic to "bt"
        return barlow_twins_objective(params, views, weights, ctx)

    za_n = normalize_embeddings(forward(params, views.y_a))
    zb_n = normalize_embeddings(forward(params, views.y_b))
    terms = barlow_twins_loss(cross_correlation(za_n, zb_n), weights.lambda_bt)

    lam, perm = mix_draw(ctx.seed, ctx.epoch, ctx.step, ctx.alpha, views.y_a.shape[0])
    ctx.lam, ctx.perm = lam, perm
    mixed = mix_batch(views, lam, perm)
    zm_n = normalize_embeddings(forward(params, mixed.y_m))
    cm_a = cross_correlation(zm_n, za_n)
    cm_b = cross_correlation(zm_n, zb_n)
    cm_a_gt, cm_b_gt = ground_truth_cc(za_n, zb_n, lam, perm)
    l_reg = mixup_reg_loss(cm_a, cm_b, cm_a_gt, cm_b_gt, weights.lambda_bt)
    return total_loss(terms, l_reg, weights)


@objective_registry.register("infonce")
def info_nce_objective(params: ModelParams, views: ViewPair, weights: LossWeights,
                       ctx: StepContext) -> LossBreakdown:
    # reported as invariance = l_bt = total so every row keeps the breakdown identities
    loss = info_nce_loss(forward(params, views.y_a), forward(params, views.y_b), weights.tau)
    value = loss.item()
    return LossBreakdown(invariance=value, redundancy=0.0, l_bt=value, l_reg=0.0, total=value, loss=loss)
