"""
Objective functions: batch cross-correlation, the Barlow Twins loss, the mixup
regularizer built on ground-truth cross-correlations, and the InfoNCE baseline.

The regularizer uses squared Frobenius norms scaled by lambda_bt, and the total adds it
with weight lambda_reg (no 1/2 factor anywhere).
"""
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from mixbt.core.exceptions import DegenerateBatchError, DimensionError, NumericDomainError
from mixbt.schemas import LossWeights
from mixbt.services.augment import validate_permutation
from mixbt.utils import diffcore as dc
from mixbt.utils.diffcore import Tensor

NORM_EPS = 1e-9
INVARIANCE_TARGET = 1.0  # value the diagonal of C is pulled towards


@dataclass
class CrossCorrelation:
    c: Tensor

    @property
    def d(self) -> int:
        return self.c.shape[0]

    def numpy(self) -> np.ndarray:
        return self.c.numpy()


@dataclass
class BarlowTwinsTerms:
    """The L_BT part of a LossBreakdown, still differentiable."""
    invariance: Tensor
    redundancy: Tensor
    l_bt: Tensor


@dataclass
class LossBreakdown:
    invariance: float
    redundancy: float
    l_bt: float
    l_reg: float
    total: float
    loss: Tensor  # differentiable total

    def as_row(self) -> Dict[str, float]:
        return {
            "invariance": self.invariance,
            "redundancy": self.redundancy,
            "l_bt": self.l_bt,
            "l_reg": self.l_reg,
            "total": self.total,
        }


def normalize_embeddings(z: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Center every column to mean 0 and scale it to population std 1."""
    if z.ndim != 2:
        raise DimensionError("normalize_embeddings", f"expected an N×d matrix, got shape {z.shape}")
    n = z.shape[0]
    if n < 2:
        raise DegenerateBatchError(n)
    mu = dc.expand_rows(dc.batch_mean(z), n)
    std = dc.expand_rows(dc.batch_std(z, eps), n)
    return dc.div(dc.sub(z, mu), std)


def cross_correlation(za_n: Tensor, zb_n: Tensor) -> CrossCorrelation:
    """C = za_nᵀ · zb_n / N."""
    if za_n.shape != zb_n.shape or za_n.ndim != 2:
        raise DimensionError("cross_correlation", f"inputs differ: {za_n.shape} vs {zb_n.shape}")
    return CrossCorrelation(c=dc.div(dc.matmul(dc.transpose(za_n), zb_n), za_n.shape[0]))


def _off_diagonal_mask(d: int) -> Tensor:
    return Tensor(1.0 - np.eye(d))


def barlow_twins_loss(cc: CrossCorrelation, lambda_bt: float) -> BarlowTwinsTerms:
    """Invariance Σ(1 - C_ii)², redundancy Σ_{i≠j} C_ij², l_bt = invariance + λ_BT · redundancy."""
    c = cc.c
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError("barlow_twins_loss", f"cross-correlation must be square, got {c.shape}")
    invariance = dc.sum(dc.pow2(dc.sub(INVARIANCE_TARGET, dc.diagonal(c))))
    redundancy = dc.sum(dc.pow2(dc.mul(c, _off_diagonal_mask(c.shape[0]))))
    return BarlowTwinsTerms(
        invariance=invariance,
        redundancy=redundancy,
        l_bt=dc.add(invariance, dc.scale(redundancy, lambda_bt)),
    )


def _gram(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # same operand layout as cross_correlation, so lam in {0, 1} reproduces it bit for bit
    return x.T.copy() @ y


def ground_truth_cc(za_n: Tensor, zb_n: Tensor, lam: float, perm) -> Tuple[CrossCorrelation, CrossCorrelation]:
    """
    Cross-correlations the mixed batch would have if embeddings interpolated linearly:

        C^MA_gt = lam · za_nᵀza_n / N + (1 - lam) · zb_n[perm]ᵀ za_n / N
        C^MB_gt = lam · za_nᵀzb_n / N + (1 - lam) · zb_n[perm]ᵀ zb_n / N

    Both are returned detached; they are targets, not trainable quantities.
    """
    if za_n.shape != zb_n.shape or za_n.ndim != 2:
        raise DimensionError("ground_truth_cc", f"inputs differ: {za_n.shape} vs {zb_n.shape}")
    n = za_n.shape[0]
    perm = validate_permutation(perm, n)
    za, zb = za_n.data, zb_n.data
    zb_shuffled = zb[perm]
    cma = lam * _gram(za, za) / n + (1.0 - lam) * _gram(zb_shuffled, za) / n
    cmb = lam * _gram(za, zb) / n + (1.0 - lam) * _gram(zb_shuffled, zb) / n
    return CrossCorrelation(c=Tensor(cma)), CrossCorrelation(c=Tensor(cmb))


def mixup_reg_loss(cm_a: CrossCorrelation, cm_b: CrossCorrelation, cm_a_gt: CrossCorrelation,
                   cm_b_gt: CrossCorrelation, lambda_bt: float) -> Tensor:
    """l_reg = λ_BT · (‖C^MA − C^MA_gt‖²_F + ‖C^MB − C^MB_gt‖²_F)."""
    shapes = {m.c.shape for m in (cm_a, cm_b, cm_a_gt, cm_b_gt)}
    if len(shapes) != 1:
        raise DimensionError("mixup_reg_loss", f"matrices differ in shape: {sorted(shapes)}")
    gap_a = dc.sum(dc.pow2(dc.sub(cm_a.c, cm_a_gt.c)))
    gap_b = dc.sum(dc.pow2(dc.sub(cm_b.c, cm_b_gt.c)))
    return dc.scale(dc.add(gap_a, gap_b), lambda_bt)


def total_loss(frag: BarlowTwinsTerms, l_reg: Tensor, weights: LossWeights) -> LossBreakdown:
    """total = l_bt + λ_reg · l_reg."""
    total = dc.add(frag.l_bt, dc.scale(l_reg, weights.lambda_reg))
    return LossBreakdown(
        invariance=frag.invariance.item(),
        redundancy=frag.redundancy.item(),
        l_bt=frag.l_bt.item(),
        l_reg=l_reg.item(),
        total=total.item(),
        loss=total,
    )


def _unit_rows(z: Tensor) -> Tensor:
    norms = dc.sqrt(dc.sum(dc.pow2(z), axis=1))
    if np.any(norms.data == 0.0):
        raise NumericDomainError("info_nce_loss", "embedding row with zero norm")
    return dc.div(z, dc.expand_cols(norms, z.shape[1]))


def info_nce_terms(za: Tensor, zb: Tensor, tau: float) -> Tuple[Tensor, Tensor]:
    """(similarity term, contrastive term) of the InfoNCE loss on raw embeddings."""
    if za.shape != zb.shape or za.ndim != 2:
        raise DimensionError("info_nce_loss", f"inputs differ: {za.shape} vs {zb.shape}")
    n = za.shape[0]
    if n < 2:
        raise DegenerateBatchError(n)
    if not tau > 0:
        raise NumericDomainError("info_nce_loss", f"temperature must be > 0, got {tau}")
    logits = dc.scale(dc.matmul(_unit_rows(za), dc.transpose(_unit_rows(zb))), 1.0 / tau)
    similarity = dc.neg(dc.sum(dc.diagonal(logits)))
    negatives = ~np.eye(n, dtype=bool)
    contrastive = dc.sum(dc.logsumexp_rows(logits, mask=negatives))
    return similarity, contrastive


def info_nce_loss(za: Tensor, zb: Tensor, tau: float) -> Tensor:
    """−Σ_b cos(z^A_b, z^B_b)/τ + Σ_b log Σ_{b'≠b} exp(cos(z^A_b, z^B_b')/τ)."""
    similarity, contrastive = info_nce_terms(za, zb, tau)
    return dc.add(similarity, contrastive)
