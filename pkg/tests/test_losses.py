import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mixbt.core.exceptions import DegenerateBatchError, DimensionError, NumericDomainError, PermutationError
from mixbt.schemas import LossWeights, RunConfig
from mixbt.services.losses import (
    BarlowTwinsTerms,
    CrossCorrelation,
    barlow_twins_loss,
    cross_correlation,
    ground_truth_cc,
    info_nce_loss,
    info_nce_terms,
    mixup_reg_loss,
    normalize_embeddings,
    total_loss,
)
from mixbt.utils.diffcore import Tensor


def _cc(matrix) -> CrossCorrelation:
    return CrossCorrelation(c=Tensor(np.asarray(matrix, dtype=float)))


def _double_loop(za, zb):
    n, d = za.shape
    return np.array([[sum(za[b, i] * zb[b, j] for b in range(n)) / n for j in range(d)] for i in range(d)])


class TestNormalizeEmbeddings:
    def test_two_rows(self):
        assert_array_equal(normalize_embeddings(Tensor([[1.0], [3.0]])).numpy(), [[-1.0], [1.0]])

    def test_constant_column_becomes_zero(self):
        out = normalize_embeddings(Tensor([[4.0, 1.0], [4.0, 2.0], [4.0, 3.0]])).numpy()
        assert_array_equal(out[:, 0], [0.0, 0.0, 0.0])

    def test_columns_are_standardised(self, rng):
        out = normalize_embeddings(Tensor(rng.standard_normal((16, 3)) * 5 + 2)).numpy()
        assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(out.std(axis=0), 1.0, rtol=1e-12)

    def test_normalized_batch_is_a_fixed_point(self, rng):
        once = normalize_embeddings(Tensor(rng.standard_normal((8, 3))))
        assert_allclose(normalize_embeddings(once).numpy(), once.numpy(), atol=1e-12)

    def test_single_row(self):
        with pytest.raises(DegenerateBatchError):
            normalize_embeddings(Tensor([[1.0, 2.0]]))


class TestCrossCorrelation:
    def test_self_correlation(self):
        z = Tensor([[1.0], [-1.0]])
        assert_array_equal(cross_correlation(z, z).numpy(), [[1.0]])

    def test_anti_correlation(self):
        assert_array_equal(cross_correlation(Tensor([[1.0], [-1.0]]), Tensor([[-1.0], [1.0]])).numpy(), [[-1.0]])

    def test_double_loop_oracle(self, rng):
        za = rng.integers(-5, 6, size=(4, 2)).astype(float)
        zb = rng.integers(-5, 6, size=(4, 2)).astype(float)
        assert_allclose(cross_correlation(Tensor(za), Tensor(zb)).numpy(), _double_loop(za, zb), atol=1e-12)

    def test_column_permutation_is_equivariant(self, rng):
        za = normalize_embeddings(Tensor(rng.standard_normal((8, 4))))
        zb = normalize_embeddings(Tensor(rng.standard_normal((8, 4))))
        perm = np.array([2, 0, 3, 1])
        c = cross_correlation(za, zb)
        c_perm = cross_correlation(Tensor(za.numpy()[:, perm]), Tensor(zb.numpy()[:, perm]))
        assert_allclose(c_perm.numpy(), c.numpy()[np.ix_(perm, perm)], atol=1e-12)
        assert barlow_twins_loss(c_perm, 0.0078125).l_bt.item() == pytest.approx(
            barlow_twins_loss(c, 0.0078125).l_bt.item(), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            cross_correlation(Tensor(np.zeros((4, 2))), Tensor(np.zeros((4, 3))))


class TestBarlowTwinsLoss:
    def test_identity_is_a_fixed_point(self):
        terms = barlow_twins_loss(_cc(np.eye(3)), 0.0078125)
        assert terms.l_bt.item() == 0.0

    def test_off_diagonal_entries(self):
        terms = barlow_twins_loss(_cc([[1.0, 0.5], [0.5, 1.0]]), 0.0078125)
        assert terms.invariance.item() == 0.0
        assert terms.redundancy.item() == 0.5
        assert terms.l_bt.item() == 0.00390625

    def test_zero_matrix(self):
        terms = barlow_twins_loss(_cc(np.zeros((2, 2))), 0.0078125)
        assert terms.invariance.item() == 2.0
        assert terms.redundancy.item() == 0.0

    def test_non_square(self):
        with pytest.raises(DimensionError):
            barlow_twins_loss(_cc(np.ones((2, 3))), 0.0078125)


class TestGroundTruth:
    def _normalized(self, rng, n=6, d=3):
        return (normalize_embeddings(Tensor(rng.standard_normal((n, d)))),
                normalize_embeddings(Tensor(rng.standard_normal((n, d)))))

    def test_lambda_one_is_autocorrelation(self, rng):
        za_n, zb_n = self._normalized(rng)
        gt_a, _ = ground_truth_cc(za_n, zb_n, 1.0, rng.permutation(6))
        assert_allclose(gt_a.numpy(), za_n.data.T @ za_n.data / 6, atol=1e-14)

    def test_lambda_zero_identity_perm(self, rng):
        za_n, zb_n = self._normalized(rng)
        _, gt_b = ground_truth_cc(za_n, zb_n, 0.0, np.arange(6))
        assert_allclose(gt_b.numpy(), zb_n.data.T @ zb_n.data / 6, atol=1e-14)

    def test_endpoints_match_cross_correlation_exactly(self, rng):
        za_n, zb_n = self._normalized(rng)
        gt_a, gt_b = ground_truth_cc(za_n, zb_n, 1.0, np.arange(6))
        assert_array_equal(gt_a.numpy(), cross_correlation(za_n, za_n).numpy())
        assert_array_equal(gt_b.numpy(), cross_correlation(za_n, zb_n).numpy())

    def test_materialised_mix_oracle(self):
        za = Tensor([[1.0, 2.0], [0.0, -1.0], [3.0, 1.0]])
        zb = Tensor([[2.0, 0.0], [1.0, 1.0], [-1.0, 2.0]])
        perm, lam = np.array([2, 0, 1]), 0.3
        mixed = lam * za.data + (1.0 - lam) * zb.data[perm]
        gt_a, gt_b = ground_truth_cc(za, zb, lam, perm)
        assert_allclose(gt_a.numpy(), _double_loop(mixed, za.data), atol=1e-12)
        assert_allclose(gt_b.numpy(), _double_loop(mixed, zb.data), atol=1e-12)

    def test_targets_are_detached(self, rng):
        za = normalize_embeddings(Tensor(rng.standard_normal((4, 2)), requires_grad=True))
        zb = normalize_embeddings(Tensor(rng.standard_normal((4, 2)), requires_grad=True))
        gt_a, gt_b = ground_truth_cc(za, zb, 0.4, [1, 0, 3, 2])
        assert not gt_a.c.requires_grad and not gt_b.c.requires_grad

    def test_invalid_permutation(self, rng):
        za_n, zb_n = self._normalized(rng, n=3)
        with pytest.raises(PermutationError):
            ground_truth_cc(za_n, zb_n, 0.5, [0, 0, 1])


class TestMixupRegLoss:
    def test_swapping_views_and_transposing(self, rng):
        cm_a, cm_b, gt_a, gt_b = (rng.standard_normal((3, 3)) for _ in range(4))
        forward = mixup_reg_loss(_cc(cm_a), _cc(cm_b), _cc(gt_a), _cc(gt_b), 0.0078125).item()
        swapped = mixup_reg_loss(_cc(cm_b.T), _cc(cm_a.T), _cc(gt_b.T), _cc(gt_a.T), 0.0078125).item()
        assert swapped == pytest.approx(forward, rel=1e-12)

    def test_matching_targets(self, rng):
        a, b = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        assert mixup_reg_loss(_cc(a), _cc(b), _cc(a), _cc(b), 0.0078125).item() == 0.0

    def test_single_unit_difference(self):
        target = np.zeros((2, 2))
        bumped = target.copy()
        bumped[0, 1] = 1.0
        assert mixup_reg_loss(_cc(bumped), _cc(target), _cc(target), _cc(target), 0.5).item() == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mixup_reg_loss(_cc(np.zeros((2, 2))), _cc(np.zeros((3, 3))), _cc(np.zeros((2, 2))),
                           _cc(np.zeros((2, 2))), 0.5)


class TestTotalLoss:
    def test_weighted_sum(self):
        terms = BarlowTwinsTerms(invariance=Tensor(1.0), redundancy=Tensor(0.0), l_bt=Tensor(1.0))
        breakdown = total_loss(terms, Tensor(2.0), LossWeights(lambda_reg=4.0))
        assert breakdown.total == 9.0
        assert breakdown.as_row() == {"invariance": 1.0, "redundancy": 0.0, "l_bt": 1.0, "l_reg": 2.0, "total": 9.0}

    def test_zero_weight_is_plain_barlow_twins(self):
        terms = barlow_twins_loss(_cc([[0.8, 0.1], [0.2, 0.9]]), 0.0078125)
        breakdown = total_loss(terms, Tensor(5.0), LossWeights(lambda_reg=0.0))
        assert breakdown.total == breakdown.l_bt

    def test_config_defaults(self):
        cfg = RunConfig()
        assert cfg.lambda_bt == 0.0078125
        assert cfg.lambda_reg == 4 * 0.0078125

    def test_inverse_d(self):
        assert RunConfig(d=128, lambda_bt="inverse_d").lambda_bt == 1.0 / 128


class TestInfoNCE:
    def test_hand_example(self):
        z = Tensor([[1.0, 0.0], [0.0, 1.0]])
        similarity, contrastive = info_nce_terms(z, z, 1.0)
        assert similarity.item() == -2.0
        assert contrastive.item() == 0.0
        assert info_nce_loss(z, z, 1.0).item() == -2.0

    def test_scale_invariant(self, rng):
        za, zb = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        base = info_nce_loss(Tensor(za), Tensor(zb), 0.5).item()
        assert info_nce_loss(Tensor(3.0 * za), Tensor(0.25 * zb), 0.5).item() == pytest.approx(base, rel=1e-12)

    def test_zero_norm_row(self):
        with pytest.raises(NumericDomainError):
            info_nce_loss(Tensor([[0.0, 0.0], [1.0, 0.0]]), Tensor([[1.0, 0.0], [0.0, 1.0]]), 0.5)
