import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mixbt.core.exceptions import ContractError, DegenerateBatchError, DimensionError, NumericDomainError
from mixbt.services.losses import barlow_twins_loss, cross_correlation, info_nce_loss, normalize_embeddings
from mixbt.utils import diffcore as dc
from mixbt.utils.diffcore import Tensor


class TestMatmul:
    def test_identity(self):
        out = dc.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[2.0, 3.0], [4.0, 5.0]]))
        assert_array_equal(out.numpy(), [[2.0, 3.0], [4.0, 5.0]])

    def test_hand_product(self):
        assert_array_equal(dc.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).numpy(), [[11.0]])

    def test_gradients(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0], [4.0]], requires_grad=True)
        dc.backward(dc.sum(dc.matmul(a, b)))
        assert_allclose(a.grad, [[3.0, 4.0]])
        assert_allclose(b.grad, [[1.0], [2.0]])

    def test_inner_extent_mismatch(self):
        with pytest.raises(DimensionError):
            dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestBatchStatistics:
    def test_mean_and_std(self):
        z = Tensor([[1.0], [-1.0]])
        assert_array_equal(dc.batch_mean(z).numpy(), [0.0])
        assert_array_equal(dc.batch_std(z, eps=0.0).numpy(), [1.0])

    def test_constant_column_std_is_sqrt_eps(self):
        z = Tensor([[5.0], [5.0], [5.0]])
        assert_allclose(dc.batch_std(z, eps=1e-9).numpy(), [np.sqrt(1e-9)])

    def test_two_column_mean(self):
        assert_array_equal(dc.batch_mean(Tensor([[2.0, 0.0], [4.0, 0.0]])).numpy(), [3.0, 0.0])

    def test_single_row_is_degenerate(self):
        with pytest.raises(DegenerateBatchError):
            dc.batch_mean(Tensor([[1.0, 2.0]]))


class TestElementwise:
    def test_relu(self):
        assert_array_equal(dc.relu(Tensor([-1.0, 0.0, 2.0])).numpy(), [0.0, 0.0, 2.0])

    def test_sum_of_squares(self):
        assert dc.sum(dc.pow2(Tensor([1.0, 2.0]))).item() == 5.0

    def test_exp_log_inverse(self):
        assert_allclose(dc.exp(dc.log(Tensor([3.0]))).numpy(), [3.0], atol=1e-12)

    def test_division_by_zero(self):
        with pytest.raises(NumericDomainError):
            dc.div(Tensor([1.0]), Tensor([0.0]))

    def test_log_of_non_positive(self):
        with pytest.raises(NumericDomainError):
            dc.log(Tensor([0.0, 1.0]))

    def test_only_identical_or_scalar_shapes_broadcast(self):
        with pytest.raises(DimensionError):
            dc.add(Tensor(np.ones((2, 2))), Tensor(np.ones(2)))
        assert_array_equal(dc.add(Tensor(np.ones((2, 2))), 1.0).numpy(), np.full((2, 2), 2.0))

    def test_tensors_are_read_only(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 3.0


class TestBackward:
    def test_sum_of_squares_gradient(self):
        theta = Tensor([1.0, -2.0], requires_grad=True)
        dc.backward(dc.sum(dc.pow2(theta)))
        assert_array_equal(theta.grad, [2.0, -4.0])

    def test_constant_loss_gives_zero_gradients(self):
        theta = Tensor([1.0, -2.0], requires_grad=True)
        dc.backward(dc.scale(dc.sum(theta), 0.0))
        assert_array_equal(theta.grad, [0.0, 0.0])

    def test_non_scalar_loss_rejected(self):
        theta = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            dc.backward(dc.pow2(theta))

    def test_second_backward_on_same_tape_rejected(self):
        theta = Tensor([1.0, 2.0], requires_grad=True)
        loss = dc.sum(dc.pow2(theta))
        dc.backward(loss)
        with pytest.raises(ContractError):
            dc.backward(loss)

    def test_shared_subexpression_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        y = dc.mul(x, x)
        dc.backward(dc.sum(dc.add(y, y)))
        assert_allclose(x.grad, [12.0])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with dc.no_grad():
            y = dc.pow2(x)
        assert not y.requires_grad
        assert dc.is_grad_enabled()

    def test_logsumexp_rows_needs_a_selected_entry(self):
        with pytest.raises(ContractError):
            dc.logsumexp_rows(Tensor(np.zeros((2, 2))), mask=np.array([[True, False], [False, False]]))


class TestGradcheck:
    def test_barlow_twins_loss_on_random_embeddings(self, rng):
        za = Tensor(rng.standard_normal((4, 3)))
        zb = Tensor(rng.standard_normal((4, 3)))

        def l_bt(a, b):
            cc = cross_correlation(normalize_embeddings(a), normalize_embeddings(b))
            return barlow_twins_loss(cc, 0.0078125).l_bt

        report = dc.gradcheck(l_bt, [za, zb])
        assert report.ok, report

    def test_detects_a_wrong_gradient(self):
        def fn(x):
            # forward is x², recorded gradient is 3x
            return dc.sum(Tensor._from_op(x.data ** 2, "bad", (x,), lambda g: (3.0 * x.data * g,)))

        report = dc.gradcheck(fn, [Tensor([1.0, 2.0])])
        assert not report.ok
        assert report.max_error > 1.0

    def test_info_nce_loss(self, rng):
        report = dc.gradcheck(lambda a, b: info_nce_loss(a, b, 0.5),
                              [Tensor(rng.standard_normal((3, 2))), Tensor(rng.standard_normal((3, 2)))])
        assert report.ok, report


class TestGradTape:
    def test_reset_allows_a_replay(self):
        theta = Tensor([1.0, -2.0], requires_grad=True)
        loss = dc.sum(dc.pow2(theta))
        dc.backward(loss)
        tape = loss._tape
        assert len(tape) == 3
        tape.reset()
        tape.replay()
        # leaf gradients accumulate across replays
        assert_array_equal(theta.grad, [4.0, -8.0])

    def test_reset_clears_intermediate_gradients(self):
        theta = Tensor([1.0, -2.0], requires_grad=True)
        squares = dc.pow2(theta)
        loss = dc.sum(squares)
        dc.backward(loss)
        assert_array_equal(squares.grad, [1.0, 1.0])
        loss._tape.reset()
        assert squares.grad is None
        assert not loss._tape.replayed
