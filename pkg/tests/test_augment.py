import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mixbt.core.exceptions import InputRangeError, ParameterError, PermutationError
from mixbt.schemas import AugmentConfig
from mixbt.services.augment import ViewPair, crop_and_resize, hflip, make_views, mix_batch, sample_lambda
from mixbt.utils.diffcore import Tensor

SHAPE = (1, 4, 4)


class TestMakeViews:
    def test_identity_config_returns_the_input(self, rng):
        images = rng.random((5, 16))
        views = make_views(Tensor(images), 0, AugmentConfig.identity(), image_shape=SHAPE, seed=0)
        assert_array_equal(views.y_a.numpy(), images)
        assert_array_equal(views.y_b.numpy(), images)

    def test_deterministic(self, rng):
        images = Tensor(rng.random((6, 16)))
        first = make_views(images, 3, AugmentConfig(), image_shape=SHAPE, seed=1)
        second = make_views(images, 3, AugmentConfig(), image_shape=SHAPE, seed=1)
        assert_array_equal(first.y_a.numpy(), second.y_a.numpy())
        assert_array_equal(first.y_b.numpy(), second.y_b.numpy())

    def test_views_follow_the_sample_not_the_batch_position(self, rng):
        images = rng.random((4, 16))
        order = np.array([2, 0, 3, 1])
        full = make_views(Tensor(images), 0, AugmentConfig(), image_shape=SHAPE, seed=5, indices=[10, 11, 12, 13])
        shuffled = make_views(Tensor(images[order]), 0, AugmentConfig(), image_shape=SHAPE, seed=5,
                              indices=[10 + i for i in order])
        assert_array_equal(shuffled.y_a.numpy(), full.y_a.numpy()[order])

    def test_epochs_draw_different_views(self, rng):
        images = Tensor(rng.random((4, 16)))
        cfg = AugmentConfig(flip_p=0.0, jitter_p=1.0)
        assert not np.array_equal(make_views(images, 0, cfg, image_shape=SHAPE, seed=0).y_a.numpy(),
                                  make_views(images, 1, cfg, image_shape=SHAPE, seed=0).y_a.numpy())

    def test_thread_workers_match_serial(self, rng):
        images = Tensor(rng.random((6, 16)))
        serial = make_views(images, 2, AugmentConfig(workers=1), image_shape=SHAPE, seed=9)
        threaded = make_views(images, 2, AugmentConfig(workers=3), image_shape=SHAPE, seed=9)
        assert_array_equal(serial.y_b.numpy(), threaded.y_b.numpy())

    def test_views_stay_in_range(self, rng):
        views = make_views(Tensor(rng.random((8, 16))), 0, AugmentConfig(brightness_delta=0.5),
                           image_shape=SHAPE, seed=0)
        assert views.y_a.numpy().min() >= 0.0 and views.y_a.numpy().max() <= 1.0

    def test_out_of_range_pixels(self):
        with pytest.raises(InputRangeError):
            make_views(Tensor(np.full((2, 16), 1.5)), 0, AugmentConfig(), image_shape=SHAPE, seed=0)


class TestPrimitives:
    def test_hflip(self):
        assert_array_equal(hflip(np.array([[[1.0, 2.0], [3.0, 4.0]]])), [[[2.0, 1.0], [4.0, 3.0]]])

    def test_full_scale_crop_is_identity(self, rng):
        image = rng.random(SHAPE)
        assert_array_equal(crop_and_resize(image, 1.0, 0.3, 0.9), image)

    def test_crop_keeps_the_image_size(self, rng):
        assert crop_and_resize(rng.random((3, 8, 8)), 0.5, 0.5, 0.5).shape == (3, 8, 8)


class TestSampleLambda:
    def test_uniform_mean(self):
        rng = np.random.default_rng(0)
        draws = np.array([sample_lambda(1.0, rng) for _ in range(100_000)])
        assert abs(draws.mean() - 0.5) <= 0.01
        assert draws.min() > 0.0 and draws.max() < 1.0

    def test_symmetric_beta_mean(self):
        rng = np.random.default_rng(1)
        draws = np.array([sample_lambda(0.4, rng) for _ in range(20_000)])
        assert abs(draws.mean() - 0.5) <= 0.02

    def test_reproducible(self):
        a = [sample_lambda(2.0, np.random.default_rng(3)) for _ in range(3)]
        b = [sample_lambda(2.0, np.random.default_rng(3)) for _ in range(3)]
        assert a == b

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_non_positive_alpha(self, alpha):
        with pytest.raises(ParameterError):
            sample_lambda(alpha, np.random.default_rng(0))


class TestMixBatch:
    def _pair(self, rng):
        return ViewPair(y_a=Tensor(rng.random((4, 3))), y_b=Tensor(rng.random((4, 3))), stream_keys=[])

    def test_lambda_one_is_view_a(self, rng):
        pair = self._pair(rng)
        assert_array_equal(mix_batch(pair, 1.0, [3, 2, 1, 0]).y_m.numpy(), pair.y_a.numpy())

    def test_lambda_zero_is_shuffled_view_b(self, rng):
        pair = self._pair(rng)
        perm = np.array([3, 2, 1, 0])
        assert_array_equal(mix_batch(pair, 0.0, perm).y_m.numpy(), pair.y_b.numpy()[perm])

    def test_midpoint(self):
        pair = ViewPair(y_a=Tensor([[0.0]]), y_b=Tensor([[2.0]]), stream_keys=[])
        assert_array_equal(mix_batch(pair, 0.5, [0]).y_m.numpy(), [[1.0]])

    def test_swapped_views_with_complementary_ratio(self, rng):
        pair = self._pair(rng)
        swapped = ViewPair(y_a=pair.y_b, y_b=pair.y_a, stream_keys=[])
        perm = np.array([2, 0, 3, 1])
        inverse = np.argsort(perm)
        mixed = mix_batch(pair, 0.3, perm).y_m.numpy()
        mirrored = mix_batch(swapped, 0.7, inverse).y_m.numpy()
        assert_allclose(mirrored[perm], mixed, atol=1e-15)

    @pytest.mark.parametrize("perm", [[0, 0, 1, 2], [0, 1, 2], [0, 1, 2, 4]])
    def test_invalid_permutation(self, rng, perm):
        with pytest.raises(PermutationError):
            mix_batch(self._pair(rng), 0.5, perm)
