import numpy as np
import pytest

from bioprobe import pooling
from bioprobe.errors import DegenerateInputError, DimensionMismatchError
from bioprobe.store import FrameEmbeddingSequence


def make_seq(frames):
    return FrameEmbeddingSequence(
        example_id="t", layer=0, frames=np.asarray(frames, dtype=np.float32)
    )


class TestTimeAverage:
    def test_two_frame_mean(self):
        pooled = pooling.time_average(make_seq([[1.0, 3.0], [3.0, 5.0]]))
        np.testing.assert_allclose(pooled.values, [2.0, 4.0])
        assert pooled.source == pooling.TIME_AVERAGED

    def test_single_frame_identity(self):
        pooled = pooling.time_average(make_seq([[7.0, -2.0]]))
        np.testing.assert_allclose(pooled.values, [7.0, -2.0])

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(0)
        frames = rng.standard_normal((5, 3))
        # brute-force column sums
        expected = np.array([sum(frames[t][j] for t in range(5)) / 5.0 for j in range(3)])
        pooled = pooling.time_average(frames)
        np.testing.assert_allclose(pooled.values, expected, atol=1e-6)

    def test_empty_rejected(self):
        with pytest.raises(DegenerateInputError):
            pooling.time_average(np.zeros((0, 4)))


class TestAttentionScores:
    def test_dot_product(self):
        params = pooling.AttentionPoolParams(w_alpha=np.array([1.0, 0.0]), b_alpha=0.5)
        scores = pooling.attention_scores(make_seq([[2.0, 7.0]]), params)
        np.testing.assert_allclose(scores, [2.5])

    def test_zero_params_zero_scores(self):
        params = pooling.AttentionPoolParams.zeros(3)
        scores = pooling.attention_scores(make_seq([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), params)
        np.testing.assert_allclose(scores, [0.0, 0.0])

    def test_matches_per_frame_oracle(self):
        rng = np.random.default_rng(1)
        frames = rng.standard_normal((4, 3))
        w = rng.standard_normal(3)
        b = float(rng.standard_normal())
        params = pooling.AttentionPoolParams(w_alpha=w, b_alpha=b)
        expected = [sum(w[j] * frames[t][j] for j in range(3)) + b for t in range(4)]
        np.testing.assert_allclose(pooling.attention_scores(frames, params), expected)

    def test_dimension_mismatch(self):
        params = pooling.AttentionPoolParams.zeros(4)
        with pytest.raises(DimensionMismatchError):
            pooling.attention_scores(make_seq([[1.0, 2.0]]), params)


class TestSoftmax:
    def test_uniform_scores(self):
        np.testing.assert_allclose(
            pooling.softmax_over_time(np.zeros(3)), [1 / 3, 1 / 3, 1 / 3]
        )

    def test_analytic_exponentials(self):
        out = pooling.softmax_over_time(np.array([np.log(2.0), 0.0]))
        np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-12)

    def test_large_scores_no_overflow(self):
        out = pooling.softmax_over_time(np.array([1000.0, 0.0]))
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(6)
        base = pooling.softmax_over_time(scores)
        shifted = pooling.softmax_over_time(scores + 123.456)
        np.testing.assert_allclose(base, shifted, atol=1e-9)
        assert abs(base.sum() - 1.0) < 1e-9
        assert (base > 0).all()

    def test_nan_rejected(self):
        with pytest.raises(DegenerateInputError):
            pooling.softmax_over_time(np.array([0.0, np.nan]))


class TestTimeWeightedAverage:
    def test_zero_params_equals_mean(self):
        rng = np.random.default_rng(3)
        frames = rng.standard_normal((7, 4))
        weighted = pooling.time_weighted_average(frames, pooling.AttentionPoolParams.zeros(4))
        mean = pooling.time_average(frames)
        np.testing.assert_allclose(weighted.values, mean.values, atol=1e-6)

    def test_single_frame_identity(self):
        frames = np.array([[2.0, -1.0, 0.5]])
        params = pooling.AttentionPoolParams(w_alpha=np.array([3.0, 1.0, -2.0]), b_alpha=1.0)
        out = pooling.time_weighted_average(frames, params)
        np.testing.assert_allclose(out.values, frames[0])

    def test_strong_alignment_selects_frame(self):
        # score gap >= 20 makes the softmax effectively one-hot on frame 1
        frames = np.array([[0.0, 0.0], [1.0, 5.0], [0.0, -1.0]])
        params = pooling.AttentionPoolParams(w_alpha=np.array([0.0, 10.0]), b_alpha=0.0)
        scores = pooling.attention_scores(frames, params)
        assert scores[1] - max(scores[0], scores[2]) >= 20
        out = pooling.time_weighted_average(frames, params)
        np.testing.assert_allclose(out.values, frames[1], atol=1e-3)


class TestPoolingProperties:
    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        frames = rng.standard_normal((6, 5))
        params = pooling.AttentionPoolParams(w_alpha=rng.standard_normal(5), b_alpha=0.3)
        perm = rng.permutation(6)
        np.testing.assert_allclose(
            pooling.time_average(frames).values,
            pooling.time_average(frames[perm]).values,
            atol=1e-12,
        )
        np.testing.assert_allclose(
            pooling.time_weighted_average(frames, params).values,
            pooling.time_weighted_average(frames[perm], params).values,
            atol=1e-12,
        )

    def test_output_in_convex_hull(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            frames = rng.standard_normal((rng.integers(1, 8), 4))
            params = pooling.AttentionPoolParams(
                w_alpha=rng.standard_normal(4), b_alpha=float(rng.standard_normal())
            )
            out = pooling.time_weighted_average(frames, params).values
            assert (out <= frames.max(axis=0) + 1e-12).all()
            assert (out >= frames.min(axis=0) - 1e-12).all()

    def test_param_count_is_d_plus_one(self):
        assert pooling.AttentionPoolParams.zeros(1024).param_count == 1025
