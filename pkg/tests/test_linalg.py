from __future__ import annotations

import numpy as np
import pytest

from ptqplan.errors import InvalidBlockSize, InvalidInput, RankExceedsDimension, ShapeError, UnsupportedDimension
from ptqplan.linalg import (
    assemble_blocks,
    batched_singular_values,
    batched_svd,
    hadamard_matrix,
    is_power_of_two,
    partition_blocks,
    svd,
    truncated_svd,
)


class TestHadamard:
    def test_base_case(self):
        assert hadamard_matrix(1).tolist() == [[1.0]]

    def test_two(self):
        expected = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
        np.testing.assert_allclose(hadamard_matrix(2), expected, atol=1e-15)

    def test_eight_orthogonal(self):
        h = hadamard_matrix(8)
        assert np.abs(h @ h.T - np.eye(8)).max() < 1e-12
        assert np.allclose(np.abs(h), 1 / np.sqrt(8))

    @pytest.mark.parametrize("n", [0, 3, 6, 12, 1000])
    def test_rejects_non_power_of_two(self, n):
        with pytest.raises(UnsupportedDimension):
            hadamard_matrix(n)

    def test_returned_copy_is_independent(self):
        h = hadamard_matrix(4)
        h[0, 0] = 99.0
        assert hadamard_matrix(4)[0, 0] == 0.5

    def test_is_power_of_two(self):
        assert [n for n in range(20) if is_power_of_two(n)] == [1, 2, 4, 8, 16]


class TestSvd:
    def test_identity(self):
        np.testing.assert_allclose(svd(np.eye(4)).singular_values, np.ones(4), atol=1e-14)

    def test_rank_one(self):
        u = np.array([1.0, 2.0, 2.0])
        v = np.array([3.0, 4.0])
        s = svd(np.outer(u, v)).singular_values
        assert s[0] == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-12)
        assert s[1] < 1e-12

    @pytest.mark.parametrize("shape", [(16, 16), (20, 7), (7, 20), (1, 5), (5, 1), (33, 33)])
    def test_multiply_back(self, shape):
        m = np.random.default_rng(3).standard_normal(shape)
        f = svd(m)
        assert np.linalg.norm(f.matrix() - m) / np.linalg.norm(m) < 1e-6
        assert np.all(np.diff(f.singular_values) <= 0)
        k = min(shape)
        assert np.abs(f.left.T @ f.left - np.eye(k)).max() < 1e-6
        assert np.abs(f.right @ f.right.T - np.eye(k)).max() < 1e-6

    def test_agrees_with_lapack_spectrum(self):
        m = np.random.default_rng(4).standard_normal((24, 18))
        np.testing.assert_allclose(svd(m).singular_values, np.linalg.svd(m, compute_uv=False), atol=1e-12)

    def test_rank_deficient_still_orthonormal(self):
        m = np.zeros((6, 4))
        m[:, 0] = 1.0
        f = svd(m)
        assert np.abs(f.left.T @ f.left - np.eye(4)).max() < 1e-12
        assert np.abs(f.right @ f.right.T - np.eye(4)).max() < 1e-12

    @pytest.mark.parametrize("rank", [63, 48, 16])
    def test_square_completion_terminates(self, rank):
        # The last missing direction is spread over all coordinates.
        rng = np.random.default_rng(rank)
        a = rng.standard_normal((64, rank)) @ rng.standard_normal((rank, 64))
        f = svd(a)
        assert np.abs(f.left.T @ f.left - np.eye(64)).max() < 1e-12
        np.testing.assert_allclose(f.matrix(), a, atol=1e-11)

    def test_non_finite(self):
        with pytest.raises(InvalidInput):
            svd(np.array([[1.0, np.nan], [0.0, 1.0]]))

    def test_not_a_matrix(self):
        with pytest.raises(ShapeError):
            svd(np.ones(3))

    def test_batched_values_match_full(self):
        a = np.random.default_rng(5).standard_normal((3, 2, 9, 6))
        _, s, _ = batched_svd(a)
        np.testing.assert_allclose(batched_singular_values(a), s, atol=1e-12)


class TestTruncatedSvd:
    def _rank2(self):
        rng = np.random.default_rng(6)
        return rng.standard_normal((10, 2)) @ rng.standard_normal((2, 8))

    def test_exact_recovery(self):
        m = self._rank2()
        assert np.linalg.norm(truncated_svd(m, 2).matrix() - m) < 1e-6 * np.linalg.norm(m)

    def test_rank_one_error_is_sigma2(self):
        m = self._rank2()
        s = np.linalg.svd(m, compute_uv=False)
        err = np.linalg.norm(truncated_svd(m, 1).matrix() - m)
        assert err == pytest.approx(s[1], rel=1e-6)

    def test_rank_zero(self):
        m = self._rank2()
        f = truncated_svd(m, 0)
        assert f.rank == 0
        assert np.linalg.norm(f.matrix() - m) == pytest.approx(np.linalg.norm(m))

    def test_rank_too_large(self):
        with pytest.raises(RankExceedsDimension):
            truncated_svd(np.ones((3, 5)), 4)

    def test_eckart_young_on_100_matrices(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            m = rng.standard_normal((rng.integers(2, 12), rng.integers(2, 12)))
            r = int(rng.integers(0, min(m.shape) + 1))
            s = np.linalg.svd(m, compute_uv=False)
            err = np.linalg.norm(truncated_svd(m, r).matrix() - m)
            tail = np.sqrt(np.sum(s[r:] ** 2))
            assert abs(err - tail) <= 1e-6 * max(tail, np.linalg.norm(m) * 1e-3)


class TestBlocks:
    def test_four_blocks(self):
        m = np.arange(16.0).reshape(4, 4)
        b = partition_blocks(m, 2, 2)
        assert b.shape == (2, 2, 2, 2)
        np.testing.assert_array_equal(b[0, 1], [[2, 3], [6, 7]])
        np.testing.assert_array_equal(assemble_blocks(b), m)

    def test_single_block(self):
        m = np.arange(16.0).reshape(4, 4)
        np.testing.assert_array_equal(partition_blocks(m, 4, 4)[0, 0], m)

    def test_non_divisor(self):
        with pytest.raises(InvalidBlockSize):
            partition_blocks(np.zeros((6, 4)), 4, 2)
