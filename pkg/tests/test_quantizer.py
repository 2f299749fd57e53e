from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from ptqplan.errors import InvalidInput, ShapeError
from ptqplan.quantizer import (
    DistortionTable,
    build_distortion_table,
    clipped_uniform_quantize,
    dequantize,
    gaussian_mse,
    max_code,
    quantize_activations,
    quantize_weights_per_channel,
    requantize,
    step_size,
    token_sigma,
)


class TestClippedUniform:
    @pytest.mark.parametrize("a,b", [(1.0, 1), (0.3, 2), (2.5, 4), (1.0, 8)])
    def test_zero_maps_to_zero(self, a, b):
        assert clipped_uniform_quantize(0.0, a, b) == 0.0

    def test_saturates_to_outer_level(self):
        # Clipped values land on the outermost of the 2^b - 1 levels.
        assert clipped_uniform_quantize(10.0, 1.0, 2) == pytest.approx(2 / 3)
        assert clipped_uniform_quantize(10.0, 1.0, 3) == pytest.approx(6 / 7)

    def test_odd_symmetry(self):
        z = np.linspace(-3, 3, 601)
        np.testing.assert_array_equal(clipped_uniform_quantize(-z, 1.3, 3), -clipped_uniform_quantize(z, 1.3, 3))

    def test_half_step_rounds_away(self):
        step = step_size(1.0, 4)
        assert clipped_uniform_quantize(0.5 * step, 1.0, 4) == pytest.approx(step)
        assert clipped_uniform_quantize(-0.5 * step, 1.0, 4) == pytest.approx(-step)

    def test_magnitude_bound(self):
        z = np.random.default_rng(0).standard_normal(10_000) * 5
        for b in range(1, 9):
            q = clipped_uniform_quantize(z, 1.7, b)
            assert np.abs(q).max() <= 1.7 + step_size(1.7, b) / 2 + 1e-12
            assert np.unique(q).size <= 2**b - 1

    @pytest.mark.parametrize("a,b", [(0.0, 2), (-1.0, 2), (1.0, 0)])
    def test_invalid(self, a, b):
        with pytest.raises(InvalidInput):
            clipped_uniform_quantize(1.0, a, b)

    def test_max_code(self):
        assert [max_code(b) for b in (1, 2, 3, 8)] == [0, 1, 3, 127]


def _quad_mse(a: float, b: int) -> float:
    # Independent reference: adaptive quadrature cell by cell.
    step = step_size(a, b)
    k = max_code(b)
    edges = [(-math.inf, -(k - 0.5) * step)] if k else []
    for c in range(-k + 1, k):
        edges.append(((c - 0.5) * step, (c + 0.5) * step))
    if k:
        edges.append(((k - 0.5) * step, math.inf))
    else:
        edges = [(-math.inf, math.inf)]
    levels = list(range(-k, k + 1)) if k else [0]
    total = 0.0
    for (lo, hi), c in zip(edges, levels):
        y = c * step
        total += integrate.quad(lambda z: (z - y) ** 2 * norm.pdf(z), lo, hi, epsabs=1e-14, epsrel=1e-12)[0]
    return total


class TestDistortionTable:
    @pytest.mark.parametrize("b,a", [(1, 0.8), (2, 1.5), (3, 2.0), (4, 2.6), (6, 3.3), (8, 3.9)])
    def test_mse_matches_quadrature(self, b, a):
        assert gaussian_mse(a, b) == pytest.approx(_quad_mse(a, b), rel=1e-7)

    def test_monotone(self, table):
        k = [table.kappa(b) for b in range(2, 9)]
        a = [table.a_star(b) for b in range(2, 9)]
        assert all(x > y for x, y in zip(k, k[1:]))
        assert all(x < y for x, y in zip(a, a[1:]))

    def test_one_bit_is_variance(self, table):
        assert table.kappa(1) == pytest.approx(1.0)

    def test_a_star_is_minimizer(self, table):
        for b in (2, 4, 7):
            a = table.a_star(b)
            k = table.kappa(b)
            assert gaussian_mse(a * 0.98, b) > k
            assert gaussian_mse(a * 1.02, b) > k

    @pytest.mark.parametrize("bits", [[], [0], [17]])
    def test_bad_bit_set(self, bits):
        with pytest.raises(InvalidInput):
            build_distortion_table(bits)

    def test_too_few_points(self):
        with pytest.raises(InvalidInput):
            build_distortion_table([4], integration_points=100)

    def test_json_round_trip(self, table):
        text = table.to_json()
        again = DistortionTable.from_json(text)
        assert again.entries == table.entries
        assert json.loads(text)[0].keys() == {"bits", "kappa", "a_star"}

    def test_unknown_bit(self, table):
        with pytest.raises(InvalidInput):
            table.kappa(12)


class TestTensorQuantization:
    def test_activation_codes_in_range(self, table):
        x = np.random.default_rng(1).standard_normal((32, 16)) * 3
        q = quantize_activations(x, None, 4, table)
        assert q.axis == "per-token"
        assert q.codes.shape == (32, 16)
        assert np.abs(q.codes).max() <= max_code(4)
        assert np.all(q.scales > 0)

    def test_activation_error_scale(self, table):
        x = np.random.default_rng(2).standard_normal((4000, 64))
        from ptqplan.linalg import hadamard_matrix

        h = hadamard_matrix(64)
        err = np.mean((dequantize(quantize_activations(x, h, 6, table)) - x @ h) ** 2)
        assert err == pytest.approx(table.kappa(6), rel=0.1)

    def test_zero_rows_use_floor(self, table):
        q = quantize_weights_per_channel(np.zeros((3, 8)), 4, table)
        assert np.all(q.codes == 0)
        assert token_sigma(np.zeros(8)) == pytest.approx(1e-8)

    def test_hadamard_shape_mismatch(self, table):
        with pytest.raises(ShapeError):
            quantize_activations(np.ones((2, 4)), np.eye(8), 4, table)

    def test_requantize_reuses_scales(self, table):
        w = np.random.default_rng(3).standard_normal((5, 8))
        q = quantize_weights_per_channel(w, 3, table)
        r = requantize(w, q, table)
        np.testing.assert_array_equal(r.codes, q.codes)
        with pytest.raises(ShapeError):
            requantize(w[:4], q, table)
