from __future__ import annotations

import numpy as np
import pytest

from ptqplan.errors import (
    InvalidInput,
    NoFeasibleConfig,
    RankExceedsDimension,
    ShapeError,
    UnsupportedDimension,
)
from ptqplan.hsvd import (
    BlockConfig,
    feasible_blocks,
    forward,
    global_budget,
    hsvd_decompose,
    local_branch,
    local_budget,
    local_error,
    select_block_config,
)
from ptqplan.linalg import hadamard_matrix, svd
from ptqplan.oracles import exhaustive_block_search


def planted_tiles(rng, out, inp, s_o, s_i):
    p, q = out // s_o, inp // s_i
    u = rng.standard_normal((p, q, s_o))
    v = rng.standard_normal((p, q, s_i))
    return (u[..., :, None] * v[..., None, :]).swapaxes(1, 2).reshape(out, inp)


def test_budgets():
    assert global_budget(64, 64, 8) == 1024
    assert local_budget(64, 64, 16, 16) == 16 * 33
    with pytest.raises(InvalidInput):
        local_budget(64, 64, 3, 16)


def test_feasible_set_respects_budget():
    for r in (2, 4, 8, 16):
        cfgs = feasible_blocks(64, 64, r)
        assert all(c.budget <= r * 128 for c in cfgs)
        assert [c.budget for c in cfgs] == sorted((c.budget for c in cfgs), reverse=True)


def test_no_feasible_config():
    # Every tiling of a 2x2 matrix needs more than r(out+in) = 4 parameters.
    with pytest.raises(NoFeasibleConfig):
        feasible_blocks(2, 2, 1)
    # A single 64x64 block costs 129 > 1 * (64 + 64).
    with pytest.raises(NoFeasibleConfig):
        feasible_blocks(64, 64, 1)
    with pytest.raises(NoFeasibleConfig):
        exhaustive_block_search(np.ones((2, 2)), 2, 2, 1)


def test_planted_16x16_selected_with_zero_residual():
    w = planted_tiles(np.random.default_rng(0), 64, 64, 16, 16)
    cfg = select_block_config(w, feasible_blocks(64, 64, 8))
    assert (cfg.s_o, cfg.s_i) == (16, 16)
    lb = local_branch(w, cfg)
    assert np.linalg.norm(w - lb.matrix()) < 1e-9 * np.linalg.norm(w)


def test_local_error_equals_explicit_residual():
    w = np.random.default_rng(1).standard_normal((32, 16))
    cfg = BlockConfig(8, 4, local_budget(32, 16, 8, 4))
    explicit = np.linalg.norm(w - local_branch(w, cfg).matrix())
    assert local_error(w, cfg) == pytest.approx(explicit, rel=1e-10)


def test_local_branch_sign_convention():
    w = np.random.default_rng(2).standard_normal((16, 16))
    lb = local_branch(w, BlockConfig(4, 4, local_budget(16, 16, 4, 4)))
    first = lb.u[..., 0]
    assert np.all(first >= 0)
    assert np.all(lb.sigma >= 0)


def test_block_shape_mismatch():
    with pytest.raises(ShapeError):
        local_branch(np.zeros((6, 6)), BlockConfig(4, 4, 9))


@pytest.mark.parametrize("r", [4, 8, 16])
def test_selection_matches_exhaustive_search(r):
    rng = np.random.default_rng(100 + r)
    for _ in range(5):
        w = rng.standard_normal((64, 64))
        cfg = select_block_config(w, feasible_blocks(64, 64, r))
        oracle = exhaustive_block_search(w, 64, 64, r).value
        assert (cfg.s_o, cfg.s_i, cfg.budget) == oracle


class TestDecompose:
    def test_exact_when_low_rank(self, table):
        rng = np.random.default_rng(3)
        w_h = rng.standard_normal((32, 4)) @ rng.standard_normal((4, 32))
        w = w_h @ hadamard_matrix(32).T
        for bits in (2, 4, 8):
            qw = hsvd_decompose(w, 4, bits, table)
            assert np.linalg.norm(qw.reconstruct() - w) < 1e-5 * np.linalg.norm(w)

    def test_local_budget_within_global(self, table):
        w = np.random.default_rng(4).standard_normal((64, 32))
        qw = hsvd_decompose(w, 6, 4, table)
        assert qw.local.config.budget <= 6 * (64 + 32)
        assert qw.fp_param_count() == 6 * 96 + qw.local.config.budget

    def test_no_local(self, table):
        w = np.random.default_rng(5).standard_normal((16, 16))
        qw = hsvd_decompose(w, 2, 4, table, use_local=False)
        assert qw.local is None
        assert qw.fp_param_count() == 2 * 32

    def test_infeasible_local_becomes_warning(self, table):
        w = np.random.default_rng(6).standard_normal((2, 2))
        qw = hsvd_decompose(w, 1, 4, table, local_rank=1)
        assert qw.local is None and "no block tiling" in qw.warning

    def test_shared_factors_match(self, table):
        w = np.random.default_rng(7).standard_normal((32, 32))
        f = svd(w @ hadamard_matrix(32))
        a = hsvd_decompose(w, 4, 4, table)
        b = hsvd_decompose(w, 4, 4, table, factors=f)
        np.testing.assert_allclose(a.reconstruct(), b.reconstruct(), atol=1e-10)
        with pytest.raises(RankExceedsDimension):
            hsvd_decompose(w, 40, 4, table, factors=f)

    def test_rank_too_large(self, table):
        with pytest.raises(RankExceedsDimension):
            hsvd_decompose(np.ones((4, 4)), 5, 4, table)

    def test_non_power_of_two_input(self, table):
        with pytest.raises(UnsupportedDimension):
            hsvd_decompose(np.ones((4, 6)), 1, 4, table)


class TestForward:
    def test_unquantized_activations_equal_weight_product(self, table):
        rng = np.random.default_rng(8)
        w = rng.standard_normal((16, 32))
        qw = hsvd_decompose(w, 2, 8, table)
        x = rng.standard_normal((5, 32))
        np.testing.assert_allclose(forward(qw, x, None, table), x @ qw.reconstruct().T, atol=1e-10)

    def test_vector_input(self, table):
        rng = np.random.default_rng(9)
        qw = hsvd_decompose(rng.standard_normal((8, 16)), 2, 4, table)
        x = rng.standard_normal(16)
        y = forward(qw, x, 4, table)
        assert y.shape == (8,)
        np.testing.assert_allclose(y, forward(qw, x[None], 4, table)[0])

    def test_shape_mismatch(self, table):
        qw = hsvd_decompose(np.eye(8), 1, 4, table)
        with pytest.raises(ShapeError):
            forward(qw, np.ones((2, 4)), 4, table)
