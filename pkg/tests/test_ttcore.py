import numpy as np
import pytest

from ttpc import ttcore
from ttpc.errors import ConfigError

from oracles import dense_from_cores_einsum, finite_diff_grad, rel_err


def test_plan_factorization_table():
    assert ttcore.plan_factorization(1024) == (8, 8, 4, 4)
    assert ttcore.plan_factorization(512) == (8, 4, 4, 4)
    assert ttcore.plan_factorization(256) == (4, 4, 4, 4)
    assert ttcore.plan_factorization(128) == (4, 4, 4, 2)
    assert ttcore.plan_factorization(64) == (4, 4, 2, 2)
    assert ttcore.plan_factorization(32) == (4, 2, 2, 2)
    assert ttcore.plan_factorization(16) == (2, 2, 2, 2)


def test_plan_factorization_products_and_untabulated():
    for dim in (16, 32, 64, 128, 256, 512, 1024, 2048):
        factors = ttcore.plan_factorization(dim)
        assert int(np.prod(factors)) == dim
        assert len(factors) == 4
        assert all(f <= 8 for f in factors)
        assert list(factors) == sorted(factors, reverse=True)


@pytest.mark.parametrize("bad", [0, 3, 12, 24, 15, 4096, -16])
def test_plan_factorization_rejects(bad):
    with pytest.raises(ConfigError):
        ttcore.plan_factorization(bad)


def test_make_plan_examples():
    plan = ttcore.make_plan(256, 64)
    assert plan.o_factors == (4, 4, 4, 4)
    assert plan.p_factors == (4, 4, 2, 2)
    plan = ttcore.make_plan(1024, 1024)
    assert plan.o_factors == plan.p_factors == (8, 8, 4, 4)
    plan = ttcore.make_plan(64, 16)
    assert plan.o_factors == (4, 4, 2, 2)
    assert plan.p_factors == (2, 2, 2, 2)


def test_init_core_shapes():
    rng = np.random.default_rng(0)
    plan = ttcore.FactorPlan((4, 4, 4, 4), (4, 4, 2, 2))
    cores = ttcore.init_cores(plan, 8, rng)
    assert [c.shape for c in cores] == [
        (1, 4, 4, 8),
        (8, 4, 4, 8),
        (8, 4, 2, 8),
        (8, 4, 2, 1),
    ]
    cores = ttcore.init_cores(plan, 1, rng)
    assert [c.shape for c in cores] == [
        (1, 4, 4, 1),
        (1, 4, 4, 1),
        (1, 4, 2, 1),
        (1, 4, 2, 1),
    ]


def test_init_variance_targets_he():
    # Monte-Carlo over seeds: Var(reconstructed entries) ~ 2 / in_dim.
    plan = ttcore.make_plan(64, 64)
    samples = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        cores = ttcore.init_cores(plan, 4, rng)
        w = ttcore.reconstruct_dense(cores)
        samples.append(w.reshape(-1))
    var = float(np.var(np.concatenate(samples)))
    target = 2.0 / 64
    assert abs(var - target) / target < 0.2


def test_reconstruct_allones_rank1():
    plan = ttcore.FactorPlan((2, 2), (2, 2))
    cores = [np.ones((1, 2, 2, 1)), np.ones((1, 2, 2, 1))]
    w = ttcore.reconstruct_dense(cores)
    assert w.shape == (4, 4)
    np.testing.assert_array_equal(w, np.ones((4, 4)))


@pytest.mark.parametrize("rank", [1, 2, 5])
def test_reconstruct_allones_interior_rank(rank):
    cores = [np.ones((1, 2, 2, rank)), np.ones((rank, 2, 2, 1))]
    w = ttcore.reconstruct_dense(cores)
    np.testing.assert_array_equal(w, np.full((4, 4), float(rank)))


def test_reconstruct_matches_einsum_oracle():
    rng = np.random.default_rng(7)
    for in_dim, out_dim, rank in [(16, 16, 2), (64, 32, 4), (256, 64, 8)]:
        plan = ttcore.make_plan(in_dim, out_dim)
        cores = ttcore.init_cores(plan, rank, rng)
        np.testing.assert_allclose(
            ttcore.reconstruct_dense(cores),
            dense_from_cores_einsum(cores),
            rtol=1e-13,
            atol=1e-15,
        )


def test_forward_allones_rank1():
    cores = [np.ones((1, 2, 2, 1)), np.ones((1, 2, 2, 1))]
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    y = ttcore.tt_forward(cores, x, np.zeros(4))
    np.testing.assert_allclose(y, np.full((1, 4), 10.0))


def test_forward_zero_input_gives_bias():
    rng = np.random.default_rng(3)
    plan = ttcore.make_plan(16, 32)
    cores = ttcore.init_cores(plan, 4, rng)
    bias = rng.standard_normal(32)
    y = ttcore.tt_forward(cores, np.zeros((5, 16)), bias)
    np.testing.assert_array_equal(y, np.broadcast_to(bias, (5, 32)))


def test_forward_matches_dense_oracle_64bit():
    rng = np.random.default_rng(11)
    for in_dim, out_dim, rank in [(16, 64, 3), (128, 128, 8), (256, 64, 8)]:
        plan = ttcore.make_plan(in_dim, out_dim)
        cores = ttcore.init_cores(plan, rank, rng)
        bias = rng.standard_normal(out_dim)
        x = rng.standard_normal((9, in_dim))
        y_tt = ttcore.tt_forward(cores, x, bias)
        y_dense = x @ ttcore.reconstruct_dense(cores) + bias
        assert rel_err(y_tt, y_dense) <= 1e-12


def test_forward_matches_dense_oracle_32bit():
    rng = np.random.default_rng(12)
    plan = ttcore.make_plan(64, 64)
    cores = [c.astype(np.float32) for c in ttcore.init_cores(plan, 8, rng)]
    x = rng.standard_normal((17, 64)).astype(np.float32)
    y_tt = ttcore.tt_forward(cores, x)
    y_dense = x @ ttcore.reconstruct_dense(cores)
    assert rel_err(y_tt, y_dense) <= 1e-5


def test_forward_deterministic_bits():
    rng = np.random.default_rng(5)
    plan = ttcore.make_plan(32, 32)
    cores = ttcore.init_cores(plan, 8, rng)
    x = rng.standard_normal((4, 32))
    y1 = ttcore.tt_forward(cores, x)
    y2 = ttcore.tt_forward(cores, x)
    assert y1.tobytes() == y2.tobytes()


def test_backward_zero_upstream():
    rng = np.random.default_rng(2)
    plan = ttcore.make_plan(16, 16)
    cores = ttcore.init_cores(plan, 2, rng)
    x = rng.standard_normal((3, 16))
    _, cache = ttcore.tt_forward_cached(cores, x)
    dx, dcores, dbias = ttcore.tt_backward(cores, cache, np.zeros((3, 16)))
    assert not dx.any()
    assert not dbias.any()
    assert all(not g.any() for g in dcores)


def test_backward_bias_column_sum():
    rng = np.random.default_rng(4)
    plan = ttcore.make_plan(16, 32)
    cores = ttcore.init_cores(plan, 2, rng)
    x = rng.standard_normal((8, 16))
    _, cache = ttcore.tt_forward_cached(cores, x)
    _, _, dbias = ttcore.tt_backward(cores, cache, np.ones((8, 32)))
    np.testing.assert_array_equal(dbias, np.full(32, 8.0))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(21)
    configs = [(16, 16, 1), (16, 32, 2), (32, 16, 4), (64, 64, 3)]
    for in_dim, out_dim, rank in configs:
        plan = ttcore.make_plan(in_dim, out_dim)
        cores = ttcore.init_cores(plan, rank, rng)
        bias = rng.standard_normal(out_dim)
        x = rng.standard_normal((4, in_dim))
        proj = rng.standard_normal((4, out_dim))  # scalarize via fixed projection

        y, cache = ttcore.tt_forward_cached(cores, x, bias)
        dx, dcores, dbias = ttcore.tt_backward(cores, cache, proj)

        fd_x = finite_diff_grad(
            lambda v: float(np.sum(ttcore.tt_forward(cores, v, bias) * proj)), x
        )
        assert rel_err(dx, fd_x) <= 1e-6

        for m in range(plan.order):
            def loss_core(c, m=m):
                mutated = list(cores)
                mutated[m] = c
                return float(np.sum(ttcore.tt_forward(mutated, x, bias) * proj))

            fd_c = finite_diff_grad(loss_core, cores[m])
            assert rel_err(dcores[m], fd_c) <= 1e-6

        fd_b = finite_diff_grad(
            lambda b: float(np.sum(ttcore.tt_forward(cores, x, b) * proj)), bias
        )
        assert rel_err(dbias, fd_b) <= 1e-6


def test_reconstruct_backward_matches_finite_differences():
    rng = np.random.default_rng(27)
    for in_dim, out_dim, rank in [(16, 16, 2), (32, 64, 4), (64, 16, 3)]:
        plan = ttcore.make_plan(in_dim, out_dim)
        cores = ttcore.init_cores(plan, rank, rng)
        proj = rng.standard_normal((in_dim, out_dim))
        w, cache = ttcore.reconstruct_dense_cached(cores)
        dcores = ttcore.reconstruct_backward(cores, cache, proj)
        for m in range(plan.order):
            def loss_core(c, m=m):
                mutated = list(cores)
                mutated[m] = c
                return float(np.sum(ttcore.reconstruct_dense(mutated) * proj))

            fd = finite_diff_grad(loss_core, cores[m])
            assert rel_err(dcores[m], fd) <= 1e-6


def test_count_params_fig5_layer():
    plan = ttcore.FactorPlan((4, 4, 4, 4), (4, 4, 2, 2))
    cores = ttcore.init_cores(plan, 8, np.random.default_rng(0))
    assert ttcore.count_params(cores) == 128 + 1024 + 512 + 64 == 1728
    assert ttcore.dense_param_count(plan) == 16384
    assert ttcore.dense_param_count(plan) / ttcore.count_params(cores) == pytest.approx(
        9.48, abs=0.01
    )


def test_count_params_rank1_tiny():
    cores = [np.ones((1, 2, 2, 1)), np.ones((1, 2, 2, 1))]
    assert ttcore.count_params(cores) == 8
    assert ttcore.dense_param_count(ttcore.core_plan(cores)) == 16


def test_param_monotonicity_in_rank():
    rng = np.random.default_rng(1)
    for in_dim in (16, 64, 256, 1024):
        plan = ttcore.make_plan(in_dim, in_dim)
        p4 = ttcore.count_params(ttcore.init_cores(plan, 4, rng))
        p8 = ttcore.count_params(ttcore.init_cores(plan, 8, rng))
        assert p4 < p8
        # Rank-8 cores only undercut the dense layer from width 32 up; a
        # 16x16 layer at rank 8 costs 576 core entries vs 256 dense.
        if in_dim >= 32:
            assert p8 < ttcore.dense_param_count(plan)
        assert p4 < ttcore.dense_param_count(plan)


def test_flops_forward_counts_schedule():
    # Hand count for a 2-core chain: step sizes follow the documented
    # left-to-right schedule.
    cores = [np.ones((1, 2, 2, 3)), np.ones((3, 2, 2, 1))]
    batch = 5
    # step 1: lead = batch * o2 = 10, cost 10 * (2*1) * (2*3) = 120 MACs
    # step 2: lead = batch * p1 = 10, cost 10 * (2*3) * (2*1) = 120 MACs
    assert ttcore.count_flops_forward(cores, batch) == 2 * (120 + 120)


def test_shape_closure_all_plannable_dims():
    rng = np.random.default_rng(9)
    dims = [16, 32, 64, 128, 256, 512, 1024]
    for in_dim in dims:
        for out_dim in dims:
            plan = ttcore.make_plan(in_dim, out_dim)
            cores = ttcore.init_cores(plan, 2, rng)
            y = ttcore.tt_forward(cores, np.zeros((2, in_dim)))
            assert y.shape == (2, out_dim)
