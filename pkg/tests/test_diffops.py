"""Stencil definitions, exact transposes, warping, pyramid transfer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyntomo import diffops

import oracles


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


class TestGradient:
    def test_constant_frame_zero_gradient(self):
        g = diffops.gradient(np.full((5, 5), 3.3))
        assert np.all(g == 0)

    def test_ramp(self):
        n = 6
        frame = np.tile(np.arange(float(n)), (n, 1))
        g = diffops.gradient(frame)
        assert np.all(g[0, :, :-1] == 1.0)
        assert np.all(g[0, :, -1] == 0.0)
        assert np.all(g[1] == 0.0)

    def test_adjoint_vs_densified_transpose(self):
        n = 5
        grad_mat = oracles.densify(diffops.gradient, (n, n), (2, n, n))
        gradt_mat = oracles.densify(diffops.gradient_transpose, (2, n, n),
                                    (n, n))
        np.testing.assert_allclose(gradt_mat, grad_mat.T, atol=1e-12)

    def test_divergence_is_negative_transpose(self):
        g = rng(1)
        u = g.standard_normal((6, 6))
        p = g.standard_normal((2, 6, 6))
        lhs = float(np.sum(diffops.gradient(u) * p))
        rhs = -float(np.sum(u * diffops.divergence_adjoint(p)))
        assert lhs == pytest.approx(rhs, abs=1e-12)


class TestTvNorm:
    def test_zero_field(self):
        assert diffops.tv_norm(np.zeros((2, 4, 4))) == 0.0

    def test_single_pixel_three_four(self):
        field = np.zeros((2, 3, 3))
        field[0, 1, 1] = 3.0
        field[1, 1, 1] = 4.0
        assert diffops.tv_norm(field) == pytest.approx(5.0)

    def test_matches_double_loop_oracle(self):
        field = rng(2).standard_normal((2, 7, 5))
        assert diffops.tv_norm(field) == pytest.approx(
            oracles.tv_norm_loops(field), abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(c=st.floats(-50, 50), seed=st.integers(0, 1000))
    def test_absolute_homogeneity(self, c, seed):
        field = rng(seed).standard_normal((2, 4, 4))
        assert diffops.tv_norm(c * field) == pytest.approx(
            abs(c) * diffops.tv_norm(field), rel=1e-12, abs=1e-12)


class TestTransport:
    def test_zero_flow_is_time_difference(self):
        u = rng(3).standard_normal((4, 5, 5))
        v = np.zeros((3, 2, 5, 5))
        np.testing.assert_allclose(diffops.transport_apply(u, v),
                                   u[1:] - u[:-1], atol=1e-15)

    def test_constant_sequence_zero_residual(self):
        u = np.full((4, 5, 5), 1.7)
        v = rng(4).standard_normal((3, 2, 5, 5))
        assert np.all(diffops.transport_apply(u, v) == 0)

    def test_adjoint_vs_densified_transpose(self):
        n_t, n = 3, 4
        v = rng(5).standard_normal((n_t - 1, 2, n, n))
        fwd = oracles.densify(lambda u: diffops.transport_apply(u, v),
                              (n_t, n, n), (n_t - 1, n, n))
        adj = oracles.densify(lambda r: diffops.transport_adjoint(v, r),
                              (n_t - 1, n, n), (n_t, n, n))
        np.testing.assert_allclose(adj, fwd.T, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            diffops.transport_apply(np.zeros((3, 4, 4)),
                                    np.zeros((3, 2, 4, 4)))

    def test_factorizations_agree(self):
        g = rng(6)
        u = g.standard_normal((4, 6, 6))
        v = g.standard_normal((3, 2, 6, 6))
        lhs = diffops.flow_operator_apply(u, v) - diffops.flow_rhs(u)
        np.testing.assert_allclose(lhs, diffops.transport_apply(u, v),
                                   atol=1e-12)

    def test_static_sequence_zero_rhs(self):
        u = np.tile(rng(7).standard_normal((5, 5)), (3, 1, 1))
        assert np.all(diffops.flow_rhs(u) == 0)

    def test_flow_operator_adjoint(self):
        g = rng(8)
        u = g.standard_normal((3, 5, 5))
        v = g.standard_normal((2, 2, 5, 5))
        r = g.standard_normal((2, 5, 5))
        lhs = float(np.sum(diffops.flow_operator_apply(u, v) * r))
        rhs = float(np.sum(v * diffops.flow_operator_adjoint(u, r)))
        assert lhs == pytest.approx(rhs, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 8), n_t=st.integers(2, 5))
def test_randomized_adjoint_identities(seed, n, n_t):
    g = rng(seed)
    u = g.standard_normal((n_t, n, n))
    v = g.standard_normal((n_t - 1, 2, n, n))
    p = g.standard_normal((n_t, 2, n, n))
    r = g.standard_normal((n_t - 1, n, n))

    lhs = float(np.sum(diffops.gradient(u) * p))
    rhs = float(np.sum(u * diffops.gradient_transpose(p)))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    lhs = float(np.sum(diffops.transport_apply(u, v) * r))
    rhs = float(np.sum(u * diffops.transport_adjoint(v, r)))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)

    lhs = float(np.sum(diffops.flow_operator_apply(u, v) * r))
    rhs = float(np.sum(v * diffops.flow_operator_adjoint(u, r)))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


class TestWarp:
    def test_zero_flow_identity(self):
        f = rng(9).standard_normal((6, 6))
        np.testing.assert_array_equal(diffops.warp(f, np.zeros((2, 6, 6))), f)

    def test_integer_shift_with_replication(self):
        f = rng(10).standard_normal((5, 5))
        flow = np.zeros((2, 5, 5))
        flow[0] = 1.0
        w = diffops.warp(f, flow)
        np.testing.assert_array_equal(w[:, :-1], f[:, 1:])
        np.testing.assert_array_equal(w[:, -1], f[:, -1])

    def test_half_pixel_on_ramp_exact(self):
        n = 8
        ramp = np.tile(np.arange(float(n)), (n, 1))
        flow = np.zeros((2, n, n))
        flow[0] = 0.5
        w = diffops.warp(ramp, flow)
        np.testing.assert_allclose(w[:, :-1], ramp[:, :-1] + 0.5, atol=1e-12)

    def test_rejects_nonfinite_flow(self):
        flow = np.zeros((2, 4, 4))
        flow[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            diffops.warp(np.zeros((4, 4)), flow)


class TestPyramidTransfer:
    def test_restrict_constant(self):
        out = diffops.restrict(np.full((6, 6), 2.5))
        np.testing.assert_allclose(out, 2.5)

    def test_restrict_checkerboard(self):
        board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
        np.testing.assert_allclose(diffops.restrict(board),
                                   np.full((2, 2), 0.5))

    def test_prolong_restrict_constant_identity(self):
        c = np.full((8, 8), -1.3)
        np.testing.assert_allclose(diffops.prolong(diffops.restrict(c)), c)

    def test_odd_sizes_replicate_padded(self):
        f = rng(11).standard_normal((5, 7))
        out = diffops.restrict(f)
        assert out.shape == (3, 4)
        back = diffops.prolong(out, out_shape=(5, 7))
        assert back.shape == (5, 7)

    def test_restrict_only_factor_two(self):
        with pytest.raises(ValueError):
            diffops.restrict(np.zeros((4, 4)), factor=3)

    def test_prolonged_flow_values_doubled(self):
        flow = rng(12).standard_normal((3, 2, 4, 4))
        up = diffops.prolong_flow(flow)
        assert up.shape == (3, 2, 8, 8)
        # Constant flow prolongs to exactly twice the displacement.
        const = np.full((1, 2, 4, 4), 0.75)
        np.testing.assert_allclose(diffops.prolong_flow(const), 1.5)

    def test_restrict_flow_halves_displacements(self):
        const = np.full((2, 2, 4, 4), 1.0)
        np.testing.assert_allclose(diffops.restrict_flow(const), 0.5)
