"""Projection geometry: exact chord lengths, adjointness, norm estimation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyntomo import (DetectorSpec, GridSpec, LinearMap, NormEstimateError,
                     SinogramStack, adjoint, build_operator,
                     build_radon_block, default_detector, forward,
                     operator_norm_estimate)
from dyntomo.radon import detector_offsets

import oracles


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


class TestBuildRadonBlock:
    def test_single_pixel_axis_ray(self):
        block = build_radon_block(GridSpec(n=1), DetectorSpec(1), [0.0])
        np.testing.assert_allclose(block.matrix.toarray(), [[1.0]],
                                   atol=1e-15)

    def test_two_by_two_diagonal_ray(self):
        # Central 45-degree ray passes through pixel corners: sqrt(2) in the
        # two diagonal pixels, nothing elsewhere. Reference values from the
        # per-pixel box clipping oracle.
        grid = GridSpec(n=2)
        det = DetectorSpec(1)
        block = build_radon_block(grid, det, [math.pi / 4])
        ref = oracles.dense_radon_reference(2, 1.0, detector_offsets(det),
                                            [math.pi / 4])
        np.testing.assert_allclose(block.matrix.toarray(), ref, atol=1e-12)
        dense = block.matrix.toarray()[0]
        assert dense[0] == pytest.approx(math.sqrt(2), abs=1e-12)
        assert dense[3] == pytest.approx(math.sqrt(2), abs=1e-12)
        assert dense[1] == dense[2] == 0.0

    def test_shape_contract(self):
        block = build_radon_block(GridSpec(n=8), DetectorSpec(11),
                                  [0.1, 0.9, 2.2])
        assert block.rows == 33
        assert block.cols == 64

    def test_rejects_empty_angles(self):
        with pytest.raises(ValueError):
            build_radon_block(GridSpec(n=4), DetectorSpec(5), [])

    def test_rejects_nonfinite_angles(self):
        with pytest.raises(ValueError):
            build_radon_block(GridSpec(n=4), DetectorSpec(5), [0.1, np.nan])

    def test_matches_dense_clipping_oracle(self):
        grid = GridSpec(n=5, pixel_size=0.7)
        det = DetectorSpec(9, bin_spacing=0.6)
        angles = [0.0, 0.3, math.pi / 2, 2.0, 3.1]
        block = build_radon_block(grid, det, angles)
        ref = oracles.dense_radon_reference(5, 0.7, detector_offsets(det),
                                            angles)
        np.testing.assert_allclose(block.matrix.toarray(), ref, atol=1e-12)

    def test_entries_nonnegative_and_bounded(self):
        grid = GridSpec(n=7, pixel_size=1.3)
        block = build_radon_block(grid, DetectorSpec(15, 0.9),
                                  rng(1).uniform(0, math.pi, 10))
        data = block.matrix.data
        assert np.all(data >= 0)
        assert np.all(data <= 1.3 * math.sqrt(2) + 1e-12)

    def test_row_nonzero_count_bound(self):
        n = 9
        block = build_radon_block(GridSpec(n=n), DetectorSpec(2 * n),
                                  rng(2).uniform(0, math.pi, 8))
        counts = np.diff(block.matrix.indptr)
        assert np.all(counts <= 2 * n)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 12))
    def test_row_sums_equal_grid_chords(self, seed, n):
        g = rng(seed)
        pixel_size = float(g.uniform(0.3, 2.0))
        grid = GridSpec(n=n, pixel_size=pixel_size)
        det = default_detector(grid)
        angles = g.uniform(0, math.pi, 3)
        block = build_radon_block(grid, det, angles)
        sums = np.asarray(block.matrix.sum(axis=1)).ravel()
        offsets = detector_offsets(det)
        for a_i, angle in enumerate(angles):
            for b_i, s in enumerate(offsets):
                expected = oracles.grid_chord_length(n, pixel_size, angle, s)
                assert sums[a_i * det.n_bins + b_i] == pytest.approx(
                    expected, abs=1e-12)


class TestForwardAdjoint:
    def _operator(self, seed=3, n=8, n_t=3, angles_per_step=2):
        g = rng(seed)
        grid = GridSpec(n=n)
        det = default_detector(grid)
        per_step = [g.uniform(0, math.pi, angles_per_step)
                    for _ in range(n_t)]
        return build_operator(grid, det, per_step)

    def test_zero_image_zero_sinogram(self):
        op = self._operator()
        out = forward(op, np.zeros(op.domain_shape))
        assert all(np.all(v == 0) for v in out.values)

    def test_constant_frame_axis_ray_value(self):
        # Horizontal ray through a constant frame picks up c * width * height.
        n, c, h = 6, 2.5, 0.8
        grid = GridSpec(n=n, pixel_size=h)
        det = DetectorSpec(1)
        op = build_operator(grid, det, [[0.0]])
        out = forward(op, np.full((1, n, n), c))
        assert out.values[0][0] == pytest.approx(c * n * h, rel=1e-12)

    def test_matches_dense_matvec(self):
        g = rng(4)
        grid = GridSpec(n=8)
        det = default_detector(grid)
        angles = g.uniform(0, math.pi, 5)
        op = build_operator(grid, det, [angles])
        u = g.standard_normal((1, 8, 8))
        dense = op.blocks[0].matrix.toarray()
        expected = dense @ u[0].reshape(-1)
        np.testing.assert_allclose(forward(op, u).values[0], expected,
                                   atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        op = self._operator()
        with pytest.raises(ValueError):
            op.apply(np.zeros((2, 8, 8)))
        bad = SinogramStack(values=[np.zeros(3)] * op.n_t,
                            angles=[np.zeros(1)] * op.n_t, n_bins=3)
        with pytest.raises(ValueError):
            adjoint(op, bad)

    def test_zero_sinogram_zero_image(self):
        op = self._operator()
        m = forward(op, np.zeros(op.domain_shape))
        assert np.all(adjoint(op, m) == 0)

    def test_adjoint_identity(self):
        op = self._operator(seed=5)
        g = rng(6)
        u = g.standard_normal(op.domain_shape)
        y = g.standard_normal(op.total_rows)
        lhs = float(np.sum(op.apply(u) * y))
        rhs = float(np.sum(u * op.apply_adjoint(y)))
        scale = math.sqrt(np.sum(op.apply(u) ** 2)) * math.sqrt(np.sum(y * y))
        assert abs(lhs - rhs) <= 1e-10 * scale

    def test_impulse_backprojects_ray_footprint(self):
        grid = GridSpec(n=6)
        det = default_detector(grid)
        op = build_operator(grid, det, [[0.7]])
        ray = 4
        impulse = np.zeros(op.total_rows)
        impulse[ray] = 1.0
        image = op.apply_adjoint(impulse)
        footprint = op.blocks[0].matrix.toarray()[ray].reshape(6, 6)
        np.testing.assert_allclose(image[0], footprint, atol=1e-15)

    def test_block_diagonality(self):
        op = self._operator(seed=7, n_t=4)
        g = rng(8)
        u = g.standard_normal(op.domain_shape)
        base = forward(op, u)
        u2 = u.copy()
        u2[2] += g.standard_normal((8, 8))
        pert = forward(op, u2)
        for t in range(4):
            if t == 2:
                assert np.any(pert.values[t] != base.values[t])
            else:
                np.testing.assert_array_equal(pert.values[t], base.values[t])


class TestOperatorNorm:
    def test_identity(self):
        m = LinearMap(apply=lambda x: x, apply_adjoint=lambda y: y,
                      domain_shape=(10,))
        assert operator_norm_estimate(m) == pytest.approx(1.0, abs=1e-3)

    def test_diagonal(self):
        d = np.array([3.0, 1.0, 1.0])
        m = LinearMap(apply=lambda x: d * x, apply_adjoint=lambda y: d * y,
                      domain_shape=(3,))
        assert operator_norm_estimate(m) == pytest.approx(3.0, abs=1e-3)

    def test_random_dense_vs_svd(self):
        a = rng(9).standard_normal((20, 16))
        m = LinearMap(apply=lambda x: a @ x, apply_adjoint=lambda y: a.T @ y,
                      domain_shape=(16,))
        top = np.linalg.svd(a, compute_uv=False)[0]
        assert operator_norm_estimate(m) == pytest.approx(top, rel=1e-3)

    def test_stacked_maps(self):
        a = rng(10).standard_normal((7, 5))
        b = rng(11).standard_normal((4, 5))
        stacked = np.vstack([a, b])
        top = np.linalg.svd(stacked, compute_uv=False)[0]
        ma = LinearMap(apply=lambda x: a @ x, apply_adjoint=lambda y: a.T @ y,
                       domain_shape=(5,))
        mb = LinearMap(apply=lambda x: b @ x, apply_adjoint=lambda y: b.T @ y)
        assert operator_norm_estimate(ma, [mb]) == pytest.approx(top, rel=1e-3)

    def test_nonconvergence_raises(self):
        d = np.array([1.0, 0.999999])
        m = LinearMap(apply=lambda x: d * x, apply_adjoint=lambda y: d * y,
                      domain_shape=(2,))
        with pytest.raises(NormEstimateError):
            operator_norm_estimate(m, tol=1e-14, max_iters=3)
