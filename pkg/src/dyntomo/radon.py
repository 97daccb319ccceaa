"""Sparse parallel-beam projection operators for time sequences.

Geometry conventions (also recorded in data file headers, see `arrayio`):

* An image frame is an ``(n, n)`` float array ``u[iy, ix]``. Pixel centers sit
  at ``x = origin_x + (ix - (n-1)/2) * pixel_size`` and likewise for ``y``,
  so the grid is centered on ``origin``.
* A projection angle ``theta`` is measured from the positive x-axis. The ray
  direction is ``(cos theta, sin theta)`` and the detector offset ``s`` runs
  along the normal ``(-sin theta, cos theta)``; a ray is the line
  ``p(t) = origin + s * normal + t * direction``.
* Detector offsets are centered on the grid:
  ``s_k = (k - (n_bins - 1)/2) * bin_spacing`` for ``k = 0 .. n_bins - 1``.
* Rays of one angle occupy ``n_bins`` consecutive rows; row
  ``i = angle_index * n_bins + bin_index``. A flattened frame uses C order,
  column ``j = iy * n + ix``.

Matrix entries are exact Euclidean chord lengths of the ray inside each
pixel, computed by an incremental grid traversal. Blocks are immutable after
construction; one :class:`BlockDiagonalOperator` couples no time steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse


class NormEstimateError(RuntimeError):
    """Power iteration failed to converge within the iteration cap."""


@dataclass(frozen=True)
class GridSpec:
    """Square reconstruction grid: ``n`` pixels per side of size ``pixel_size``."""

    n: int
    pixel_size: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"grid side must be >= 1, got {self.n}")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be > 0, got {self.pixel_size}")

    @property
    def n_pixels(self) -> int:
        return self.n * self.n

    @property
    def extent(self) -> float:
        """Physical side length of the grid."""
        return self.n * self.pixel_size


@dataclass(frozen=True)
class DetectorSpec:
    """Linear detector: ``n_bins`` parallel ray offsets spaced ``bin_spacing`` apart."""

    n_bins: int
    bin_spacing: float = 1.0

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")
        if not self.bin_spacing > 0:
            raise ValueError(f"bin_spacing must be > 0, got {self.bin_spacing}")


def default_detector(grid: GridSpec, bin_spacing: float | None = None) -> DetectorSpec:
    """Detector wide enough to cover the grid diagonal (no truncation).

    Uses an odd bin count so the central offset passes through the grid
    origin. The bin spacing defaults to the pixel size.
    """
    spacing = grid.pixel_size if bin_spacing is None else bin_spacing
    diag = grid.extent * math.sqrt(2.0)
    n_bins = 2 * math.ceil(0.5 * diag / spacing) + 1
    return DetectorSpec(n_bins=n_bins, bin_spacing=spacing)


def detector_offsets(det: DetectorSpec) -> np.ndarray:
    """Signed ray offsets along the detector, centered on zero."""
    k = np.arange(det.n_bins, dtype=float)
    return (k - 0.5 * (det.n_bins - 1)) * det.bin_spacing


@dataclass(frozen=True)
class RadonBlock:
    """Projection matrix for one time step, rows = rays, cols = pixels."""

    matrix: sparse.csr_matrix
    angles: np.ndarray
    n_bins: int
    grid_n: int

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]


def build_radon_block(grid: GridSpec, det: DetectorSpec,
                      angles: Sequence[float]) -> RadonBlock:
    """Trace all rays of the given angles through the grid.

    Each matrix row holds the exact intersection lengths of one ray with the
    pixels it crosses. Rays missing the grid keep their (all-zero) row so row
    indexing stays aligned with detector bins.
    """
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    if angles.size == 0:
        raise ValueError("angle list must not be empty")
    if not np.all(np.isfinite(angles)):
        raise ValueError("angles must be finite")

    n = grid.n
    h = grid.pixel_size
    ox, oy = grid.origin
    half = 0.5 * grid.extent
    xmin, ymin = ox - half, oy - half
    xmax, ymax = ox + half, oy + half
    offsets = detector_offsets(det)
    n_bins = det.n_bins

    # Grid line coordinates, n+1 per axis.
    xlines = xmin + h * np.arange(n + 1)
    ylines = ymin + h * np.arange(n + 1)

    row_parts: list[np.ndarray] = []
    col_parts: list[np.ndarray] = []
    val_parts: list[np.ndarray] = []

    for a_i, theta in enumerate(angles):
        dx, dy = math.cos(theta), math.sin(theta)
        # Ray anchors: origin + s * normal.
        px = ox - offsets * dy
        py = oy + offsets * dx

        t_lo_x, t_hi_x = _slab_interval(px, dx, xmin, xmax)
        t_lo_y, t_hi_y = _slab_interval(py, dy, ymin, ymax)
        t_in = np.maximum(t_lo_x, t_lo_y)
        t_out = np.minimum(t_hi_x, t_hi_y)
        valid = t_out > t_in
        t_in = np.where(valid, t_in, 0.0)
        t_out = np.where(valid, t_out, 0.0)

        # Crossing parameters with every grid line, clipped to [t_in, t_out].
        if dx != 0.0:
            tx = (xlines[None, :] - px[:, None]) / dx
        else:
            tx = np.full((n_bins, n + 1), np.inf)
        if dy != 0.0:
            ty = (ylines[None, :] - py[:, None]) / dy
        else:
            ty = np.full((n_bins, n + 1), np.inf)
        crossings = np.concatenate(
            [tx, ty, t_in[:, None], t_out[:, None]], axis=1)
        crossings = np.clip(crossings, t_in[:, None], t_out[:, None])
        crossings.sort(axis=1)

        seg = np.diff(crossings, axis=1)
        mid = 0.5 * (crossings[:, :-1] + crossings[:, 1:])
        mx = px[:, None] + mid * dx
        my = py[:, None] + mid * dy
        ix = np.clip(np.floor((mx - xmin) / h).astype(np.int64), 0, n - 1)
        iy = np.clip(np.floor((my - ymin) / h).astype(np.int64), 0, n - 1)

        keep = seg > 0.0
        bins = np.broadcast_to(np.arange(n_bins)[:, None], seg.shape)
        row_parts.append(a_i * n_bins + bins[keep])
        col_parts.append((iy * n + ix)[keep])
        val_parts.append(seg[keep])

    rows = np.concatenate(row_parts)
    cols = np.concatenate(col_parts)
    vals = np.concatenate(val_parts)
    matrix = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(angles.size * n_bins, n * n))
    matrix.sum_duplicates()
    return RadonBlock(matrix=matrix, angles=angles, n_bins=n_bins, grid_n=n)


def _slab_interval(p: np.ndarray, d: float, lo: float, hi: float):
    """Parameter interval where p + t*d lies within [lo, hi], per ray."""
    if d != 0.0:
        t0 = (lo - p) / d
        t1 = (hi - p) / d
        return np.minimum(t0, t1), np.maximum(t0, t1)
    inside = (p >= lo) & (p <= hi)
    t_lo = np.where(inside, -np.inf, np.inf)
    t_hi = np.where(inside, np.inf, -np.inf)
    return t_lo, t_hi


@dataclass
class SinogramStack:
    """Per-time-step measurements: flat ray values plus their angle lists."""

    values: list[np.ndarray]
    angles: list[np.ndarray]
    n_bins: int
    noise_level: float = 0.0
    seed: int | None = None

    @property
    def n_t(self) -> int:
        return len(self.values)

    @property
    def total_rays(self) -> int:
        return sum(v.size for v in self.values)

    def concat(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.values])


class BlockDiagonalOperator:
    """Time-dependent projection operator, one sparse block per time step.

    Immutable after construction; safe for concurrent shared reads. The
    stacked CSR matrix makes forward/adjoint single sparse matvecs.
    """

    def __init__(self, blocks: Sequence[RadonBlock]):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("operator needs at least one block")
        cols = {b.cols for b in blocks}
        if len(cols) != 1:
            raise ValueError(f"blocks disagree on pixel count: {sorted(cols)}")
        self.blocks = blocks
        self.n = blocks[0].grid_n
        self.n_t = len(blocks)
        self._stacked = sparse.block_diag(
            [b.matrix for b in blocks], format="csr")
        self._stacked_t = self._stacked.T.tocsr()
        self.row_offsets = np.concatenate(
            [[0], np.cumsum([b.rows for b in blocks])])

    @property
    def domain_shape(self) -> tuple[int, int, int]:
        return (self.n_t, self.n, self.n)

    @property
    def total_rows(self) -> int:
        return int(self.row_offsets[-1])

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Project an (n_t, n, n) sequence to a flat ray-value vector."""
        u = np.asarray(u, dtype=float)
        if u.shape != self.domain_shape:
            raise ValueError(
                f"image sequence shape {u.shape} does not match operator "
                f"domain {self.domain_shape}")
        return self._stacked @ u.reshape(-1)

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """Back-project a flat ray-value vector to an (n_t, n, n) sequence."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.total_rows,):
            raise ValueError(
                f"ray vector length {y.shape} does not match operator rows "
                f"({self.total_rows},)")
        return (self._stacked_t @ y).reshape(self.domain_shape)

    def split(self, y: np.ndarray) -> list[np.ndarray]:
        """Cut a flat ray-value vector into per-time-step pieces."""
        return [y[self.row_offsets[t]:self.row_offsets[t + 1]]
                for t in range(self.n_t)]


def build_operator(grid: GridSpec, det: DetectorSpec,
                   per_step_angles: Sequence[Sequence[float]]) -> BlockDiagonalOperator:
    """Build one Radon block per time step from its angle list."""
    return BlockDiagonalOperator(
        [build_radon_block(grid, det, a) for a in per_step_angles])


def forward(op: BlockDiagonalOperator, u: np.ndarray) -> SinogramStack:
    """Apply the operator frame by frame; no cross-frame mixing."""
    y = op.apply(u)
    return SinogramStack(values=op.split(y),
                         angles=[b.angles for b in op.blocks],
                         n_bins=op.blocks[0].n_bins)


def adjoint(op: BlockDiagonalOperator, m: SinogramStack) -> np.ndarray:
    """Apply the exact transpose frame by frame."""
    if m.n_t != op.n_t:
        raise ValueError(
            f"sinogram has {m.n_t} steps, operator has {op.n_t}")
    for t, (v, b) in enumerate(zip(m.values, op.blocks)):
        if np.ravel(v).size != b.rows:
            raise ValueError(
                f"step {t}: {np.ravel(v).size} ray values vs {b.rows} "
                f"operator rows")
    return op.apply_adjoint(m.concat())


@dataclass(frozen=True)
class LinearMap:
    """Adapter letting arbitrary linear callables stack with a Radon operator."""

    apply: Callable[[np.ndarray], np.ndarray]
    apply_adjoint: Callable[[np.ndarray], np.ndarray]
    domain_shape: tuple[int, ...] = field(default=())


def operator_norm_estimate(op, extra_blocks: Sequence = (), *,
                           tol: float = 1e-6, max_iters: int = 2000,
                           seed: int = 0) -> float:
    """Largest singular value of the stacked map (op; extras) by power iteration.

    Iterates on K^T K starting from a seeded Gaussian vector and stops when
    the singular value estimate is stable to ``tol`` relative. Raises
    :class:`NormEstimateError` when the cap is hit first.
    """
    maps = (op, *extra_blocks)
    rng = np.random.Generator(np.random.Philox(seed))
    x = rng.standard_normal(op.domain_shape)
    nx = math.sqrt(float(np.sum(x * x)))
    if nx == 0.0:
        return 0.0
    x = x / nx

    prev = None
    for _ in range(max_iters):
        ys = [m.apply(x) for m in maps]
        lam = sum(float(np.sum(y * y)) for y in ys)
        s = math.sqrt(lam)
        if s == 0.0:
            return 0.0
        if prev is not None and abs(s - prev) <= tol * s:
            return s
        prev = s
        xn = maps[0].apply_adjoint(ys[0])
        for m, y in zip(maps[1:], ys[1:]):
            xn = xn + m.apply_adjoint(y)
        nx = math.sqrt(float(np.sum(xn * xn)))
        if nx == 0.0:
            return 0.0
        x = xn / nx
    raise NormEstimateError(
        f"power iteration did not stabilize to {tol} in {max_iters} iterations")
