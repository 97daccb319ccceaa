"""Moving-ball ("pinball") ground truth and inverse-crime-safe data simulation.

The phantom is a uniform rigid disc translating left to right inside a
stationary ellipse of lower intensity. Geometry is given in pixel units of
the target grid, relative to the grid center (x along columns, y along rows).

Sinograms are simulated at ``supersample`` times the target resolution with a
matched finer detector, noise is added there, and detector bins are then
block-averaged down. Reconstruction therefore never sees data generated by
its own discrete operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .radon import DetectorSpec, GridSpec, SinogramStack, build_radon_block


@dataclass(frozen=True)
class PhantomSpec:
    """Pinball geometry; defaults chosen for a 42 x 42, 30-step sequence.

    All lengths are in target-grid pixel units measured from the grid center.
    These are configuration defaults, not physical constants.
    """

    n: int = 42
    n_t: int = 30
    supersample: int = 8
    ball_radius: float = 4.0
    ball_intensity: float = 1.0
    ball_x_start: float = -10.0
    ball_x_end: float = 10.0
    ball_y: float = 0.0
    ellipse_center: tuple[float, float] = (0.0, 0.0)
    ellipse_semi_axes: tuple[float, float] = (17.0, 12.0)
    ellipse_intensity: float = 0.5

    def __post_init__(self):
        if self.n < 1 or self.n_t < 1:
            raise ValueError("n and n_t must be >= 1")
        if self.supersample < 1:
            raise ValueError(f"supersample must be >= 1, got {self.supersample}")
        if self.ball_intensity < 0 or self.ellipse_intensity < 0:
            raise ValueError("intensities must be >= 0")
        a, b = self.ellipse_semi_axes
        r = self.ball_radius
        if not (a > r and b > r):
            raise ValueError(
                f"ball radius {r} does not fit inside semi-axes {a} x {b}")
        # The disc stays inside the ellipse iff its center stays inside the
        # eroded ellipse; the ellipse with semi-axes (a - r, b - r) is a
        # sufficient inner bound, and the path is a segment, so checking the
        # endpoints suffices.
        for x in (self.ball_x_start, self.ball_x_end):
            ex, ey = self.ellipse_center
            q = ((x - ex) / (a - r)) ** 2 + ((self.ball_y - ey) / (b - r)) ** 2
            if q > 1.0:
                raise ValueError(
                    f"ball center ({x}, {self.ball_y}) leaves the ellipse "
                    f"interior (eroded-ellipse value {q:.3f} > 1)")

    def ball_center(self, t: int) -> tuple[float, float]:
        """Ball center at step ``t``, linearly interpolated along the path."""
        if not 0 <= t < self.n_t:
            raise ValueError(f"step {t} outside [0, {self.n_t})")
        frac = t / (self.n_t - 1) if self.n_t > 1 else 0.0
        x = self.ball_x_start + frac * (self.ball_x_end - self.ball_x_start)
        return x, self.ball_y


def _render_samples(spec: PhantomSpec, t: int, scale: int) -> np.ndarray:
    """Point-sample the piecewise-constant phantom on a scale*n grid."""
    nf = spec.n * scale
    coords = (np.arange(nf) - 0.5 * (nf - 1)) / scale
    xx = coords[None, :]
    yy = coords[:, None]
    ex, ey = spec.ellipse_center
    a, b = spec.ellipse_semi_axes
    frame = np.where(((xx - ex) / a) ** 2 + ((yy - ey) / b) ** 2 <= 1.0,
                     spec.ellipse_intensity, 0.0)
    bx, by = spec.ball_center(t)
    inside_ball = (xx - bx) ** 2 + (yy - by) ** 2 <= spec.ball_radius ** 2
    return np.where(inside_ball, spec.ball_intensity, frame)


def _block_mean(arr: np.ndarray, s: int) -> np.ndarray:
    ny, nx = arr.shape
    return arr.reshape(ny // s, s, nx // s, s).mean(axis=(1, 3))


def render_pinball(spec: PhantomSpec, t: int) -> np.ndarray:
    """Area-averaged n x n frame at step ``t`` (supersampled rasterization)."""
    fine = _render_samples(spec, t, spec.supersample)
    return _block_mean(fine, spec.supersample)


def ground_truth(spec: PhantomSpec) -> np.ndarray:
    """All frames stacked to an (n_t, n, n) sequence."""
    return np.stack([render_pinball(spec, t) for t in range(spec.n_t)])


def simulate_sinogram(spec: PhantomSpec, schedule, grid: GridSpec,
                      det: DetectorSpec, noise_level: float,
                      seed: int) -> SinogramStack:
    """Project the supersampled phantom, add noise, downscale the bins.

    Noise is i.i.d. Gaussian with standard deviation ``noise_level`` times
    the maximum of the clean high-resolution sinogram over all steps, added
    before bin averaging. Deterministic in ``seed`` (Philox stream, steps in
    order).
    """
    if schedule.n_t != spec.n_t:
        raise ValueError(
            f"schedule has {schedule.n_t} steps but phantom has {spec.n_t}")
    if grid.n != spec.n:
        raise ValueError(
            f"grid side {grid.n} does not match phantom resolution {spec.n}")
    if noise_level < 0:
        raise ValueError(f"noise_level must be >= 0, got {noise_level}")

    s = spec.supersample
    fine_grid = GridSpec(n=grid.n * s, pixel_size=grid.pixel_size / s,
                         origin=grid.origin)
    # s consecutive fine bins average to a bin centered exactly on the
    # corresponding coarse detector offset.
    fine_det = DetectorSpec(n_bins=det.n_bins * s,
                            bin_spacing=det.bin_spacing / s)

    clean_hi = []
    for t, angles in enumerate(schedule.per_step):
        block = build_radon_block(fine_grid, fine_det, angles)
        frame = _render_samples(spec, t, s)
        clean_hi.append((block.matrix @ frame.reshape(-1))
                        .reshape(len(angles), fine_det.n_bins))

    rng = np.random.Generator(np.random.Philox(seed))
    peak = max(float(v.max()) for v in clean_hi)
    std = noise_level * peak
    values = []
    for hi in clean_hi:
        if std > 0:
            hi = hi + rng.normal(0.0, std, size=hi.shape)
        values.append(hi.reshape(hi.shape[0], det.n_bins, s)
                      .mean(axis=2).reshape(-1))
    return SinogramStack(values=values,
                         angles=[np.asarray(a, dtype=float)
                                 for a in schedule.per_step],
                         n_bins=det.n_bins, noise_level=noise_level,
                         seed=seed)
