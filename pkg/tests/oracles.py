"""Independent reference implementations the tests check against.

Nothing in here may call into the code paths it verifies: chord lengths come
from Liang-Barsky style interval clipping, operator transposes from dense
matrices assembled column by column, and the TV denoising optimum from a
damped Newton method on an epsilon-smoothed objective.
"""

import math

import numpy as np


def clip_chord_length(px, py, dx, dy, xmin, xmax, ymin, ymax):
    """Length of the line (px, py) + t (dx, dy) inside an axis-aligned box.

    Direction must be unit length so parameter range equals arc length.
    """
    t0, t1 = -math.inf, math.inf
    for p, d, lo, hi in ((px, dx, xmin, xmax), (py, dy, ymin, ymax)):
        if d == 0.0:
            if not lo <= p <= hi:
                return 0.0
        else:
            ta, tb = (lo - p) / d, (hi - p) / d
            t0 = max(t0, min(ta, tb))
            t1 = min(t1, max(ta, tb))
    return max(0.0, t1 - t0)


def ray_anchor(angle, offset, origin=(0.0, 0.0)):
    """Anchor point and unit direction of the ray at (angle, offset)."""
    dx, dy = math.cos(angle), math.sin(angle)
    px = origin[0] - offset * dy
    py = origin[1] + offset * dx
    return px, py, dx, dy


def dense_radon_reference(n, pixel_size, offsets, angles, origin=(0.0, 0.0)):
    """Radon matrix assembled by clipping every ray against every pixel box."""
    half = 0.5 * n * pixel_size
    rows = []
    for angle in angles:
        for s in offsets:
            px, py, dx, dy = ray_anchor(angle, s, origin)
            row = np.zeros(n * n)
            for iy in range(n):
                for ix in range(n):
                    x0 = origin[0] - half + ix * pixel_size
                    y0 = origin[1] - half + iy * pixel_size
                    row[iy * n + ix] = clip_chord_length(
                        px, py, dx, dy, x0, x0 + pixel_size,
                        y0, y0 + pixel_size)
            rows.append(row)
    return np.array(rows)


def grid_chord_length(n, pixel_size, angle, offset, origin=(0.0, 0.0)):
    """Chord of one ray through the grid bounding square."""
    half = 0.5 * n * pixel_size
    px, py, dx, dy = ray_anchor(angle, offset, origin)
    return clip_chord_length(px, py, dx, dy, origin[0] - half,
                             origin[0] + half, origin[1] - half,
                             origin[1] + half)


def densify(apply_fn, domain_shape, range_shape):
    """Column-by-column dense matrix of a linear map between array spaces."""
    dom = int(np.prod(domain_shape))
    ran = int(np.prod(range_shape))
    mat = np.zeros((ran, dom))
    for j in range(dom):
        e = np.zeros(dom)
        e[j] = 1.0
        mat[:, j] = np.ravel(apply_fn(e.reshape(domain_shape)))
    return mat


def tv_norm_loops(field):
    """Sum of pointwise Euclidean norms, written as explicit loops."""
    field = np.asarray(field, dtype=float)
    total = 0.0
    for iy in range(field.shape[-2]):
        for ix in range(field.shape[-1]):
            total += math.sqrt(float(np.sum(field[..., :, iy, ix] ** 2)))
    return total


def _grad_matrices(n):
    """Dense forward-difference matrices (replicate boundary) on n x n."""
    gx = np.zeros((n * n, n * n))
    gy = np.zeros((n * n, n * n))
    for iy in range(n):
        for ix in range(n):
            i = iy * n + ix
            if ix < n - 1:
                gx[i, i] = -1.0
                gx[i, i + 1] = 1.0
            if iy < n - 1:
                gy[i, i] = -1.0
                gy[i, i + n] = 1.0
    return gx, gy


def smoothed_tv_denoise(m, alpha, eps=1e-9, tol=1e-12, max_iters=200):
    """Minimize 0.5 |u - m|^2 + alpha * sum sqrt(|grad u|^2 + eps^2).

    Damped Newton on the smoothed objective. Returns the minimizer; with
    eps this small its nonsmooth energy is the reference optimum for small
    frames.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    gx, gy = _grad_matrices(n)
    mvec = m.reshape(-1)
    u = mvec.copy()

    def energy_grad_hess(u):
        ax = gx @ u
        ay = gy @ u
        phi = np.sqrt(ax * ax + ay * ay + eps * eps)
        e = 0.5 * float(np.sum((u - mvec) ** 2)) + alpha * float(np.sum(phi))
        grad = (u - mvec) + alpha * (gx.T @ (ax / phi) + gy.T @ (ay / phi))
        # Per-pixel 2x2 blocks of the TV Hessian: (I - g g^T / phi^2) / phi.
        inv = 1.0 / phi
        dxx = inv - ax * ax * inv ** 3
        dyy = inv - ay * ay * inv ** 3
        dxy = -ax * ay * inv ** 3
        hess = np.eye(u.size)
        hess += alpha * (gx.T * dxx) @ gx
        hess += alpha * (gy.T * dyy) @ gy
        hess += alpha * (gx.T * dxy) @ gy
        hess += alpha * (gy.T * dxy) @ gx
        return e, grad, hess

    for _ in range(max_iters):
        e, grad, hess = energy_grad_hess(u)
        if float(np.max(np.abs(grad))) < tol:
            break
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while t > 1e-12:
            e_new, _, _ = energy_grad_hess(u - t * step)
            if e_new <= e:
                break
            t *= 0.5
        u = u - t * step
    return u.reshape(m.shape)
