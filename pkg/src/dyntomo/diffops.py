"""Shared discrete operators: gradient, transport, warping, pyramid transfer.

One stencil is used everywhere: forward differences with replicate (Neumann)
boundary, so the last row/column of each difference is zero. Keeping a single
stencil makes the motion-linearized operators exact transposes of each other
and keeps all adjoint tests tight.

Array shapes: frames are ``(..., ny, nx)``; vector fields carry their two
components on axis ``-3``, i.e. ``(..., 2, ny, nx)`` with component 0 along x
(columns) and component 1 along y (rows). An image sequence is ``(n_t, n,
n)`` and a flow sequence ``(n_t - 1, 2, n, n)``.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def gradient(frames: np.ndarray) -> np.ndarray:
    """Forward-difference gradient, components stacked on axis -3."""
    frames = np.asarray(frames, dtype=float)
    out = np.zeros(frames.shape[:-2] + (2,) + frames.shape[-2:])
    out[..., 0, :, :-1] = frames[..., :, 1:] - frames[..., :, :-1]
    out[..., 1, :-1, :] = frames[..., 1:, :] - frames[..., :-1, :]
    return out


def gradient_transpose(fields: np.ndarray) -> np.ndarray:
    """Exact transpose of :func:`gradient` (acts on axis -3 pairs)."""
    fields = np.asarray(fields, dtype=float)
    fx = fields[..., 0, :, :]
    fy = fields[..., 1, :, :]
    out = np.zeros(fields.shape[:-3] + fields.shape[-2:])
    out[..., :, 1:] += fx[..., :, :-1]
    out[..., :, :-1] -= fx[..., :, :-1]
    out[..., 1:, :] += fy[..., :-1, :]
    out[..., :-1, :] -= fy[..., :-1, :]
    return out


def divergence_adjoint(fields: np.ndarray) -> np.ndarray:
    """Discrete divergence: the negative transpose of :func:`gradient`."""
    return -gradient_transpose(fields)


def tv_norm(fields: np.ndarray) -> float:
    """Isotropic total variation: pointwise 2-norm over axis -3, then sum."""
    fields = np.asarray(fields, dtype=float)
    return float(np.sum(np.sqrt(np.sum(fields * fields, axis=-3))))


def transport_apply(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Motion-linearized temporal residuals, one per frame interval.

    ``r_i = u[i+1] - u[i] + grad(u[i]) . v[i]`` with the gradient taken on
    the earlier frame. Linear in ``u`` for fixed ``v`` and vice versa.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_flow_shape(u, v)
    g = gradient(u[:-1])
    return u[1:] - u[:-1] + g[:, 0] * v[:, 0] + g[:, 1] * v[:, 1]


def transport_adjoint(v: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Transpose of ``u -> transport_apply(u, v)`` for fixed ``v``."""
    v = np.asarray(v, dtype=float)
    r = np.asarray(r, dtype=float)
    n_t = r.shape[0] + 1
    out = np.zeros((n_t,) + r.shape[1:])
    out[1:] += r
    out[:-1] -= r
    weighted = v * r[:, None]
    out[:-1] += gradient_transpose(weighted)
    return out


def flow_rhs(u: np.ndarray) -> np.ndarray:
    """Right-hand side ``b_i = u[i] - u[i+1]`` of the flow data term."""
    u = np.asarray(u, dtype=float)
    return u[:-1] - u[1:]


def flow_operator_apply(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``grad(u[i]) . v[i]`` with the image fixed; the flow-side data map."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_flow_shape(u, v)
    g = gradient(u[:-1])
    return g[:, 0] * v[:, 0] + g[:, 1] * v[:, 1]


def flow_operator_adjoint(u: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Transpose of ``v -> flow_operator_apply(u, v)`` for fixed ``u``."""
    u = np.asarray(u, dtype=float)
    r = np.asarray(r, dtype=float)
    g = gradient(u[:-1])
    return g * r[:, None]


def _check_flow_shape(u: np.ndarray, v: np.ndarray) -> None:
    expected = (u.shape[0] - 1, 2) + u.shape[1:]
    if v.shape != expected:
        raise ValueError(
            f"flow shape {v.shape} does not match image sequence "
            f"{u.shape} (expected {expected})")


def warp(frame: np.ndarray, flow_field: np.ndarray) -> np.ndarray:
    """Sample ``frame`` at ``x + v(x)`` with bilinear interpolation.

    Out-of-range samples replicate the nearest edge value.
    """
    frame = np.asarray(frame, dtype=float)
    flow_field = np.asarray(flow_field, dtype=float)
    if not np.all(np.isfinite(flow_field)):
        raise ValueError("flow field must be finite")
    ny, nx = frame.shape
    yy, xx = np.mgrid[0:ny, 0:nx].astype(float)
    coords = np.stack([yy + flow_field[1], xx + flow_field[0]])
    return ndimage.map_coordinates(frame, coords, order=1, mode="nearest")


def restrict(frame: np.ndarray, factor: int = 2) -> np.ndarray:
    """Halve resolution by 2x2 block averaging (replicate-pad odd sizes)."""
    if factor != 2:
        raise ValueError("only factor 2 is supported")
    frame = np.asarray(frame, dtype=float)
    ny, nx = frame.shape[-2:]
    pad = [(0, 0)] * (frame.ndim - 2) + [(0, ny % 2), (0, nx % 2)]
    if ny % 2 or nx % 2:
        frame = np.pad(frame, pad, mode="edge")
        ny, nx = frame.shape[-2:]
    shaped = frame.reshape(frame.shape[:-2] + (ny // 2, 2, nx // 2, 2))
    return shaped.mean(axis=(-3, -1))


def prolong(frame: np.ndarray, factor: int = 2,
            out_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Double resolution by bilinear upsampling.

    Coarse samples are treated as cell centers: fine pixel k maps to coarse
    coordinate (k - 0.5) / 2. ``out_shape`` overrides the default doubling
    (needed to invert a replicate-padded restriction of odd-sized frames).
    """
    if factor != 2:
        raise ValueError("only factor 2 is supported")
    frame = np.asarray(frame, dtype=float)
    ny, nx = frame.shape
    oy, ox = out_shape if out_shape is not None else (2 * ny, 2 * nx)
    rows = (np.arange(oy) - 0.5) / 2.0
    cols = (np.arange(ox) - 0.5) / 2.0
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(frame, [rr, cc], order=1, mode="nearest")


def restrict_flow(flow: np.ndarray) -> np.ndarray:
    """Restrict each flow component and halve displacements."""
    return 0.5 * restrict(flow)


def prolong_flow(flow: np.ndarray,
                 out_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Prolong each flow component and double displacements."""
    flow = np.asarray(flow, dtype=float)
    lead = flow.shape[:-2]
    flat = flow.reshape((-1,) + flow.shape[-2:])
    up = np.stack([prolong(f, out_shape=out_shape) for f in flat])
    return 2.0 * up.reshape(lead + up.shape[-2:])
