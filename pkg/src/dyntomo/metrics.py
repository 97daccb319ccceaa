"""Reconstruction quality measures: relative errors and sequence SSIM.

SSIM here uses whole-frame statistics (no sliding window) with population
(1/N) normalization for variances and covariance; the sequence score is the
arithmetic mean over frames. The stabilizing constants default to
``(0.01 L)^2`` and ``(0.03 L)^2`` with ``L`` the dynamic range of the
reference sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricReport:
    rel_l1: float
    rel_l2: float
    ssim: float
    per_frame_ssim: list[float] = field(default_factory=list)


def relative_error(recon: np.ndarray, truth: np.ndarray, exponent: int) -> float:
    """``norm(recon - truth) / norm(truth)`` over the whole space-time stack."""
    recon = np.asarray(recon, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if recon.shape != truth.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {truth.shape}")
    if exponent == 1:
        denom = float(np.sum(np.abs(truth)))
        num = float(np.sum(np.abs(recon - truth)))
    elif exponent == 2:
        denom = float(np.sqrt(np.sum(truth * truth)))
        diff = recon - truth
        num = float(np.sqrt(np.sum(diff * diff)))
    else:
        raise ValueError(f"exponent must be 1 or 2, got {exponent}")
    if denom == 0.0:
        raise ValueError("reference sequence has zero norm")
    return num / denom


def ssim_frame(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    """Whole-frame structural similarity of two images."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mu1 = float(a.mean())
    mu2 = float(b.mean())
    var1 = float(np.mean((a - mu1) ** 2))
    var2 = float(np.mean((b - mu2) ** 2))
    cov = float(np.mean((a - mu1) * (b - mu2)))
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2)
    return num / den


def default_ssim_constants(truth: np.ndarray) -> tuple[float, float]:
    """Conventional constants from the dynamic range of the reference."""
    truth = np.asarray(truth, dtype=float)
    dynamic_range = float(truth.max() - truth.min())
    if dynamic_range == 0.0:
        dynamic_range = 1.0
    return (0.01 * dynamic_range) ** 2, (0.03 * dynamic_range) ** 2


def ssim_sequence(recon: np.ndarray, truth: np.ndarray,
                  c1: float | None = None, c2: float | None = None) -> float:
    """Mean per-frame SSIM over the sequence."""
    return float(np.mean(per_frame_ssim(recon, truth, c1, c2)))


def per_frame_ssim(recon: np.ndarray, truth: np.ndarray,
                   c1: float | None = None,
                   c2: float | None = None) -> list[float]:
    recon = np.asarray(recon, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if recon.shape != truth.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {truth.shape}")
    if c1 is None or c2 is None:
        d1, d2 = default_ssim_constants(truth)
        c1 = d1 if c1 is None else c1
        c2 = d2 if c2 is None else c2
    return [ssim_frame(r, t, c1, c2) for r, t in zip(recon, truth)]


def evaluate_sequences(recon: np.ndarray, truth: np.ndarray,
                       c1: float | None = None,
                       c2: float | None = None) -> MetricReport:
    """Bundle the three headline numbers plus the per-frame SSIM list."""
    frames = per_frame_ssim(recon, truth, c1, c2)
    return MetricReport(rel_l1=relative_error(recon, truth, 1),
                        rel_l2=relative_error(recon, truth, 2),
                        ssim=float(np.mean(frames)),
                        per_frame_ssim=frames)
