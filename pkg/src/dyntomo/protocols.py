"""Angle schedules for the four undersampled measurement scenarios.

All schedules are pure functions of their arguments. The randomized schedule
draws from a Philox4x32-10 counter-based generator keyed by the seed, with
doubles built from the top 53 bits and scaled to [0, pi); identical (n_t,
seed) pairs reproduce the same angles bit for bit. Angles are reduced mod pi
(parallel-beam redundancy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROTOCOL_NAMES = ("small_increments", "tracking", "randomized")


@dataclass(frozen=True)
class AngleSchedule:
    """Per-time-step projection angle lists, in radians within [0, pi)."""

    per_step: tuple[np.ndarray, ...]
    label: str
    seed: int | None = None

    @property
    def n_t(self) -> int:
        return len(self.per_step)

    def total_angles(self) -> int:
        return sum(a.size for a in self.per_step)


def schedule_small_increments(n_t: int, increment: float, k: int = 1) -> AngleSchedule:
    """k angles per step with relative offsets pi/k, drifting by ``increment``.

    Step i carries ``{(i * increment + j * pi / k) mod pi : j = 0..k-1}``.
    """
    if n_t < 1:
        raise ValueError(f"n_t must be >= 1, got {n_t}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not increment > 0:
        raise ValueError(f"increment must be > 0, got {increment}")
    per_step = []
    for i in range(n_t):
        angles = (i * increment + np.arange(k) * (np.pi / k)) % np.pi
        per_step.append(angles)
    label = f"small-increments-{k}"
    return AngleSchedule(per_step=tuple(per_step), label=label)


def schedule_tracking(n_t: int, full_count: int, increment: float) -> AngleSchedule:
    """Full equispaced scans at the first and last step, single angles between.

    Steps 0 and n_t-1 carry ``full_count`` angles spaced pi/full_count;
    step i in between carries the single angle ``(i * increment) mod pi``.
    """
    if n_t < 2:
        raise ValueError(f"n_t must be >= 2, got {n_t}")
    if full_count < 1:
        raise ValueError(f"full_count must be >= 1, got {full_count}")
    full = np.arange(full_count) * (np.pi / full_count)
    per_step: list[np.ndarray] = [full]
    for i in range(1, n_t - 1):
        per_step.append(np.array([(i * increment) % np.pi]))
    per_step.append(full.copy())
    return AngleSchedule(per_step=tuple(per_step), label="tracking")


def schedule_randomized(n_t: int, seed: int,
                        quantize: int | None = None) -> AngleSchedule:
    """One angle per step, i.i.d. uniform on [0, pi).

    With ``quantize`` set, angles are instead drawn uniformly from the
    ``quantize`` equispaced positions ``j * pi / quantize`` (for replaying
    schedules against data measured at fixed rotor positions).
    """
    if n_t < 1:
        raise ValueError(f"n_t must be >= 1, got {n_t}")
    rng = np.random.Generator(np.random.Philox(seed))
    if quantize is None:
        angles = rng.uniform(0.0, np.pi, size=n_t)
        # uniform() can in principle return the upper bound; fold it back
        angles = np.where(angles >= np.pi, 0.0, angles)
    else:
        if quantize < 1:
            raise ValueError(f"quantize must be >= 1, got {quantize}")
        angles = rng.integers(0, quantize, size=n_t) * (np.pi / quantize)
    per_step = tuple(np.array([a]) for a in angles)
    return AngleSchedule(per_step=per_step, label="randomized", seed=seed)


def make_schedule(protocol: str, n_t: int, *, increment: float | None = None,
                  k: int = 1, full_count: int = 60, seed: int | None = None,
                  quantize: int | None = None) -> AngleSchedule:
    """Dispatch by protocol name; ``increment`` defaults to pi/n_t.

    The default increment completes a half rotation over the sequence, so a
    drifting single angle sweeps the full parallel-beam range once.
    """
    if increment is None:
        increment = np.pi / n_t
    if protocol == "small_increments":
        return schedule_small_increments(n_t, increment, k)
    if protocol == "tracking":
        return schedule_tracking(n_t, full_count, increment)
    if protocol == "randomized":
        if seed is None:
            raise ValueError("randomized protocol needs a seed")
        return schedule_randomized(n_t, seed, quantize)
    raise ValueError(
        f"unknown protocol {protocol!r}; expected one of {PROTOCOL_NAMES}")
