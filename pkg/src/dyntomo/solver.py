"""Alternating primal-dual minimization for joint image + motion recovery.

The target functional couples a per-step projection data term (L1 or
squared L2), isotropic TV of every frame, an L1 motion-linearized transport
penalty between consecutive frames, and isotropic TV of both flow
components. It is minimized by alternating two convex subproblems:

* image step: data + TV + transport with the flow frozen,
* flow step: transport + flow TV with the images frozen,

each solved by a first-order primal-dual (saddle point) scheme with
over-relaxation on the primal iterate. Dual variables live on balls whose
radii carry the regularization weights; all projections are exact.

Inner solvers track the best-energy iterate seen (the warm start and, for
the flow step, the zero flow are included as candidates), so an inner solve
never returns a point worse than its start and the outer loop is
energy-monotone by construction.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import MutableMapping

import numpy as np

from . import diffops
from .radon import (BlockDiagonalOperator, LinearMap, SinogramStack,
                    operator_norm_estimate)

# Stepsizes divide by an inflated norm estimate so a small power-iteration
# underestimate cannot push sigma*tau*|K|^2 past 1.
_NORM_MARGIN = 1.01
_POWER_TOL = 1e-5
_ENERGY_EVERY = 10


class SolverAbort(RuntimeError):
    """Inner iteration produced non-finite values (stepsize violation)."""


@dataclass
class SolverParams:
    """Weights, exponent and budgets for the joint solver."""

    p: int = 1
    alpha: float = 0.1
    beta: float = 0.2
    gamma: float = 0.5
    inner_max_iters: int = 5000
    inner_tol: float = 1e-6
    outer_max_iters: int = 20
    outer_tol: float = 1e-4
    pyramid_levels: int = 1
    pyramid_scale: int = 2
    step_rule: float = 0.99
    clamp_nonnegative: bool = False

    def validate(self) -> None:
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be > 0")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not (self.inner_tol > 0 and self.outer_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.inner_max_iters < 1 or self.outer_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.pyramid_scale != 2:
            raise ValueError("only pyramid_scale 2 is supported")
        if not 0 < self.step_rule <= 0.999:
            raise ValueError("step_rule must lie in (0, 0.999]")


@dataclass
class DualStateU:
    p1: np.ndarray  # ray-shaped, fidelity dual
    p2: np.ndarray  # per-frame gradient fields, |.|_2 <= alpha pointwise
    p3: np.ndarray  # transport residual shaped, |.|_inf <= gamma


@dataclass
class DualStateV:
    q1: np.ndarray  # residual-shaped, |.|_inf <= 1
    qg: np.ndarray  # gradients of both flow components, |.|_2 <= beta/gamma


@dataclass
class JointResult:
    u: np.ndarray
    v: np.ndarray
    energy_trace: list[float]
    outer_residual_trace: list[float]
    wall_seconds: list[float]
    converged: bool


def project_linf(x: np.ndarray, radius: float) -> np.ndarray:
    """Clamp every entry to [-radius, radius]."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    return np.clip(x, -radius, radius)


def project_l2inf(field: np.ndarray, radius: float) -> np.ndarray:
    """Shrink each pixel's 2-vector (axis -3) onto the ball of ``radius``."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    field = np.asarray(field, dtype=float)
    if radius == 0:
        return np.zeros_like(field)
    norms = np.sqrt(np.sum(field * field, axis=-3, keepdims=True))
    return field / np.maximum(1.0, norms / radius)


def _tick(counters: MutableMapping[str, int] | None, key: str) -> None:
    if counters is not None:
        counters[key] = counters.get(key, 0) + 1


def _l2(x: np.ndarray) -> float:
    return float(np.sqrt(np.sum(x * x)))


def fidelity_energy(residual: np.ndarray, p: int) -> float:
    if p == 1:
        return float(np.sum(np.abs(residual)))
    return 0.5 * float(np.sum(residual * residual))


def u_subproblem_energy(op: BlockDiagonalOperator, f: np.ndarray,
                        u: np.ndarray, v: np.ndarray,
                        params: SolverParams) -> float:
    """Data + image TV + weighted transport penalty at fixed flow."""
    e = fidelity_energy(op.apply(u) - f, params.p)
    e += params.alpha * diffops.tv_norm(diffops.gradient(u))
    if u.shape[0] > 1 and params.gamma > 0:
        e += params.gamma * float(np.sum(np.abs(diffops.transport_apply(u, v))))
    return e


def flow_subproblem_energy(grads: np.ndarray, b: np.ndarray, v: np.ndarray,
                           tv_weight: float) -> float:
    resid = np.sum(grads * v, axis=1) - b
    return float(np.sum(np.abs(resid))) + tv_weight * diffops.tv_norm(
        diffops.gradient(v))


def joint_energy(op: BlockDiagonalOperator, f: np.ndarray, u: np.ndarray,
                 v: np.ndarray, params: SolverParams) -> float:
    """The full time-discrete objective at (u, v)."""
    e = fidelity_energy(op.apply(u) - f, params.p)
    e += params.alpha * diffops.tv_norm(diffops.gradient(u))
    if u.shape[0] > 1:
        e += params.gamma * float(np.sum(np.abs(diffops.transport_apply(u, v))))
        e += params.beta * diffops.tv_norm(diffops.gradient(v))
    return e


def _zero_flow(u_shape: tuple[int, int, int]) -> np.ndarray:
    n_t, ny, nx = u_shape
    return np.zeros((max(n_t - 1, 0), 2, ny, nx))


def solve_u(op: BlockDiagonalOperator, m: SinogramStack | np.ndarray,
            v_fixed: np.ndarray, params: SolverParams,
            warm_start: np.ndarray | None = None,
            dual_warm: DualStateU | None = None,
            counters: MutableMapping[str, int] | None = None,
            return_state: bool = False):
    """Image subproblem at fixed flow, solved by the primal-dual scheme.

    Returns the best-energy iterate; with ``return_state`` also the final
    dual variables for warm-starting a later call.
    """
    params.validate()
    f = m.concat() if isinstance(m, SinogramStack) else np.ravel(m)
    if f.shape != (op.total_rows,):
        raise ValueError(
            f"data length {f.size} does not match operator rows "
            f"{op.total_rows}")
    n_t, n = op.n_t, op.n
    v = np.asarray(v_fixed, dtype=float)
    if v.shape != (n_t - 1, 2, n, n):
        raise ValueError(
            f"flow shape {v.shape} does not match {(n_t - 1, 2, n, n)}")
    has_transport = n_t > 1

    maps = [LinearMap(apply=diffops.gradient,
                      apply_adjoint=diffops.gradient_transpose)]
    if has_transport:
        maps.append(LinearMap(
            apply=lambda x: diffops.transport_apply(x, v),
            apply_adjoint=lambda r: diffops.transport_adjoint(v, r)))
    norm = operator_norm_estimate(op, maps, tol=_POWER_TOL)
    sigma = tau = params.step_rule / (_NORM_MARGIN * max(norm, 1e-12))
    assert sigma * tau * norm * norm <= 1.0

    u = np.zeros(op.domain_shape) if warm_start is None \
        else np.array(warm_start, dtype=float)
    ubar = u.copy()
    if dual_warm is None:
        p1 = np.zeros(op.total_rows)
        p2 = np.zeros((n_t, 2, n, n))
        p3 = np.zeros((max(n_t - 1, 0), n, n))
    else:
        p1 = dual_warm.p1.copy()
        p2 = dual_warm.p2.copy()
        p3 = dual_warm.p3.copy()

    energy = lambda x: u_subproblem_energy(op, f, x, v, params)
    best_e = prev_e = energy(u)
    best_u = u.copy()

    for k in range(1, params.inner_max_iters + 1):
        r1 = p1 + sigma * (op.apply(ubar) - f)
        if params.p == 1:
            p1 = project_linf(r1, 1.0)
            _tick(counters, "p1_linf_projection")
        else:
            p1 = r1 / (1.0 + sigma)
            _tick(counters, "p1_quadratic_resolvent")
        p2 = project_l2inf(p2 + sigma * diffops.gradient(ubar), params.alpha)
        _tick(counters, "p2_l2inf_projection")
        step = op.apply_adjoint(p1) + diffops.gradient_transpose(p2)
        if has_transport:
            p3 = project_linf(p3 + sigma * diffops.transport_apply(ubar, v),
                              params.gamma)
            _tick(counters, "p3_linf_projection")
            step += diffops.transport_adjoint(v, p3)
        u_new = u - tau * step
        _tick(counters, "primal_descent")
        ubar = 2.0 * u_new - u
        u = u_new
        _tick(counters, "overrelaxation")

        if k % _ENERGY_EVERY == 0 or k == params.inner_max_iters:
            if not np.all(np.isfinite(u)):
                raise SolverAbort(
                    f"image iterate became non-finite at inner iteration {k} "
                    f"(stepsize violation; norm estimate {norm:.3e})")
            e = energy(u)
            if e < best_e:
                best_e = e
                best_u = u.copy()
            if abs(e - prev_e) <= params.inner_tol * max(abs(e), 1e-30):
                break
            prev_e = e

    if return_state:
        return best_u, DualStateU(p1=p1, p2=p2, p3=p3)
    return best_u


def solve_v(u_fixed: np.ndarray, params: SolverParams,
            warm_start: np.ndarray | None = None,
            dual_warm: DualStateV | None = None,
            counters: MutableMapping[str, int] | None = None,
            return_state: bool = False):
    """Flow subproblem at fixed images (data term linearized at zero flow)."""
    u = np.asarray(u_fixed, dtype=float)
    grads = diffops.gradient(u[:-1])
    b = diffops.flow_rhs(u)
    return _solve_flow(grads, b, params, warm_start=warm_start,
                       dual_warm=dual_warm, counters=counters,
                       return_state=return_state)


def _solve_flow(grads: np.ndarray, b: np.ndarray, params: SolverParams,
                warm_start: np.ndarray | None = None,
                dual_warm: DualStateV | None = None,
                counters: MutableMapping[str, int] | None = None,
                return_state: bool = False):
    """Primal-dual iteration for one linearized TV-L1 flow problem."""
    params.validate()
    if params.gamma <= 0:
        raise ValueError("flow estimation needs gamma > 0")
    n_flow = grads.shape[0]
    flow_shape = (n_flow, 2) + grads.shape[-2:]
    if n_flow == 0:
        empty = np.zeros(flow_shape)
        if return_state:
            return empty, DualStateV(q1=np.zeros((0,) + grads.shape[-2:]),
                                     qg=np.zeros((0, 2, 2) + grads.shape[-2:]))
        return empty

    tv_weight = params.beta / params.gamma
    data_map = LinearMap(
        apply=lambda w: np.sum(grads * w, axis=1),
        apply_adjoint=lambda r: grads * r[:, None],
        domain_shape=flow_shape)
    grad_map = LinearMap(apply=diffops.gradient,
                         apply_adjoint=diffops.gradient_transpose)
    norm = operator_norm_estimate(data_map, [grad_map], tol=_POWER_TOL)
    sigma = tau = params.step_rule / (_NORM_MARGIN * max(norm, 1e-12))
    assert sigma * tau * norm * norm <= 1.0

    v = np.zeros(flow_shape) if warm_start is None \
        else np.array(warm_start, dtype=float)
    vbar = v.copy()
    if dual_warm is None:
        q1 = np.zeros_like(b)
        qg = np.zeros((n_flow, 2, 2) + grads.shape[-2:])
    else:
        q1 = dual_warm.q1.copy()
        qg = dual_warm.qg.copy()

    energy = lambda w: flow_subproblem_energy(grads, b, w, tv_weight)
    # Zero flow is always feasible; never return anything worse.
    zero_e = float(np.sum(np.abs(b)))
    best_e = prev_e = energy(v)
    best_v = v.copy()
    if zero_e < best_e:
        best_e = zero_e
        best_v = np.zeros(flow_shape)

    for k in range(1, params.inner_max_iters + 1):
        q1 = project_linf(q1 + sigma * (np.sum(grads * vbar, axis=1) - b), 1.0)
        _tick(counters, "q1_linf_projection")
        qg = project_l2inf(qg + sigma * diffops.gradient(vbar), tv_weight)
        _tick(counters, "qg_l2inf_projection")
        v_new = v - tau * (grads * q1[:, None]
                           + diffops.gradient_transpose(qg))
        _tick(counters, "primal_descent")
        vbar = 2.0 * v_new - v
        v = v_new
        _tick(counters, "overrelaxation")

        if k % _ENERGY_EVERY == 0 or k == params.inner_max_iters:
            if not np.all(np.isfinite(v)):
                raise SolverAbort(
                    f"flow iterate became non-finite at inner iteration {k} "
                    f"(stepsize violation; norm estimate {norm:.3e})")
            e = energy(v)
            if e < best_e:
                best_e = e
                best_v = v.copy()
            if abs(e - prev_e) <= params.inner_tol * max(abs(e), 1e-30):
                break
            prev_e = e

    if return_state:
        return best_v, DualStateV(q1=q1, qg=qg)
    return best_v


def joint_solve(op: BlockDiagonalOperator, m: SinogramStack,
                params: SolverParams, initial_u: np.ndarray | None = None,
                initial_v: np.ndarray | None = None) -> JointResult:
    """Alternate image and flow solves until the combined update stalls.

    Stops when ``|u - u_old| + |v - v_old|`` (flat 2-norms) drops below
    ``outer_tol`` relative to ``|u| + |v|``, or at ``outer_max_iters``
    (flagged via ``converged``). Inner solves are warm-started with the
    previous primal and dual iterates.
    """
    params.validate()
    f = m.concat()
    u = np.zeros(op.domain_shape) if initial_u is None \
        else np.array(initial_u, dtype=float)
    v = _zero_flow(op.domain_shape) if initial_v is None \
        else np.array(initial_v, dtype=float)
    has_flow = op.n_t > 1
    if has_flow and params.gamma <= 0:
        raise ValueError("joint model needs gamma > 0 for multi-step data")

    state_u: DualStateU | None = None
    state_v: DualStateV | None = None
    energies: list[float] = []
    residuals: list[float] = []
    walls: list[float] = []
    converged = False
    start = time.perf_counter()

    for _ in range(params.outer_max_iters):
        u_old, v_old = u, v
        u, state_u = solve_u(op, f, v, params, warm_start=u,
                             dual_warm=state_u, return_state=True)
        if has_flow:
            v, state_v = solve_v(u, params, warm_start=v,
                                 dual_warm=state_v, return_state=True)
        r_main = _l2(u - u_old) + _l2(v - v_old)
        energies.append(joint_energy(op, f, u, v, params))
        residuals.append(r_main)
        walls.append(time.perf_counter() - start)
        if r_main <= params.outer_tol * (_l2(u) + _l2(v)):
            converged = True
            break

    if params.clamp_nonnegative:
        u = np.maximum(u, 0.0)
    return JointResult(u=u, v=v, energy_trace=energies,
                       outer_residual_trace=residuals, wall_seconds=walls,
                       converged=converged)


def solve_v_pyramid(u_fixed: np.ndarray, params: SolverParams,
                    v_init: np.ndarray | None = None) -> np.ndarray:
    """Coarse-to-fine flow estimation with warping between levels.

    Each level linearizes the transport constraint around the current flow
    by warping the later frame, solves for the full flow at that level, then
    prolongs (displacements doubled) to the next finer level. Only the flow
    problem is multiscale; callers keep the projection data term at full
    resolution.
    """
    u = np.asarray(u_fixed, dtype=float)
    if v_init is None:
        v_init = _zero_flow(u.shape)
    if u.shape[0] < 2:
        return _zero_flow(u.shape)

    levels = [u]
    for _ in range(params.pyramid_levels - 1):
        levels.append(diffops.restrict(levels[-1]))

    v = np.array(v_init, dtype=float)
    for _ in range(params.pyramid_levels - 1):
        v = diffops.restrict_flow(v)

    for depth, ul in enumerate(reversed(levels)):
        if depth > 0:
            v = diffops.prolong_flow(v, out_shape=ul.shape[-2:])
        warped = np.stack([diffops.warp(ul[i + 1], v[i])
                           for i in range(ul.shape[0] - 1)])
        grads = diffops.gradient(ul[:-1])
        rhs = (ul[:-1] - warped) + np.sum(grads * v, axis=1)
        v = _solve_flow(grads, rhs, params, warm_start=v)
    return v


def joint_solve_pyramid(op: BlockDiagonalOperator, m: SinogramStack,
                        params: SolverParams,
                        initial_u: np.ndarray | None = None,
                        initial_v: np.ndarray | None = None) -> JointResult:
    """Joint solve whose flow step runs the coarse-to-fine estimator."""
    params.validate()
    if params.pyramid_levels == 1:
        return joint_solve(op, m, params, initial_u, initial_v)

    f = m.concat()
    u = np.zeros(op.domain_shape) if initial_u is None \
        else np.array(initial_u, dtype=float)
    v = _zero_flow(op.domain_shape) if initial_v is None \
        else np.array(initial_v, dtype=float)
    has_flow = op.n_t > 1
    if has_flow and params.gamma <= 0:
        raise ValueError("joint model needs gamma > 0 for multi-step data")

    state_u: DualStateU | None = None
    energies: list[float] = []
    residuals: list[float] = []
    walls: list[float] = []
    converged = False
    start = time.perf_counter()

    for _ in range(params.outer_max_iters):
        u_old, v_old = u, v
        u, state_u = solve_u(op, f, v, params, warm_start=u,
                             dual_warm=state_u, return_state=True)
        if has_flow:
            v = solve_v_pyramid(u, params, v_init=v)
        r_main = _l2(u - u_old) + _l2(v - v_old)
        energies.append(joint_energy(op, f, u, v, params))
        residuals.append(r_main)
        walls.append(time.perf_counter() - start)
        if r_main <= params.outer_tol * (_l2(u) + _l2(v)):
            converged = True
            break

    if params.clamp_nonnegative:
        u = np.maximum(u, 0.0)
    return JointResult(u=u, v=v, energy_trace=energies,
                       outer_residual_trace=residuals, wall_seconds=walls,
                       converged=converged)
