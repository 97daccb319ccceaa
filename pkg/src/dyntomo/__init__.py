"""Joint image and motion reconstruction for undersampled dynamic tomography."""

from .radon import (BlockDiagonalOperator, DetectorSpec, GridSpec, LinearMap,
                    NormEstimateError, RadonBlock, SinogramStack, adjoint,
                    build_operator, build_radon_block, default_detector,
                    forward, operator_norm_estimate)
from .protocols import (AngleSchedule, make_schedule, schedule_randomized,
                        schedule_small_increments, schedule_tracking)
from .phantom import PhantomSpec, ground_truth, render_pinball, simulate_sinogram
from .metrics import (MetricReport, evaluate_sequences, relative_error,
                      ssim_frame, ssim_sequence)
from .solver import (DualStateU, DualStateV, JointResult, SolverAbort,
                     SolverParams, joint_solve, joint_solve_pyramid,
                     project_l2inf, project_linf, solve_u, solve_v,
                     solve_v_pyramid)

__all__ = [
    "AngleSchedule", "BlockDiagonalOperator", "DetectorSpec", "DualStateU",
    "DualStateV", "GridSpec", "JointResult", "LinearMap", "MetricReport",
    "NormEstimateError", "PhantomSpec", "RadonBlock", "SinogramStack",
    "SolverAbort", "SolverParams", "adjoint", "build_operator",
    "build_radon_block", "default_detector", "evaluate_sequences", "forward",
    "ground_truth", "joint_solve", "joint_solve_pyramid", "make_schedule",
    "operator_norm_estimate", "project_l2inf", "project_linf",
    "relative_error", "render_pinball", "schedule_randomized",
    "schedule_small_increments", "schedule_tracking", "simulate_sinogram",
    "solve_u", "solve_v", "solve_v_pyramid", "ssim_frame", "ssim_sequence",
]
