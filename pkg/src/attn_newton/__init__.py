"""Approximate Newton training for single-layer softmax attention regression.

The loss is ``0.5 ||softmax_rows(A1 X A2^T) A3 Y - B||_F^2`` over ``d x d``
matrices ``X`` and ``Y``.  The package provides the forward pass, closed-form
gradients and Hessian blocks, Kronecker-structured sketches of the penalty
Gram, the Newton loop and a command line front end.
"""

from .forward import ForwardCache, ParamState, ProblemInstance, alpha_diagnostics, forward, loss, loss_reg, regularizer
from .gradients import GradientPair, grad_fast, grad_naive_x, grad_reg, grad_total
from .hessian import (
    HessianBundle,
    assemble_regularized,
    exact_hessian,
    hess_xx_block_fast,
    hess_xx_entry,
    hess_xy,
    hess_xy_block,
    hess_yy,
    psd_report,
    psd_weight_threshold,
)
from .kron import KronBlockOperator, kron_block_apply, kron_block_apply_transpose, mat_rowmajor, materialize_kron, vec_rowmajor
from .sketch import SketchConfig, SketchedFactor, fwht, ose_quality, sketched_gram, tensor_sparse_apply, tensor_srht_apply
from .solver import IterationTrace, SolverConfig, build_approx_hessian, good_check, newton_step, train

__version__ = "0.1.0"

__all__ = [
    "ForwardCache",
    "GradientPair",
    "HessianBundle",
    "IterationTrace",
    "KronBlockOperator",
    "ParamState",
    "ProblemInstance",
    "SketchConfig",
    "SketchedFactor",
    "SolverConfig",
    "alpha_diagnostics",
    "assemble_regularized",
    "build_approx_hessian",
    "exact_hessian",
    "forward",
    "fwht",
    "good_check",
    "grad_fast",
    "grad_naive_x",
    "grad_reg",
    "grad_total",
    "hess_xx_block_fast",
    "hess_xx_entry",
    "hess_xy",
    "hess_xy_block",
    "hess_yy",
    "kron_block_apply",
    "kron_block_apply_transpose",
    "loss",
    "loss_reg",
    "mat_rowmajor",
    "materialize_kron",
    "newton_step",
    "ose_quality",
    "psd_report",
    "psd_weight_threshold",
    "regularizer",
    "sketched_gram",
    "tensor_sparse_apply",
    "tensor_srht_apply",
    "train",
    "vec_rowmajor",
]
