"""Trainable image denoising around a differentiable graph Laplacian
regularization layer."""

from .autodiff import Tensor
from .graph_layer import (ExemplarPatch, GlrCache, SparseLaplacian8,
                          assemble_laplacian, backward_graph, backward_qp,
                          clamp_mu, compute_edge_weights, regularizer_value,
                          solve_qp, solve_qp_multichannel)
from .model import CascadeConfig, cascade_forward, classic_cascade, loss_mse
from .params import AdamState, ArchitectureConfig, ModelParams, build_params
from .patches import PatchPlan, aggregate_patches, extract_patches, plan_patches

__all__ = [
    "Tensor", "ExemplarPatch", "GlrCache", "SparseLaplacian8",
    "assemble_laplacian", "backward_graph", "backward_qp", "clamp_mu",
    "compute_edge_weights", "regularizer_value", "solve_qp",
    "solve_qp_multichannel", "CascadeConfig", "cascade_forward",
    "classic_cascade", "loss_mse", "AdamState", "ArchitectureConfig",
    "ModelParams", "build_params", "PatchPlan", "aggregate_patches",
    "extract_patches", "plan_patches",
]

__version__ = "0.1.0"
