"""Fusion functions mapping per-view embeddings to one joint embedding."""

import logging
from typing import Dict, List, Literal, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from . import autodiff as ad
from .autodiff import Graph, Node
from .errors import ArityError, ShapeError
from .nn import Activation, MlpSpec, Params, glorot_uniform, init_mlp, mlp_forward
from .tensor import Rng, Tensor

logger = logging.getLogger(__name__)

FusionKind = Literal["SUM", "MAX", "NN", "TF"]

FUSION_PREFIX = "fusion"


class FusionSpec(BaseModel):
    """Fusion function and its hyperparameters."""

    kind: FusionKind = "SUM"
    hidden: List[int] = Field(default_factory=list, description="NN hidden widths")
    activation: Activation = "tanh"
    rank: int = Field(default=16, ge=1, description="TF rank R")

    def nn_spec(self, n_views: int, dim: int, out_dim: int) -> MlpSpec:
        return MlpSpec(
            widths=[n_views * dim, *self.hidden, out_dim],
            activation=self.activation,
            output_activation=self.activation,
        )


def init_fusion(
    spec: FusionSpec, n_views: int, dim: int, rng: Rng, out_dim: Optional[int] = None
) -> Dict[str, Tensor]:
    """
    Initialize the learnable tensors of a fusion function.

    Args:
        spec: Fusion spec
        n_views: Number of fused views
        dim: Per-view embedding dimension
        rng: Random stream
        out_dim: Joint embedding dimension (defaults to ``dim``)

    Returns:
        Named tensors (empty for SUM and MAX)
    """
    out_dim = dim if out_dim is None else out_dim
    if spec.kind == "NN":
        return init_mlp(spec.nn_spec(n_views, dim, out_dim), rng, prefix=FUSION_PREFIX).named()
    if spec.kind == "TF":
        params = {
            f"{FUSION_PREFIX}.factor{v}": glorot_uniform(rng, dim, out_dim, (spec.rank, out_dim, dim))
            for v in range(n_views)
        }
        params[f"{FUSION_PREFIX}.bias"] = np.zeros(out_dim)
        return params
    return {}


def _check_views(spec: FusionSpec, embeddings: Sequence[Node]) -> None:
    if len(embeddings) < 2:
        raise ArityError(f"{spec.kind} fusion needs at least 2 views, got {len(embeddings)}")
    shapes = [e.value.shape for e in embeddings if e.value is not None]
    if len({s[0] for s in shapes}) > 1:
        raise ShapeError(f"Embeddings disagree on batch size: {shapes}")
    if spec.kind in ("SUM", "MAX", "NN") and len({s[1:] for s in shapes}) > 1:
        raise ShapeError(f"{spec.kind} fusion needs equal embedding dims, got {shapes}")


def fuse(
    spec: FusionSpec,
    embeddings: Sequence[Node],
    graph: Graph,
    params: Optional[Mapping[str, Tensor]] = None,
) -> Node:
    """
    Fuse V per-view embeddings (each batch x D) into the joint embedding.

    SUM is the mean over views, MAX the elementwise maximum, NN a learnable map of the
    concatenation, TF the rank-R factorized outer-product layer.

    Args:
        spec: Fusion spec
        embeddings: Per-view embedding nodes
        graph: Graph to record on
        params: Fusion tensors from ``init_fusion`` (NN and TF only)

    Returns:
        Joint embedding node

    Raises:
        ArityError: If fewer than two views are given
        ShapeError: If embedding shapes are incompatible
    """
    _check_views(spec, embeddings)
    n_views = len(embeddings)

    if spec.kind == "SUM":
        total = embeddings[0]
        for embedding in embeddings[1:]:
            total = ad.add(total, embedding)
        return ad.scale(total, 1.0 / n_views)

    if spec.kind == "MAX":
        return ad.max_views(embeddings)

    if params is None:
        raise ValueError(f"{spec.kind} fusion needs its parameters")

    if spec.kind == "NN":
        dim = embeddings[0].value.shape[1]
        out_dim = params[f"{FUSION_PREFIX}.W{len(spec.hidden)}"].shape[1]
        mlp = spec.nn_spec(n_views, dim, out_dim)
        joined = ad.concat(embeddings, axis=1)
        return mlp_forward(Params.from_named(FUSION_PREFIX, params, mlp), mlp, joined, graph)

    factors = []
    for v, embedding in enumerate(embeddings):
        factor = params[f"{FUSION_PREFIX}.factor{v}"]
        if embedding.value is not None and embedding.value.shape[1] != factor.shape[2]:
            raise ShapeError(
                f"View {v} embedding dim {embedding.value.shape[1]} does not match factor {factor.shape}"
            )
        factors.append(graph.parameter(f"{FUSION_PREFIX}.factor{v}", factor))
    bias = graph.parameter(f"{FUSION_PREFIX}.bias", params[f"{FUSION_PREFIX}.bias"])
    return ad.low_rank_outer(embeddings, factors, bias)
