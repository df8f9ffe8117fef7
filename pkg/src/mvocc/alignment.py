"""Alignment measures between per-view embeddings and the alignment-regularized loss."""

import logging
import warnings
from typing import Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from . import autodiff as ad
from .autodiff import Graph, Node
from .errors import ArityError, BatchTooSmallError, ConditioningWarning, ShapeError
from .tensor import Tensor, inv_sqrt_psd, sym_eig

logger = logging.getLogger(__name__)

AlignKind = Literal["DIS", "SIM", "DCCA"]

CONDITION_LIMIT = 1e12
SINGULAR_FLOOR = 1e-12


class AlignSpec(BaseModel):
    """Alignment function and its hyperparameters."""

    kind: AlignKind = "DIS"
    alpha: float = Field(default=0.1, ge=0.0, description="weight of the alignment loss")
    p: Literal[1, 2] = Field(default=2, description="norm order for DIS")
    margin: float = Field(default=1.0, ge=0.0, description="hinge margin m for SIM")
    similarity: Literal["dot", "cosine"] = "dot"
    r: float = Field(default=1e-4, gt=0.0, description="DCCA covariance regularization")


# ============================================================================
# DCCA correlation
# ============================================================================


def _covariances(h1: Tensor, h2: Tensor, r: float) -> Tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
    n = h1.shape[0]
    c1 = h1 - h1.mean(axis=0, keepdims=True)
    c2 = h2 - h2.mean(axis=0, keepdims=True)
    s11 = c1.T @ c1 / (n - 1) + r * np.eye(h1.shape[1])
    s22 = c2.T @ c2 / (n - 1) + r * np.eye(h2.shape[1])
    s12 = c1.T @ c2 / (n - 1)
    return c1, c2, s11, s22, s12


def _condition_notes(s11: Tensor, s22: Tensor) -> list:
    notes = []
    for label, sigma in (("first", s11), ("second", s22)):
        eigenvalues = np.linalg.eigvalsh(sigma)
        if eigenvalues[0] <= 0 or eigenvalues[-1] / eigenvalues[0] > CONDITION_LIMIT:
            notes.append(
                f"{label} view covariance is near-singular "
                f"(eigenvalues {eigenvalues[0]:.2e}..{eigenvalues[-1]:.2e})"
            )
    return notes


def _correlation_system(h1: Tensor, h2: Tensor, r: float) -> dict:
    """Forward quantities of the correlation of two embedding matrices."""
    if h1.shape[0] != h2.shape[0]:
        raise ShapeError(f"Embedding batches differ: {h1.shape} vs {h2.shape}")
    if h1.shape[0] < 2:
        raise BatchTooSmallError(f"DCCA needs at least 2 rows, got {h1.shape[0]}")
    c1, c2, s11, s22, s12 = _covariances(h1, h2, r)
    root11 = inv_sqrt_psd(s11, SINGULAR_FLOOR)
    root22 = inv_sqrt_psd(s22, SINGULAR_FLOOR)
    t = root11 @ s12 @ root22
    eigenvalues, u = sym_eig(t @ t.T)
    singular = np.sqrt(np.maximum(eigenvalues, 0.0))
    return {
        "c1": c1,
        "c2": c2,
        "s11": s11,
        "s22": s22,
        "root11": root11,
        "root22": root22,
        "t": t,
        "u": u,
        "singular": singular,
        "corr": float(np.sum(singular)),
    }


def correlation(h1: Tensor, h2: Tensor, r: float) -> float:
    """Trace norm of the whitened cross-covariance of two embedding matrices (rows = data)."""
    return _correlation_system(h1, h2, r)["corr"]


def _correlation_gradients(system: dict) -> Tuple[Tensor, Tensor]:
    """Analytic gradient of the trace norm with respect to both embedding matrices."""
    n = system["c1"].shape[0]
    singular, u, t = system["singular"], system["u"], system["t"]
    keep = singular > SINGULAR_FLOOR * max(1.0, float(singular.max(initial=0.0)))
    u_k, s_k = u[:, keep], singular[keep]

    # U V^T, U D U^T and V D V^T from the eigen-system of T T^T
    polar = (u_k / s_k) @ u_k.T @ t
    left = (u_k * s_k) @ u_k.T
    right = t.T @ (u_k / s_k) @ u_k.T @ t

    root11, root22 = system["root11"], system["root22"]
    grad12 = root11 @ polar @ root22
    grad11 = -0.5 * root11 @ left @ root11
    grad22 = -0.5 * root22 @ right @ root22

    c1, c2 = system["c1"], system["c2"]
    d_h1 = (2.0 * c1 @ grad11 + c2 @ grad12.T) / (n - 1)
    d_h2 = (2.0 * c2 @ grad22 + c1 @ grad12) / (n - 1)
    return d_h1, d_h2


def dcca_correlation(h1: Node, h2: Node, r: float) -> Node:
    """
    Custom graph node for the DCCA correlation Corr(i, j).

    The backward rule is the closed-form gradient of the trace norm, so the Jacobi
    iterations are never differentiated.
    """
    graph = h1.graph
    cache = {}

    def compute(values):
        system = _correlation_system(values[0], values[1], r)
        cache["system"] = system
        cache["key"] = (id(values[0]), id(values[1]))
        return np.asarray(system["corr"])

    def vjp(g, values, out):
        system = cache.get("system")
        if system is None or cache.get("key") != (id(values[0]), id(values[1])):
            system = _correlation_system(values[0], values[1], r)
        d_h1, d_h2 = _correlation_gradients(system)
        scalar = float(g)
        return (scalar * d_h1, scalar * d_h2)

    node = graph.apply("dcca_corr", [h1, h2], compute, vjp)
    if "system" in cache:
        node.diagnostics.extend(_condition_notes(cache["system"]["s11"], cache["system"]["s22"]))
    return node


# ============================================================================
# Measures
# ============================================================================


def _pair_indices(n_views: int):
    return [(i, j) for i in range(n_views - 1) for j in range(i + 1, n_views)]


def _similarity_matrix(spec: AlignSpec, h_i: Node, h_j: Node) -> Node:
    if spec.similarity == "cosine":
        h_i, h_j = ad.normalize_rows(h_i), ad.normalize_rows(h_j)
    return ad.matmul(h_i, ad.transpose(h_j))


def _hinge_similarity(spec: AlignSpec, h_i: Node, h_j: Node, graph: Graph) -> Node:
    """Sim(i, j) = sum over ordered pairs a != b of max(0, m - s(a, a) + s(a, b))."""
    n = h_i.value.shape[0]
    similarity = _similarity_matrix(spec, h_i, h_j)
    matched = ad.reduce_sum(ad.mul(similarity, graph.constant(np.eye(n))), axis=1, keepdims=True)
    margins = ad.add(ad.sub(similarity, matched), graph.constant(spec.margin))
    off_diagonal = graph.constant(1.0 - np.eye(n))
    return ad.reduce_sum(ad.mul(ad.relu(margins), off_diagonal))


def alignment_measure(
    spec: AlignSpec, embeddings: Sequence[Node], graph: Graph, warn: bool = True
) -> Node:
    """
    Scalar alignment measure A over a batch of per-view embeddings (each N x D).

    Conditioning notes of DCCA covariances land in the node's ``diagnostics``; with ``warn``
    they are also raised as ConditioningWarning. Training loops pass ``warn=False`` and
    report the notes once per run.

    DIS: -sum_n sum_{i<j} ||h_n^i - h_n^j||_p^p.
    SIM: -sum_{i<j} Sim(i, j), the negated batch-local hinge similarity loss.
    DCCA: sum_{i<j} Corr(i, j).

    Raises:
        ArityError: If fewer than two views are given
        ShapeError: If batches or dims disagree
        BatchTooSmallError: If SIM or DCCA gets fewer than 2 rows
    """
    if len(embeddings) < 2:
        raise ArityError(f"Alignment needs at least 2 views, got {len(embeddings)}")
    shapes = [e.value.shape for e in embeddings]
    if len({s[0] for s in shapes}) > 1:
        raise ShapeError(f"Embedding batches differ: {shapes}")
    n = shapes[0][0]
    if spec.kind in ("SIM", "DCCA") and n < 2:
        raise BatchTooSmallError(f"{spec.kind} alignment needs a batch of at least 2, got {n}")
    if spec.kind in ("DIS", "SIM") and len(set(shapes)) > 1:
        raise ShapeError(f"{spec.kind} alignment needs equal embedding dims, got {shapes}")
    if spec.kind == "DCCA" and n < max(s[1] for s in shapes) + 1:
        logger.debug(f"DCCA batch of {n} rows is smaller than embedding dim + 1")

    terms = []
    for i, j in _pair_indices(len(embeddings)):
        h_i, h_j = embeddings[i], embeddings[j]
        if spec.kind == "DIS":
            diff = ad.sub(h_i, h_j)
            term = ad.sum_of_squares(diff) if spec.p == 2 else ad.reduce_sum(ad.absolute(diff))
        elif spec.kind == "SIM":
            term = _hinge_similarity(spec, h_i, h_j, graph)
        else:
            term = dcca_correlation(h_i, h_j, spec.r)
        terms.append(term)

    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    if spec.kind in ("DIS", "SIM"):
        total = ad.scale(total, -1.0)
    notes = [note for term in terms for note in term.diagnostics]
    total.diagnostics[:] = notes
    if warn:
        for note in notes:
            logger.warning(f"DCCA: {note}")
            warnings.warn(note, ConditioningWarning, stacklevel=2)
    return total


def combined_loss(spec: AlignSpec, reconstruction: Node, measure: Node, graph: Graph) -> Node:
    """L = L_r + alpha * (-A)."""
    if reconstruction.value is not None and reconstruction.value.size != 1:
        raise ShapeError(f"Reconstruction loss must be scalar, got {reconstruction.value.shape}")
    if measure.value is not None and measure.value.size != 1:
        raise ShapeError(f"Alignment measure must be scalar, got {measure.value.shape}")
    loss = ad.add(reconstruction, ad.scale(measure, -spec.alpha))
    loss.diagnostics.extend(measure.diagnostics)
    return loss
