"""Trainers and scorers for the eleven multi-view one-class baselines.

Fusion (SUM, MAX, NN, TF) and alignment (DIS, SIM, DCCA) autoencoders, per-view DAE and
simplified DSVDD (DSV), and the cross-view prediction pretext tasks PPRD and SPRD.
All scores are anomaly scores: higher means more anomalous.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from . import autodiff as ad
from .alignment import AlignSpec, alignment_measure, combined_loss
from .autodiff import Graph, Node, backward
from .data import NormStats
from .errors import (
    ConditioningWarning,
    ConfigError,
    DataError,
    DivergenceError,
    NumericalError,
    ShapeError,
)
from .fusion import FusionSpec, fuse, init_fusion
from .nn import MlpSpec, OptState, Params, adam_step, init_mlp, mlp_forward
from .tensor import Rng, Tensor, as_tensor

logger = logging.getLogger(__name__)

MethodId = Literal["SUM", "MAX", "NN", "TF", "DIS", "SIM", "DCCA", "DAE", "DSV", "PPRD", "SPRD"]
METHOD_IDS = ("SUM", "MAX", "NN", "TF", "DIS", "SIM", "DCCA", "DAE", "DSV", "PPRD", "SPRD")
FUSION_METHODS = ("SUM", "MAX", "NN", "TF")
ALIGNMENT_METHODS = ("DIS", "SIM", "DCCA")
PER_VIEW_METHODS = ("DAE", "DSV")
PREDICTION_METHODS = ("PPRD", "SPRD")
# Parameter-free fusions, usable on any subset of views
PREDICTION_FUSIONS = ("SUM", "MAX")

CENTER_EPS = 0.1

LossFn = Callable[[Dict[str, Tensor], List[Tensor], Graph], Node]


class OptimizerSettings(BaseModel):
    """Adam and loop settings."""

    lr: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=1e-4, ge=0.0, description="L2 weight lambda")
    epochs: int = Field(default=200, ge=1)
    batch_size: int = Field(default=128, ge=1, description="training batch size N")
    pretrain_epochs: int = Field(default=50, ge=0, description="DSV autoencoder pretraining")


class MethodConfig(BaseModel):
    """
    Full description of one baseline.

    PPRD fuses only with the parameter-free SUM or MAX. Its input view set changes from
    round to round, so NN and TF, whose parameters are shaped by the number of fused views,
    are rejected rather than given a parameter set per round.
    """

    method: MethodId
    embedding_dim: int = Field(default=32, ge=1, description="shared embedding dimension D")
    encoders: Optional[List[MlpSpec]] = None
    decoders: Optional[List[MlpSpec]] = None
    fusion: Optional[FusionSpec] = None
    alignment: Optional[AlignSpec] = None
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)
    reconstruction: Literal["l2", "l1"] = "l2"
    seed: int = 0

    @model_validator(mode="before")
    @classmethod
    def _default_subspecs(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        method = data.get("method")
        if method in FUSION_METHODS:
            data["fusion"] = _with_kind(data.get("fusion"), method)
        elif method in ALIGNMENT_METHODS:
            data["alignment"] = _with_kind(data.get("alignment"), method)
        elif method == "PPRD" and data.get("fusion") is None:
            data["fusion"] = {"kind": "SUM"}
        return data

    @model_validator(mode="after")
    def _exact_subspecs(self) -> "MethodConfig":
        method = self.method
        if method in FUSION_METHODS:
            if self.fusion is None or self.fusion.kind != method:
                raise ValueError(f"{method} needs a fusion spec of kind {method}")
            if self.alignment is not None:
                raise ValueError(f"{method} takes no alignment spec")
        elif method in ALIGNMENT_METHODS:
            if self.alignment is None or self.alignment.kind != method:
                raise ValueError(f"{method} needs an alignment spec of kind {method}")
            if self.fusion is not None:
                raise ValueError(f"{method} takes no fusion spec")
        elif method == "PPRD":
            if self.fusion is None or self.fusion.kind not in PREDICTION_FUSIONS:
                raise ValueError(f"PPRD fuses with one of {PREDICTION_FUSIONS}")
            if self.alignment is not None:
                raise ValueError("PPRD takes no alignment spec")
        elif self.fusion is not None or self.alignment is not None:
            raise ValueError(f"{method} takes neither a fusion nor an alignment spec")
        return self


def _with_kind(spec, kind: str):
    if spec is None:
        return {"kind": kind}
    if isinstance(spec, dict):
        return {**spec, "kind": spec.get("kind", kind)}
    return spec


@dataclass(frozen=True)
class ViewPartition:
    """Input view indices P and target view indices Q of a generative pretext round."""

    inputs: FrozenSet[int]
    targets: FrozenSet[int]

    def __post_init__(self):
        if self.inputs == self.targets:
            raise ValueError("Input and target view sets must differ")
        if not self.inputs or not self.targets:
            raise ValueError("Input and target view sets must be non-empty")

    def covers(self, n_views: int) -> bool:
        return (self.inputs | self.targets) == frozenset(range(n_views))


def prediction_partitions(method: str, n_views: int) -> List[ViewPartition]:
    """One partition per round: PPRD predicts view v from the rest, SPRD all views from v."""
    everything = frozenset(range(n_views))
    if method == "PPRD":
        partitions = [ViewPartition(everything - {v}, frozenset({v})) for v in range(n_views)]
    elif method == "SPRD":
        partitions = [ViewPartition(frozenset({v}), everything) for v in range(n_views)]
    else:
        raise ValueError(f"{method} is not a prediction method")
    for partition in partitions:
        if not partition.covers(n_views):
            raise ValueError(f"Partition {partition} does not cover {n_views} views")
    return partitions


@dataclass
class Model:
    """A trained baseline: architecture, named parameters and DSVDD centers."""

    config: MethodConfig
    view_dims: List[int]
    encoders: List[MlpSpec]
    decoders: List[MlpSpec]
    params: Dict[str, Tensor]
    centers: Optional[List[Tensor]] = None
    norm_stats: Optional[NormStats] = None
    history: List[float] = field(default_factory=list)
    round_counts: List[List[int]] = field(default_factory=list)

    @property
    def method(self) -> str:
        return self.config.method

    @property
    def n_views(self) -> int:
        return len(self.view_dims)

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))


# ============================================================================
# Architecture
# ============================================================================


def default_encoder(dim: int, embedding_dim: int, use_bias: bool = True) -> MlpSpec:
    return MlpSpec(
        widths=[dim, max(64, dim // 2), embedding_dim],
        activation="tanh",
        use_bias=use_bias,
        output_activation="linear",
    )


def default_decoder(dim: int, embedding_dim: int) -> MlpSpec:
    return MlpSpec(
        widths=[embedding_dim, max(64, dim // 2), dim],
        activation="tanh",
        output_activation="linear",
    )


def resolve_architecture(
    config: MethodConfig, dims: Sequence[int]
) -> Tuple[List[MlpSpec], List[MlpSpec]]:
    """
    Per-view encoder and decoder specs, defaults filled in from the view dimensions.

    Raises:
        ConfigError: If explicit specs do not fit the data or the method
    """
    n_views = len(dims)
    dsv = config.method == "DSV"
    encoders = config.encoders or [
        default_encoder(d, config.embedding_dim, use_bias=not dsv) for d in dims
    ]
    decoders = config.decoders or [default_decoder(d, config.embedding_dim) for d in dims]
    if len(encoders) != n_views or len(decoders) != n_views:
        raise ConfigError(f"{len(encoders)} encoders / {len(decoders)} decoders for {n_views} views")
    for v, (enc, dec, dim) in enumerate(zip(encoders, decoders, dims)):
        if enc.widths[0] != dim or dec.widths[-1] != dim:
            raise ConfigError(f"View {v}: encoder/decoder widths do not match input dim {dim}")
        if enc.widths[-1] != config.embedding_dim or dec.widths[0] != config.embedding_dim:
            raise ConfigError(f"View {v}: encoders must emit and decoders accept dim {config.embedding_dim}")
        if dsv and enc.use_bias:
            raise ConfigError("DSV encoders must be bias-free")
    return list(encoders), list(decoders)


def _encode(encoders: List[MlpSpec], store: Dict[str, Tensor], v: int, x, graph: Graph) -> Node:
    return mlp_forward(Params.from_named(f"enc{v}", store, encoders[v]), encoders[v], x, graph)


def _decode(decoders: List[MlpSpec], store: Dict[str, Tensor], v: int, h: Node, graph: Graph) -> Node:
    return mlp_forward(Params.from_named(f"dec{v}", store, decoders[v]), decoders[v], h, graph)


def _error(x_hat: Node, x: Tensor, graph: Graph, kind: str) -> Node:
    """Batch-summed reconstruction error."""
    residual = ad.sub(x_hat, graph.constant(x))
    if kind == "l1":
        return ad.reduce_sum(ad.absolute(residual))
    return ad.sum_of_squares(residual)


def _row_error(x_hat: Tensor, x: Tensor, kind: str) -> Tensor:
    residual = x_hat - x
    if kind == "l1":
        return np.sum(np.abs(residual), axis=1)
    return np.sum(residual * residual, axis=1)


def _total(nodes: Sequence[Node]) -> Node:
    total = nodes[0]
    for node in nodes[1:]:
        total = ad.add(total, node)
    return total


def _joint_embedding(config: MethodConfig, embeddings: List[Node], graph: Graph, store) -> Node:
    if len(embeddings) == 1:
        return embeddings[0]
    return fuse(config.fusion, embeddings, graph, store)


# ============================================================================
# Losses
# ============================================================================


def _fusion_loss(config, encoders, decoders) -> LossFn:
    def loss(store, batch, graph):
        embeddings = [_encode(encoders, store, v, x, graph) for v, x in enumerate(batch)]
        joint = fuse(config.fusion, embeddings, graph, store)
        return _total(
            [_error(_decode(decoders, store, v, joint, graph), x, graph, config.reconstruction)
             for v, x in enumerate(batch)]
        )

    return loss


def _alignment_loss(config, encoders, decoders) -> LossFn:
    def loss(store, batch, graph):
        embeddings = [_encode(encoders, store, v, x, graph) for v, x in enumerate(batch)]
        reconstruction = _total(
            [_error(_decode(decoders, store, v, h, graph), x, graph, config.reconstruction)
             for v, (h, x) in enumerate(zip(embeddings, batch))]
        )
        measure = alignment_measure(config.alignment, embeddings, graph, warn=False)
        return combined_loss(config.alignment, reconstruction, measure, graph)

    return loss


def _autoencoder_loss(config, encoders, decoders) -> LossFn:
    def loss(store, batch, graph):
        terms = []
        for v, x in enumerate(batch):
            x_hat = _decode(decoders, store, v, _encode(encoders, store, v, x, graph), graph)
            terms.append(ad.scale(_error(x_hat, x, graph, config.reconstruction), 1.0 / x.shape[0]))
        return _total(terms)

    return loss


def _center_loss(encoders, centers: List[Tensor]) -> LossFn:
    def loss(store, batch, graph):
        terms = []
        for v, x in enumerate(batch):
            offset = ad.sub(_encode(encoders, store, v, x, graph), graph.constant(centers[v]))
            terms.append(ad.scale(ad.sum_of_squares(offset), 1.0 / x.shape[0]))
        return _total(terms)

    return loss


def _prediction_loss(config, encoders, decoders, partition: ViewPartition) -> LossFn:
    inputs, targets = sorted(partition.inputs), sorted(partition.targets)

    def loss(store, batch, graph):
        embeddings = [_encode(encoders, store, v, batch[v], graph) for v in inputs]
        joint = _joint_embedding(config, embeddings, graph, store)
        return _total(
            [_error(_decode(decoders, store, j, joint, graph), batch[j], graph, config.reconstruction)
             for j in targets]
        )

    return loss


# ============================================================================
# Training
# ============================================================================


def _optimize(
    store: Dict[str, Tensor],
    keys: Sequence[str],
    rounds: Sequence[LossFn],
    views: List[Tensor],
    settings: OptimizerSettings,
    epochs: int,
    rng: Rng,
    label: str,
    round_counts: Optional[List[List[int]]] = None,
) -> List[float]:
    """
    Minibatch Adam over ``keys``; every batch runs one optimizer step per round.

    Updates ``store`` in place and returns the mean loss of every epoch.
    """
    trainable = {k: store[k] for k in keys}
    state = OptState.create(trainable, settings.lr, settings.weight_decay)
    n_rows = views[0].shape[0]
    n_batches = max(1, n_rows // min(settings.batch_size, n_rows))
    history = []
    ill_conditioned = 0
    for epoch in range(epochs):
        batches = np.array_split(rng.permutation(n_rows), n_batches)
        total, steps = 0.0, 0
        counts = [0] * len(rounds)
        for rows in batches:
            batch = [view[rows] for view in views]
            for r, loss_fn in enumerate(rounds):
                graph = Graph()
                loss = loss_fn({**store, **trainable}, batch, graph)
                value = float(loss.value)
                if not math.isfinite(value):
                    raise DivergenceError(f"{label}: loss became {value}", epoch)
                if loss.diagnostics:
                    if not ill_conditioned:
                        for note in loss.diagnostics:
                            logger.warning(f"{label}: {note}")
                            warnings.warn(f"{label}: {note}", ConditioningWarning, stacklevel=2)
                    ill_conditioned += 1
                named = graph.named_gradients(backward(graph, loss))
                grads = {k: named.get(k, np.zeros_like(t)) for k, t in trainable.items()}
                trainable, state = adam_step(trainable, grads, state)
                total += value
                steps += 1
                counts[r] += 1
        history.append(total / steps)
        if round_counts is not None:
            round_counts.append(counts)
        logger.debug(f"{label} epoch {epoch + 1}/{epochs}: loss {history[-1]:.6g}")
    if ill_conditioned > 1:
        logger.info(f"{label}: ill-conditioned covariances on {ill_conditioned} optimizer steps")
    store.update(trainable)
    return history


def dsvdd_init_center(embeddings: Tensor, eps: float = CENTER_EPS) -> Tensor:
    """
    Column mean of the embeddings, with near-zero entries pushed to +/-eps.

    Entries with |c_i| < eps become eps carrying the entry's sign (+eps for exact zero).
    """
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if embeddings.shape[0] < 1:
        raise DataError("Cannot initialize a center from zero embeddings")
    center = embeddings.mean(axis=0)
    small = np.abs(center) < eps
    center[small & (center < 0)] = -eps
    center[small & (center >= 0)] = eps
    return center


def _embed_all(encoders, store, v: int, x: Tensor) -> Tensor:
    graph = Graph()
    return _encode(encoders, store, v, x, graph).value


def _validate_views(views: Sequence, label: str) -> List[Tensor]:
    if not views:
        raise DataError(f"{label}: no views given")
    checked = []
    for v, view in enumerate(views):
        array = as_tensor(view, f"{label} view {v}")
        if array.ndim != 2 or array.shape[0] == 0 or array.shape[1] == 0:
            raise DataError(f"{label}: view {v} is empty or not a matrix (shape {array.shape})")
        checked.append(array)
    rows = [a.shape[0] for a in checked]
    if len(set(rows)) > 1:
        raise DataError(f"{label}: views are not row-aligned, row counts {rows}")
    return checked


def train(
    config: MethodConfig,
    train_views: Sequence[Tensor],
    norm_stats: Optional[NormStats] = None,
) -> Model:
    """
    Train one baseline on row-aligned training views.

    Args:
        config: Method configuration
        train_views: V matrices (N_train x d_v) of positive-class data
        norm_stats: Normalization statistics to keep with the model

    Returns:
        Trained Model

    Raises:
        DataError: If a view is empty or views are not row-aligned
        DivergenceError: If the loss becomes NaN/Inf
    """
    views = _validate_views(train_views, "train")
    n_views = len(views)
    if n_views < 2 and config.method not in PER_VIEW_METHODS:
        raise DataError(f"{config.method} needs at least 2 views, got {n_views}")
    dims = [view.shape[1] for view in views]
    encoders, decoders = resolve_architecture(config, dims)

    rng = Rng(config.seed)
    store: Dict[str, Tensor] = {}
    for v in range(n_views):
        store.update(init_mlp(encoders[v], rng, prefix=f"enc{v}").named())
        store.update(init_mlp(decoders[v], rng, prefix=f"dec{v}").named())
    if config.method in FUSION_METHODS:
        store.update(init_fusion(config.fusion, n_views, config.embedding_dim, rng))

    model = Model(
        config=config,
        view_dims=dims,
        encoders=encoders,
        decoders=decoders,
        params=store,
        norm_stats=norm_stats,
    )
    settings = config.optimizer
    label = f"{config.method}"
    logger.info(
        f"Training {label}: V={n_views}, N={views[0].shape[0]}, dims={dims}, "
        f"{model.parameter_count()} parameters, {settings.epochs} epochs"
    )
    all_keys = list(store)

    if config.method in FUSION_METHODS:
        model.history = _optimize(
            store, all_keys, [_fusion_loss(config, encoders, decoders)], views, settings,
            settings.epochs, rng, label,
        )
    elif config.method in ALIGNMENT_METHODS:
        model.history = _optimize(
            store, all_keys, [_alignment_loss(config, encoders, decoders)], views, settings,
            settings.epochs, rng, label,
        )
    elif config.method == "DAE":
        model.history = _optimize(
            store, all_keys, [_autoencoder_loss(config, encoders, decoders)], views, settings,
            settings.epochs, rng, label,
        )
    elif config.method == "DSV":
        if settings.pretrain_epochs:
            _optimize(
                store, all_keys, [_autoencoder_loss(config, encoders, decoders)], views, settings,
                settings.pretrain_epochs, rng, f"{label} pretrain",
            )
        model.centers = [
            dsvdd_init_center(_embed_all(encoders, store, v, x)) for v, x in enumerate(views)
        ]
        encoder_keys = [k for k in store if k.startswith("enc")]
        model.history = _optimize(
            store, encoder_keys, [_center_loss(encoders, model.centers)], views, settings,
            settings.epochs, rng, label,
        )
    else:
        rounds = [
            _prediction_loss(config, encoders, decoders, partition)
            for partition in prediction_partitions(config.method, n_views)
        ]
        model.history = _optimize(
            store, all_keys, rounds, views, settings, settings.epochs, rng, label,
            round_counts=model.round_counts,
        )

    logger.info(f"Trained {label}: first epoch loss {model.history[0]:.6g}, last {model.history[-1]:.6g}")
    return model


# ============================================================================
# Scoring
# ============================================================================


def score(model: Model, test_views: Sequence[Tensor]) -> Tensor:
    """
    Per-view anomaly scores (N_test x V); higher means more anomalous.

    Reconstruction methods emit the per-view error divided by d_v, DSV the squared
    distance to the view's center divided by D, PPRD column v the error of predicting
    view v from the other views, SPRD column v the mean over target views of the error
    of generating them from view v.

    Raises:
        ShapeError: If the number of views or a view dimension differs from training
    """
    views = _validate_views(test_views, "score")
    dims = [view.shape[1] for view in views]
    if dims != model.view_dims:
        raise ShapeError(f"Test view dims {dims} do not match training dims {model.view_dims}")

    config, store = model.config, model.params
    encoders, decoders = model.encoders, model.decoders
    kind = config.reconstruction
    graph = Graph()
    columns = []

    if config.method in FUSION_METHODS:
        embeddings = [_encode(encoders, store, v, x, graph) for v, x in enumerate(views)]
        joint = fuse(config.fusion, embeddings, graph, store)
        for v, x in enumerate(views):
            x_hat = _decode(decoders, store, v, joint, graph).value
            columns.append(_row_error(x_hat, x, kind) / dims[v])
    elif config.method in ALIGNMENT_METHODS or config.method == "DAE":
        for v, x in enumerate(views):
            x_hat = _decode(decoders, store, v, _encode(encoders, store, v, x, graph), graph)
            columns.append(_row_error(x_hat.value, x, kind) / dims[v])
    elif config.method == "DSV":
        for v, x in enumerate(views):
            embedding = _encode(encoders, store, v, x, graph).value
            offset = embedding - model.centers[v]
            columns.append(np.sum(offset * offset, axis=1) / embedding.shape[1])
    elif config.method == "PPRD":
        for partition in prediction_partitions("PPRD", len(views)):
            (target,) = partition.targets
            embeddings = [
                _encode(encoders, store, u, views[u], graph) for u in sorted(partition.inputs)
            ]
            joint = _joint_embedding(config, embeddings, graph, store)
            prediction = _decode(decoders, store, target, joint, graph).value
            columns.append(_row_error(prediction, views[target], kind) / dims[target])
    else:
        for partition in prediction_partitions("SPRD", len(views)):
            (source,) = partition.inputs
            embedding = _encode(encoders, store, source, views[source], graph)
            errors = [
                _row_error(_decode(decoders, store, j, embedding, graph).value, views[j], kind) / dims[j]
                for j in sorted(partition.targets)
            ]
            columns.append(np.mean(errors, axis=0))

    scores = np.stack(columns, axis=1)
    if not np.all(np.isfinite(scores)):
        raise NumericalError(f"{config.method} produced non-finite scores")
    return scores
