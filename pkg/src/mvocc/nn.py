"""MLP encoders/decoders, parameter initialization and the Adam optimizer."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Mapping, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from . import autodiff as ad
from .autodiff import Graph, Node
from .errors import ShapeError
from .tensor import Rng, Tensor

logger = logging.getLogger(__name__)

Activation = Literal["tanh", "relu", "sigmoid", "linear"]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class MlpSpec(BaseModel):
    """Layer widths and activations of a fully connected network."""

    widths: List[int] = Field(min_length=2, description="input -> hidden... -> output")
    activation: Union[Activation, List[Activation]] = "tanh"
    use_bias: bool = True
    output_activation: Activation = "linear"

    @field_validator("widths")
    @classmethod
    def _positive_widths(cls, widths: List[int]) -> List[int]:
        if any(w <= 0 for w in widths):
            raise ValueError(f"All widths must be positive, got {widths}")
        return widths

    @model_validator(mode="after")
    def _activation_count(self) -> "MlpSpec":
        if isinstance(self.activation, list) and len(self.activation) != self.n_layers - 1:
            raise ValueError(
                f"{len(self.activation)} hidden activations given for {self.n_layers - 1} hidden layers"
            )
        return self

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layer_activation(self, layer: int) -> str:
        if layer == self.n_layers - 1:
            return self.output_activation
        if isinstance(self.activation, list):
            return self.activation[layer]
        return self.activation


@dataclass(frozen=True)
class Params:
    """Weights (fan_in x fan_out) and biases of one MLP, named under a prefix."""

    prefix: str
    weights: Tuple[Tensor, ...]
    biases: Tuple[Tensor, ...] = ()

    def weight_name(self, layer: int) -> str:
        return f"{self.prefix}.W{layer}"

    def bias_name(self, layer: int) -> str:
        return f"{self.prefix}.b{layer}"

    def named(self) -> Dict[str, Tensor]:
        named = {}
        for layer, weight in enumerate(self.weights):
            named[self.weight_name(layer)] = weight
            if self.biases:
                named[self.bias_name(layer)] = self.biases[layer]
        return named

    def count(self) -> int:
        return int(sum(t.size for t in self.weights) + sum(t.size for t in self.biases))

    @classmethod
    def from_named(cls, prefix: str, store: Mapping[str, Tensor], spec: MlpSpec) -> "Params":
        weights = tuple(store[f"{prefix}.W{i}"] for i in range(spec.n_layers))
        biases = tuple(store[f"{prefix}.b{i}"] for i in range(spec.n_layers)) if spec.use_bias else ()
        return cls(prefix=prefix, weights=weights, biases=biases)


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def init_mlp(spec: MlpSpec, rng: Rng, prefix: str = "mlp") -> Params:
    """
    Initialize an MLP with Glorot-uniform weights and zero biases.

    Args:
        spec: Network layout
        rng: Random stream (consumed in layer order)
        prefix: Name prefix for the parameter tensors

    Returns:
        Freshly initialized Params
    """
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        weights.append(glorot_uniform(rng, fan_in, fan_out, (fan_in, fan_out)))
        if spec.use_bias:
            biases.append(np.zeros(fan_out))
    return Params(prefix=prefix, weights=tuple(weights), biases=tuple(biases))


def mlp_forward(params: Params, spec: MlpSpec, x: Union[Node, Tensor], graph: Graph) -> Node:
    """
    Record an MLP forward pass on a graph.

    Args:
        params: Network parameters, registered as graph parameters by name
        spec: Network layout
        x: Input node or batch array (batch x d_in)
        graph: Graph to record on

    Returns:
        Output node (batch x d_out)

    Raises:
        ShapeError: If the input width does not match ``spec.widths[0]``
    """
    node = x if isinstance(x, Node) else graph.constant(x)
    if node.value is not None and (node.value.ndim != 2 or node.value.shape[1] != spec.widths[0]):
        raise ShapeError(
            f"{params.prefix}: input shape {tuple(node.value.shape)} does not match width {spec.widths[0]}"
        )
    for layer in range(spec.n_layers):
        weight = graph.parameter(params.weight_name(layer), params.weights[layer])
        node = ad.matmul(node, weight)
        if spec.use_bias:
            node = ad.add(node, graph.parameter(params.bias_name(layer), params.biases[layer]))
        node = ad.activate(node, spec.layer_activation(layer))
    return node


@dataclass
class OptState:
    """Adam moments, step counter and settings for one training run."""

    lr: float
    weight_decay: float = 0.0
    step: int = 0
    m: Dict[str, Tensor] = field(default_factory=dict)
    v: Dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Mapping[str, Tensor], lr: float, weight_decay: float = 0.0) -> "OptState":
        return cls(
            lr=lr,
            weight_decay=weight_decay,
            m={k: np.zeros_like(t) for k, t in params.items()},
            v={k: np.zeros_like(t) for k, t in params.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: OptState,
) -> Tuple[Dict[str, Tensor], OptState]:
    """
    One Adam update (beta1=0.9, beta2=0.999, eps=1e-8) with an L2 term.

    When ``state.weight_decay`` is positive, lambda * theta is added to the raw gradient
    before the moment updates.

    Args:
        params: Named parameter tensors to update
        grads: Gradients keyed like ``params``
        state: Optimizer state (not mutated)

    Returns:
        (updated parameters, new optimizer state)

    Raises:
        ShapeError: If a gradient is missing or its shape differs from the parameter
    """
    step = state.step + 1
    new_params, new_m, new_v = {}, dict(state.m), dict(state.v)
    correction1 = 1.0 - ADAM_BETA1**step
    correction2 = 1.0 - ADAM_BETA2**step
    for name, theta in params.items():
        grad = grads.get(name)
        if grad is None or grad.shape != theta.shape:
            got = None if grad is None else tuple(grad.shape)
            raise ShapeError(f"Gradient for '{name}' has shape {got}, expected {tuple(theta.shape)}")
        if state.weight_decay > 0:
            grad = grad + state.weight_decay * theta
        m = ADAM_BETA1 * state.m.get(name, np.zeros_like(theta)) + (1.0 - ADAM_BETA1) * grad
        v = ADAM_BETA2 * state.v.get(name, np.zeros_like(theta)) + (1.0 - ADAM_BETA2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[name] = m
        new_v[name] = v
    new_state = OptState(lr=state.lr, weight_decay=state.weight_decay, step=step, m=new_m, v=new_v)
    return new_params, new_state
