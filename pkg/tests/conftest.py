"""Shared fixtures for the mvocc test suite."""

from typing import Callable

import numpy as np
import pytest

from mvocc.autodiff import Graph, backward
from mvocc.synth import SynthSpec, synth_generate

FD_EPS = 1e-5


def numeric_gradient(fn: Callable[[np.ndarray], float], value: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central finite differences of a scalar function of one array."""
    grad = np.zeros_like(value)
    for index in np.ndindex(value.shape):
        plus, minus = value.copy(), value.copy()
        plus[index] += eps
        minus[index] -= eps
        grad[index] = (fn(plus) - fn(minus)) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def fd_gradient():
    return numeric_gradient


@pytest.fixture
def rel_error():
    return relative_error


@pytest.fixture
def check_store_gradients():
    """
    Compare autodiff gradients of ``loss_fn(store, batch, graph)`` with finite differences
    for every tensor in ``store``; returns the worst relative error.
    """

    def check(loss_fn, store, batch):
        graph = Graph()
        loss = loss_fn(store, batch, graph)
        analytic = graph.named_gradients(backward(graph, loss))
        worst = 0.0
        for name, tensor in store.items():

            def value_at(candidate, name=name):
                trial = {**store, name: candidate}
                return float(loss_fn(trial, batch, Graph()).value)

            numeric = numeric_gradient(value_at, tensor)
            worst = max(worst, relative_error(analytic.get(name, np.zeros_like(tensor)), numeric))
        return worst

    return check


@pytest.fixture(scope="session")
def separable_dataset():
    """Two-view synthetic data with a 6-sigma latent shift."""
    return synth_generate(SynthSpec(name="separable", dims=[10, 10], n_positive=200, n_negative=150, seed=3))


@pytest.fixture
def tiny_views():
    rng = np.random.default_rng(0)
    return [rng.normal(size=(24, 5)), rng.normal(size=(24, 4))]
